#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ear {

// 8-bit RGB image, HWC row-major.
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
};

Image make_image(std::int64_t height, std::int64_t width, std::uint8_t r,
                 std::uint8_t g, std::uint8_t b);

// Decodes an image file (JPEG in the canonical frame-store layout).
// Throws IngestError when the file is missing or cannot be decoded.
Image read_image(const std::filesystem::path& file);

// Encodes as JPEG. Quality 100 keeps solid-color fixtures bit-exact through
// the DCT round trip.
void write_image_jpeg(const Image& image, const std::filesystem::path& file,
                      int quality = 100);

// Scales so the shorter side equals `short_side`, preserving aspect ratio.
// Bilinear interpolation. No-op when the short side already matches.
Image resize_short_side(const Image& image, std::int64_t short_side);

Image crop_image(const Image& image, std::int64_t x0, std::int64_t y0,
                 std::int64_t width, std::int64_t height);

Image hflip_image(const Image& image);

}  // namespace ear
