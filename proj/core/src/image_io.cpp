#include "ear/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ear/errors.hpp"

namespace fs = std::filesystem;

namespace ear {

namespace {

Image from_mat_rgb(const cv::Mat& rgb) {
  Image img;
  img.height = rgb.rows;
  img.width = rgb.cols;
  img.pixels.resize(static_cast<std::size_t>(rgb.rows) *
                    static_cast<std::size_t>(rgb.cols) * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    std::copy(row, row + static_cast<std::size_t>(rgb.cols) * 3,
              img.pixels.begin() +
                  static_cast<std::size_t>(y) * static_cast<std::size_t>(rgb.cols) * 3);
  }
  return img;
}

cv::Mat to_mat_rgb(const Image& image) {
  cv::Mat rgb(static_cast<int>(image.height), static_cast<int>(image.width),
              CV_8UC3);
  for (int y = 0; y < rgb.rows; ++y) {
    auto* row = rgb.ptr<std::uint8_t>(y);
    std::copy(image.pixels.begin() +
                  static_cast<std::size_t>(y) * static_cast<std::size_t>(rgb.cols) * 3,
              image.pixels.begin() +
                  static_cast<std::size_t>(y + 1) * static_cast<std::size_t>(rgb.cols) * 3,
              row);
  }
  return rgb;
}

}  // namespace

Image make_image(std::int64_t height, std::int64_t width, std::uint8_t r,
                 std::uint8_t g, std::uint8_t b) {
  Image img;
  img.height = height;
  img.width = width;
  img.pixels.resize(static_cast<std::size_t>(height * width * 3));
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

Image read_image(const fs::path& file) {
  if (!fs::exists(file)) {
    throw IngestError("frame file missing: " + file.string());
  }
  cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IngestError("cannot decode image: " + file.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat_rgb(rgb);
}

void write_image_jpeg(const Image& image, const fs::path& file, int quality) {
  cv::Mat rgb = to_mat_rgb(image);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, quality};
  if (!cv::imwrite(file.string(), bgr, params)) {
    throw IngestError("cannot write image: " + file.string());
  }
}

Image resize_short_side(const Image& image, std::int64_t short_side) {
  if (short_side < 1) {
    throw ConfigError("resize_short_side must be >= 1");
  }
  const std::int64_t cur = std::min(image.height, image.width);
  if (cur == short_side) return image;
  const double scale = static_cast<double>(short_side) / static_cast<double>(cur);
  const auto new_h = static_cast<int>(std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::lround(image.height * scale))));
  const auto new_w = static_cast<int>(std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::lround(image.width * scale))));
  cv::Mat src = to_mat_rgb(image);
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(new_w, new_h), 0.0, 0.0, cv::INTER_LINEAR);
  return from_mat_rgb(dst);
}

Image crop_image(const Image& image, std::int64_t x0, std::int64_t y0,
                 std::int64_t width, std::int64_t height) {
  if (x0 < 0 || y0 < 0 || x0 + width > image.width ||
      y0 + height > image.height) {
    throw ShapeError("crop rectangle out of bounds");
  }
  Image out;
  out.height = height;
  out.width = width;
  out.pixels.resize(static_cast<std::size_t>(height * width * 3));
  for (std::int64_t y = 0; y < height; ++y) {
    const auto* src = image.pixels.data() + ((y0 + y) * image.width + x0) * 3;
    std::copy(src, src + width * 3, out.pixels.data() + y * width * 3);
  }
  return out;
}

Image hflip_image(const Image& image) {
  Image out;
  out.height = image.height;
  out.width = image.width;
  out.pixels.resize(image.pixels.size());
  for (std::int64_t y = 0; y < image.height; ++y) {
    for (std::int64_t x = 0; x < image.width; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
      }
    }
  }
  return out;
}

}  // namespace ear
