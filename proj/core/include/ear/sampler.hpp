#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ear/image_io.hpp"
#include "ear/manifest.hpp"
#include "ear/tensor.hpp"

namespace ear {

enum class SampleMode { train_random, eval_center };

std::string to_string(SampleMode m);
SampleMode sample_mode_from_string(const std::string& s);

struct SampleSpec {
  std::int64_t segments = 8;
  SampleMode mode = SampleMode::eval_center;
  // Seeds the train_random stream; sampling is fully deterministic for a
  // fixed seed. Ignored by eval_center, which is a pure function of
  // (frame_count, segments).
  std::uint64_t seed = 0;

  void validate() const;
};

enum class CropMode { center };

std::string to_string(CropMode m);
CropMode crop_mode_from_string(const std::string& s);

struct CropSpec {
  std::int64_t resize_short_side = 256;
  std::int64_t crop_size = 224;
  CropMode crop_mode = CropMode::center;
  std::array<double, 3> mean = {0.485, 0.456, 0.406};
  std::array<double, 3> stddev = {0.229, 0.224, 0.225};

  void validate() const;
};

// One frame index per segment, non-decreasing, each in [0, frame_count).
// Segment i covers the half-open frame range [floor(i*L/K), floor((i+1)*L/K)).
//   eval_center:  index_i = floor(i*L/K) + floor(L/(2K)), clamped to [0, L)
//   train_random: one uniform index inside segment i's range, or the segment
//                 start when the range is empty (L < K repeats frames).
std::vector<std::int64_t> sample_indices(std::int64_t frame_count,
                                         const SampleSpec& spec);

std::filesystem::path frame_path(const std::filesystem::path& frame_dir,
                                 std::int64_t index);

// Caches decoded-and-resized frame stores so repeated epochs do not pay the
// JPEG decode again. Thread-safe; concurrent loaders may share one cache.
class FrameCache {
 public:
  using Frames = std::vector<Image>;

  std::shared_ptr<const Frames> get(const ManifestEntry& entry,
                                    std::int64_t resize_short_side);

 private:
  std::mutex mutex_;
  std::map<std::pair<std::string, std::int64_t>, std::shared_ptr<const Frames>>
      store_;
};

// Samples `spec.segments` frames from the entry's frame store and assembles
// a normalized clip of shape (1, segments, 3, crop_size, crop_size).
// Pixel values map to (v/255 - mean) / stddev per channel.
//
// eval_center takes a single center crop. train_random takes a seeded random
// crop of crop_size from the resized frame plus a seeded random horizontal
// flip, shared across the clip's segments. Frame indices and crop/flip draw
// from independent substreams of spec.seed.
Tensor load_clip(const ManifestEntry& entry, const SampleSpec& spec,
                 const CropSpec& crop, FrameCache* cache = nullptr);

}  // namespace ear
