#include "ear/sampler.hpp"

#include <algorithm>
#include <cstdio>

#include "ear/errors.hpp"
#include "ear/rng.hpp"

namespace fs = std::filesystem;

namespace ear {

std::string to_string(SampleMode m) {
  return m == SampleMode::train_random ? "train_random" : "eval_center";
}

SampleMode sample_mode_from_string(const std::string& s) {
  if (s == "train_random") return SampleMode::train_random;
  if (s == "eval_center") return SampleMode::eval_center;
  throw ConfigError("unknown sample mode: '" + s + "'");
}

std::string to_string(CropMode m) {
  (void)m;
  return "center";
}

CropMode crop_mode_from_string(const std::string& s) {
  if (s == "center") return CropMode::center;
  throw ConfigError("unknown crop mode: '" + s + "'");
}

void SampleSpec::validate() const {
  if (segments < 1) {
    throw ConfigError("sample: segments must be >= 1, got " +
                      std::to_string(segments));
  }
}

void CropSpec::validate() const {
  if (crop_size < 1 || resize_short_side < 1) {
    throw ConfigError("crop: sizes must be >= 1");
  }
  if (crop_size > resize_short_side) {
    throw ConfigError("crop: crop_size " + std::to_string(crop_size) +
                      " exceeds resize_short_side " +
                      std::to_string(resize_short_side));
  }
  for (double s : stddev) {
    if (s <= 0.0) throw ConfigError("crop: stddev entries must be positive");
  }
}

std::vector<std::int64_t> sample_indices(std::int64_t frame_count,
                                         const SampleSpec& spec) {
  spec.validate();
  if (frame_count < 1) {
    throw ConfigError("sample_indices: frame_count must be >= 1, got " +
                      std::to_string(frame_count));
  }
  const std::int64_t L = frame_count;
  const std::int64_t K = spec.segments;
  std::vector<std::int64_t> indices;
  indices.reserve(static_cast<std::size_t>(K));

  if (spec.mode == SampleMode::eval_center) {
    const std::int64_t half = L / (2 * K);  // floor((L/K)/2) in exact arithmetic
    for (std::int64_t i = 0; i < K; ++i) {
      indices.push_back(std::min(i * L / K + half, L - 1));
    }
    return indices;
  }

  auto rng = RngStream::substream(spec.seed, "sample");
  for (std::int64_t i = 0; i < K; ++i) {
    const std::int64_t lo = i * L / K;
    const std::int64_t hi = (i + 1) * L / K;
    indices.push_back(hi > lo ? rng.uniform_int(lo, hi) : lo);
  }
  return indices;
}

fs::path frame_path(const fs::path& frame_dir, std::int64_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "img_%05lld.jpg",
                static_cast<long long>(index));
  return frame_dir / name;
}

std::shared_ptr<const FrameCache::Frames> FrameCache::get(
    const ManifestEntry& entry, std::int64_t resize_to) {
  const auto key = std::make_pair(entry.frame_dir.string(), resize_to);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = store_.find(key);
    if (it != store_.end()) return it->second;
  }
  auto frames = std::make_shared<Frames>();
  frames->reserve(static_cast<std::size_t>(entry.frame_count));
  for (std::int64_t i = 0; i < entry.frame_count; ++i) {
    frames->push_back(
        resize_short_side(read_image(frame_path(entry.frame_dir, i)), resize_to));
  }
  std::lock_guard<std::mutex> lock(mutex_);
  auto [it, inserted] = store_.emplace(key, frames);
  return it->second;
}

namespace {

Image load_resized_frame(const ManifestEntry& entry, std::int64_t index,
                         std::int64_t resize_to,
                         const std::shared_ptr<const FrameCache::Frames>& cached) {
  if (cached) {
    return (*cached)[static_cast<std::size_t>(index)];
  }
  const fs::path path = frame_path(entry.frame_dir, index);
  if (!fs::exists(path)) {
    throw IngestError("missing frame " + path.filename().string() +
                      " for video '" + entry.video_id + "'");
  }
  return resize_short_side(read_image(path), resize_to);
}

}  // namespace

Tensor load_clip(const ManifestEntry& entry, const SampleSpec& spec,
                 const CropSpec& crop, FrameCache* cache) {
  crop.validate();
  if (entry.frame_count < 1) {
    throw IngestError("video '" + entry.video_id + "' has no frames");
  }
  const auto indices = sample_indices(entry.frame_count, spec);

  std::shared_ptr<const FrameCache::Frames> cached;
  if (cache) {
    try {
      cached = cache->get(entry, crop.resize_short_side);
    } catch (const IngestError& e) {
      throw IngestError(std::string(e.what()) + " (video '" + entry.video_id +
                        "')");
    }
  }

  const std::int64_t T = spec.segments;
  const std::int64_t S = crop.crop_size;
  Tensor clip({1, T, 3, S, S});

  // One crop window and one flip coin for the whole clip, drawn from a
  // substream independent of the frame-index stream.
  auto rng = RngStream::substream(spec.seed, "augment");

  std::int64_t crop_x = -1;
  std::int64_t crop_y = -1;
  bool flip = false;
  bool geometry_chosen = false;

  for (std::int64_t t = 0; t < T; ++t) {
    Image frame =
        load_resized_frame(entry, indices[static_cast<std::size_t>(t)],
                           crop.resize_short_side, cached);
    if (frame.width < S || frame.height < S) {
      throw IngestError("video '" + entry.video_id + "': resized frame " +
                        std::to_string(frame.width) + "x" +
                        std::to_string(frame.height) +
                        " is smaller than crop_size " + std::to_string(S));
    }
    if (!geometry_chosen) {
      if (spec.mode == SampleMode::train_random) {
        crop_x = rng.uniform_int(0, frame.width - S + 1);
        crop_y = rng.uniform_int(0, frame.height - S + 1);
        flip = rng.bernoulli(0.5);
      } else {
        crop_x = (frame.width - S) / 2;
        crop_y = (frame.height - S) / 2;
      }
      geometry_chosen = true;
    }
    if (frame.width < crop_x + S || frame.height < crop_y + S) {
      throw IngestError("video '" + entry.video_id +
                        "': frames have inconsistent sizes");
    }
    Image patch = crop_image(frame, crop_x, crop_y, S, S);
    if (flip) patch = hflip_image(patch);

    Scalar* dst = clip.data() + t * 3 * S * S;
    for (std::int64_t c = 0; c < 3; ++c) {
      const double m = crop.mean[static_cast<std::size_t>(c)];
      const double sd = crop.stddev[static_cast<std::size_t>(c)];
      for (std::int64_t y = 0; y < S; ++y) {
        for (std::int64_t x = 0; x < S; ++x) {
          dst[(c * S + y) * S + x] =
              (static_cast<double>(patch.at(y, x, c)) / 255.0 - m) / sd;
        }
      }
    }
  }
  return clip;
}

}  // namespace ear
