#include "ear/shift.hpp"

#include <cstring>

#include "ear/errors.hpp"

namespace ear {

std::string to_string(ShiftPlacement p) {
  return p == ShiftPlacement::residual_branch ? "residual_branch" : "in_place";
}

ShiftPlacement shift_placement_from_string(const std::string& s) {
  if (s == "residual_branch") return ShiftPlacement::residual_branch;
  if (s == "in_place") return ShiftPlacement::in_place;
  throw ConfigError("unknown shift placement: '" + s + "'");
}

void ShiftConfig::validate() const {
  if (segments < 1) {
    throw ConfigError("shift: segments must be >= 1, got " +
                      std::to_string(segments));
  }
  if (enabled && shift_div < 2) {
    throw ConfigError(
        "shift: shift_div must be >= 2 when the shift is enabled, got " +
        std::to_string(shift_div));
  }
}

std::int64_t shift_fold(std::int64_t channels, std::int64_t shift_div) {
  if (shift_div < 1) {
    throw ConfigError("shift_div must be >= 1, got " +
                      std::to_string(shift_div));
  }
  return channels / shift_div;
}

namespace {

// Shared kernel for temporal_shift and its adjoint. The adjoint is the same
// data movement with the two channel groups' directions swapped.
Tensor shift_impl(const Tensor& clip, std::int64_t shift_div, bool adjoint) {
  if (clip.rank() != 5) {
    throw ShapeError("temporal_shift expects a rank-5 (N,T,C,H,W) clip, got " +
                     clip.shape_str());
  }
  const std::int64_t fold = shift_fold(clip.dim(2), shift_div);

  const std::int64_t batch = clip.dim(0);
  const std::int64_t time = clip.dim(1);
  const std::int64_t channels = clip.dim(2);
  const std::int64_t plane = clip.dim(3) * clip.dim(4);

  // shift_div = 1 puts every channel in group 0; the groups are clamped so
  // they never overrun the channel axis.
  const std::int64_t group0 = std::min(fold, channels);
  const std::int64_t group1 = std::min(fold, channels - group0);
  const std::int64_t rest = channels - group0 - group1;

  Tensor out(clip.shape());
  const Scalar* src = clip.data();
  Scalar* dst = out.data();

  const std::int64_t chan_stride = plane;
  const std::int64_t time_stride = channels * plane;
  const std::int64_t batch_stride = time * time_stride;

  // Group 0 pulls from t+1, group 1 from t-1; the adjoint swaps them.
  const std::int64_t group0_delta = adjoint ? -1 : +1;
  const std::int64_t group1_delta = -group0_delta;

  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t t = 0; t < time; ++t) {
      const Scalar* src_t = src + n * batch_stride + t * time_stride;
      Scalar* dst_t = dst + n * batch_stride + t * time_stride;

      const std::int64_t t0 = t + group0_delta;
      if (group0 > 0 && t0 >= 0 && t0 < time) {
        std::memcpy(dst_t, src + n * batch_stride + t0 * time_stride,
                    sizeof(Scalar) * static_cast<std::size_t>(group0 * plane));
      }
      const std::int64_t t1 = t + group1_delta;
      if (group1 > 0 && t1 >= 0 && t1 < time) {
        std::memcpy(dst_t + group0 * chan_stride,
                    src + n * batch_stride + t1 * time_stride +
                        group0 * chan_stride,
                    sizeof(Scalar) * static_cast<std::size_t>(group1 * plane));
      }
      if (rest > 0) {
        std::memcpy(dst_t + (group0 + group1) * chan_stride,
                    src_t + (group0 + group1) * chan_stride,
                    sizeof(Scalar) * static_cast<std::size_t>(rest * plane));
      }
    }
  }
  return out;
}

}  // namespace

Tensor temporal_shift(const Tensor& clip, std::int64_t shift_div) {
  return shift_impl(clip, shift_div, /*adjoint=*/false);
}

Tensor temporal_shift_adjoint(const Tensor& grad_out, std::int64_t shift_div) {
  return shift_impl(grad_out, shift_div, /*adjoint=*/true);
}

}  // namespace ear
