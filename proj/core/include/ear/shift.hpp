#pragma once

#include <cstdint>
#include <string>

#include "ear/tensor.hpp"

namespace ear {

// Where the shift sits relative to a residual block. residual_branch keeps
// the identity path untouched and shifts only the convolutional branch
// input; in_place shifts the block input as a whole.
enum class ShiftPlacement { residual_branch, in_place };

std::string to_string(ShiftPlacement p);
ShiftPlacement shift_placement_from_string(const std::string& s);

struct ShiftConfig {
  bool enabled = true;
  std::int64_t shift_div = 8;
  ShiftPlacement placement = ShiftPlacement::residual_branch;
  std::int64_t segments = 8;

  // Throws ConfigError on violation: segments >= 1, and when enabled,
  // shift_div >= 2 so both temporal directions are representable.
  void validate() const;
};

// Number of channels moved in each temporal direction: floor(C / shift_div).
// Remainder channels join the unshifted group, so the two directional groups
// stay equal-sized. fold == 0 degenerates to the identity.
std::int64_t shift_fold(std::int64_t channels, std::int64_t shift_div);

// The temporal shift: pure data movement along the time axis of a rank-5
// clip (N,T,C,H,W). With fold = floor(C/shift_div):
//   out[n, t, c, :, :] = in[n, t+1, c, :, :]   for c in [0, fold)      (zero at t = T-1)
//   out[n, t, c, :, :] = in[n, t-1, c, :, :]   for c in [fold, 2*fold) (zero at t = 0)
//   out[n, t, c, :, :] = in[n, t,   c, :, :]   otherwise
// Boundaries are zero-filled, never wrapped. Out-of-place: the input is not
// mutated. No arithmetic is performed on the values.
Tensor temporal_shift(const Tensor& clip, std::int64_t shift_div);

// Adjoint of temporal_shift, i.e. the temporal shift with the two directions
// swapped. This is the gradient propagation rule: if y = temporal_shift(x)
// then dL/dx = temporal_shift_adjoint(dL/dy).
Tensor temporal_shift_adjoint(const Tensor& grad_out, std::int64_t shift_div);

// Residual composition contract around an arbitrary branch function
// F : Tensor -> Tensor (same shape in and out).
//   residual_branch: y = x + F(temporal_shift(x))
//   in_place:        y = shifted + F(shifted), shifted = temporal_shift(x)
// When the config is disabled (or fold is zero) the shift drops out and this
// is a plain residual application. Trainable residual blocks in the network
// follow the same placement semantics (see ear::nn).
template <typename BranchFn>
Tensor shifted_residual(const Tensor& clip, const ShiftConfig& config,
                        BranchFn&& branch) {
  if (!config.enabled) {
    Tensor y = branch(clip);
    y.add_scaled(clip, 1.0);
    return y;
  }
  Tensor shifted = temporal_shift(clip, config.shift_div);
  if (config.placement == ShiftPlacement::in_place) {
    Tensor y = branch(shifted);
    y.add_scaled(shifted, 1.0);
    return y;
  }
  Tensor y = branch(shifted);
  y.add_scaled(clip, 1.0);
  return y;
}

}  // namespace ear
