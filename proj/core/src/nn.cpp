#include "ear/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ear/errors.hpp"

namespace ear::nn {

namespace {

using RowMat =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel,
                             std::int64_t stride, std::int64_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// Scatters image (C,H,W) patches into a (C*k*k, OH*OW) column matrix.
void im2col(const Scalar* x, std::int64_t C, std::int64_t H, std::int64_t W,
            std::int64_t k, std::int64_t stride, std::int64_t pad,
            std::int64_t OH, std::int64_t OW, Scalar* col) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        Scalar* dst = col + (((c * k) + ki) * k + kj) * OH * OW;
        for (std::int64_t oy = 0; oy < OH; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          Scalar* drow = dst + oy * OW;
          if (iy < 0 || iy >= H) {
            std::fill(drow, drow + OW, 0.0);
            continue;
          }
          const Scalar* srow = x + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            drow[ox] = (ix >= 0 && ix < W) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into the (C,H,W) image.
void col2im_accumulate(const Scalar* col, std::int64_t C, std::int64_t H,
                       std::int64_t W, std::int64_t k, std::int64_t stride,
                       std::int64_t pad, std::int64_t OH, std::int64_t OW,
                       Scalar* x) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const Scalar* src = col + (((c * k) + ki) * k + kj) * OH * OW;
        for (std::int64_t oy = 0; oy < OH; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          Scalar* drow = x + (c * H + iy) * W;
          const Scalar* srow = src + oy * OW;
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(who) + " expects (N,C,H,W), got " +
                     x.shape_str());
  }
}

}  // namespace

// ----------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels,
               std::int64_t kernel, std::int64_t stride, std::int64_t padding,
               std::int64_t groups, bool with_bias)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      groups_(groups) {
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv: channels must divide groups (" +
                      std::to_string(in_channels) + "/" +
                      std::to_string(out_channels) + " vs groups " +
                      std::to_string(groups) + ")");
  }
  weight = Parameter(Tensor({out_channels, in_channels / groups, kernel, kernel}));
  has_bias = with_bias;
  if (has_bias) bias = Parameter(Tensor({out_channels}));
}

void Conv2d::init_he_normal(RngStream& rng) {
  const double fan_in =
      static_cast<double>(in_channels_ / groups_ * kernel_ * kernel_);
  const double sd = std::sqrt(2.0 / fan_in);
  for (std::int64_t i = 0; i < weight.value.numel(); ++i) {
    weight.value[i] = sd * rng.normal();
  }
  if (has_bias) bias.value.zero();
}

Tensor Conv2d::forward(const Tensor& x) {
  require_rank4(x, "Conv2d");
  if (x.dim(1) != in_channels_) {
    throw ShapeError("Conv2d: input has " + std::to_string(x.dim(1)) +
                     " channels, layer expects " + std::to_string(in_channels_));
  }
  const std::int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = conv_out_extent(H, kernel_, stride_, padding_);
  const std::int64_t OW = conv_out_extent(W, kernel_, stride_, padding_);
  if (OH < 1 || OW < 1) {
    throw ShapeError("Conv2d: input " + x.shape_str() + " too small for k=" +
                     std::to_string(kernel_));
  }
  if (training_) input_ = x;

  Tensor out({N, out_channels_, OH, OW});
  const std::int64_t cols = OH * OW;
  const std::int64_t rows = in_channels_ * kernel_ * kernel_;
  const std::int64_t g_rows = rows / groups_;
  const std::int64_t g_out = out_channels_ / groups_;
  std::vector<Scalar> col(static_cast<std::size_t>(rows * cols));

  for (std::int64_t n = 0; n < N; ++n) {
    im2col(x.data() + n * in_channels_ * H * W, in_channels_, H, W, kernel_,
           stride_, padding_, OH, OW, col.data());
    for (std::int64_t g = 0; g < groups_; ++g) {
      CMapRow wg(weight.value.data() + g * g_out * g_rows, g_out, g_rows);
      CMapRow cg(col.data() + g * g_rows * cols, g_rows, cols);
      MapRow og(out.data() + (n * out_channels_ + g * g_out) * cols, g_out, cols);
      og.noalias() = wg * cg;
    }
    if (has_bias) {
      Scalar* o = out.data() + n * out_channels_ * cols;
      for (std::int64_t c = 0; c < out_channels_; ++c) {
        const Scalar b = bias.value[c];
        for (std::int64_t i = 0; i < cols; ++i) o[c * cols + i] += b;
      }
    }
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (!input_.defined()) {
    throw TrainingError("Conv2d::backward without a training-mode forward");
  }
  const Tensor& x = input_;
  const std::int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = grad_out.dim(2), OW = grad_out.dim(3);
  const std::int64_t cols = OH * OW;
  const std::int64_t rows = in_channels_ * kernel_ * kernel_;
  const std::int64_t g_rows = rows / groups_;
  const std::int64_t g_out = out_channels_ / groups_;

  Tensor dx(x.shape());
  std::vector<Scalar> col(static_cast<std::size_t>(rows * cols));
  std::vector<Scalar> dcol(static_cast<std::size_t>(rows * cols));

  for (std::int64_t n = 0; n < N; ++n) {
    im2col(x.data() + n * in_channels_ * H * W, in_channels_, H, W, kernel_,
           stride_, padding_, OH, OW, col.data());
    for (std::int64_t g = 0; g < groups_; ++g) {
      CMapRow gyg(grad_out.data() + (n * out_channels_ + g * g_out) * cols,
                  g_out, cols);
      CMapRow cg(col.data() + g * g_rows * cols, g_rows, cols);
      MapRow dwg(weight.grad.data() + g * g_out * g_rows, g_out, g_rows);
      dwg.noalias() += gyg * cg.transpose();

      CMapRow wg(weight.value.data() + g * g_out * g_rows, g_out, g_rows);
      MapRow dcg(dcol.data() + g * g_rows * cols, g_rows, cols);
      dcg.noalias() = wg.transpose() * gyg;
    }
    col2im_accumulate(dcol.data(), in_channels_, H, W, kernel_, stride_,
                      padding_, OH, OW, dx.data() + n * in_channels_ * H * W);
    if (has_bias) {
      const Scalar* gy = grad_out.data() + n * out_channels_ * cols;
      for (std::int64_t c = 0; c < out_channels_; ++c) {
        Scalar s = 0.0;
        for (std::int64_t i = 0; i < cols; ++i) s += gy[c * cols + i];
        bias.grad[c] += s;
      }
    }
  }
  return dx;
}

void Conv2d::collect_parameters(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".weight", &weight);
  if (has_bias) out.emplace_back(prefix + ".bias", &bias);
}

// ----------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::int64_t channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  weight = Parameter(Tensor({channels}, 1.0));
  bias = Parameter(Tensor({channels}));
  running_mean = Tensor({channels});
  running_var = Tensor({channels}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  require_rank4(x, "BatchNorm2d");
  if (x.dim(1) != channels_) {
    throw ShapeError("BatchNorm2d: channel mismatch");
  }
  const std::int64_t N = x.dim(0), C = channels_, H = x.dim(2), W = x.dim(3);
  const std::int64_t plane = H * W;
  const std::int64_t m = N * plane;

  const bool use_batch_stats = training_ && !frozen_;

  std::vector<Scalar> mean(static_cast<std::size_t>(C));
  std::vector<Scalar> inv_std(static_cast<std::size_t>(C));

  if (use_batch_stats) {
    std::vector<Scalar> var(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
      Scalar sum = 0.0, sq = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const Scalar* p = x.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          sum += p[i];
          sq += p[i] * p[i];
        }
      }
      const Scalar mu = sum / static_cast<Scalar>(m);
      const Scalar v = std::max<Scalar>(0.0, sq / static_cast<Scalar>(m) - mu * mu);
      mean[static_cast<std::size_t>(c)] = mu;
      var[static_cast<std::size_t>(c)] = v;
      inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(v + eps_);
    }
    // Running estimates use the unbiased variance.
    for (std::int64_t c = 0; c < C; ++c) {
      const Scalar unbiased =
          m > 1 ? var[static_cast<std::size_t>(c)] * static_cast<Scalar>(m) /
                      static_cast<Scalar>(m - 1)
                : var[static_cast<std::size_t>(c)];
      running_mean[c] =
          (1.0 - momentum_) * running_mean[c] + momentum_ * mean[static_cast<std::size_t>(c)];
      running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * unbiased;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean[c];
      inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(running_var[c] + eps_);
    }
  }

  Tensor out(x.shape());
  Tensor xhat;
  const bool keep_cache = training_;
  if (keep_cache) xhat = Tensor(x.shape());

  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const Scalar mu = mean[static_cast<std::size_t>(c)];
      const Scalar is = inv_std[static_cast<std::size_t>(c)];
      const Scalar gamma = weight.value[c];
      const Scalar beta = bias.value[c];
      const Scalar* src = x.data() + (n * C + c) * plane;
      Scalar* dst = out.data() + (n * C + c) * plane;
      Scalar* xh = keep_cache ? xhat.data() + (n * C + c) * plane : nullptr;
      for (std::int64_t i = 0; i < plane; ++i) {
        const Scalar h = (src[i] - mu) * is;
        if (xh) xh[i] = h;
        dst[i] = gamma * h + beta;
      }
    }
  }

  if (keep_cache) {
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
    stats_from_batch_ = use_batch_stats;
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (!xhat_.defined()) {
    throw TrainingError("BatchNorm2d::backward without a training-mode forward");
  }
  const std::int64_t N = grad_out.dim(0), C = channels_;
  const std::int64_t plane = grad_out.dim(2) * grad_out.dim(3);
  const std::int64_t m = N * plane;

  Tensor dx(grad_out.shape());

  for (std::int64_t c = 0; c < C; ++c) {
    Scalar sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const Scalar* gy = grad_out.data() + (n * C + c) * plane;
      const Scalar* xh = xhat_.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_gy += gy[i];
        sum_gy_xhat += gy[i] * xh[i];
      }
    }
    weight.grad[c] += sum_gy_xhat;
    bias.grad[c] += sum_gy;

    const Scalar gamma = weight.value[c];
    const Scalar is = inv_std_[static_cast<std::size_t>(c)];

    if (stats_from_batch_) {
      const Scalar inv_m = 1.0 / static_cast<Scalar>(m);
      for (std::int64_t n = 0; n < N; ++n) {
        const Scalar* gy = grad_out.data() + (n * C + c) * plane;
        const Scalar* xh = xhat_.data() + (n * C + c) * plane;
        Scalar* d = dx.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          d[i] = gamma * is *
                 (gy[i] - inv_m * sum_gy - inv_m * xh[i] * sum_gy_xhat);
        }
      }
    } else {
      // Stats are constants: plain affine backward.
      for (std::int64_t n = 0; n < N; ++n) {
        const Scalar* gy = grad_out.data() + (n * C + c) * plane;
        Scalar* d = dx.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) d[i] = gamma * is * gy[i];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_parameters(const std::string& prefix,
                                     NamedParams& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

void BatchNorm2d::collect_buffers(const std::string& prefix,
                                  NamedTensors& out) {
  out.emplace_back(prefix + ".running_mean", &running_mean);
  out.emplace_back(prefix + ".running_var", &running_var);
}

// ----------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x) {
  Tensor out(x.shape());
  const std::int64_t n = x.numel();
  if (training_) mask_.assign(static_cast<std::size_t>(n), 0);
  const Scalar* src = x.data();
  Scalar* dst = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const bool pos = src[i] > 0.0;
    dst[i] = pos ? src[i] : 0.0;
    if (training_ && pos) mask_[static_cast<std::size_t>(i)] = 1;
  }
  return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  if (mask_.size() != static_cast<std::size_t>(grad_out.numel())) {
    throw TrainingError("ReLU::backward without a training-mode forward");
  }
  Tensor dx(grad_out.shape());
  const Scalar* gy = grad_out.data();
  Scalar* d = dx.data();
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
    d[i] = mask_[static_cast<std::size_t>(i)] ? gy[i] : 0.0;
  }
  return dx;
}

// ----------------------------------------------------------------------
// MaxPool2d

MaxPool2d::MaxPool2d(std::int64_t kernel, std::int64_t stride,
                     std::int64_t padding)
    : kernel_(kernel), stride_(stride), padding_(padding) {}

Tensor MaxPool2d::forward(const Tensor& x) {
  require_rank4(x, "MaxPool2d");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = conv_out_extent(H, kernel_, stride_, padding_);
  const std::int64_t OW = conv_out_extent(W, kernel_, stride_, padding_);
  if (OH < 1 || OW < 1) {
    throw ShapeError("MaxPool2d: input " + x.shape_str() + " too small");
  }
  Tensor out({N, C, OH, OW});
  if (training_) {
    argmax_.assign(static_cast<std::size_t>(out.numel()), -1);
    input_shape_ = x.shape();
  }
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const Scalar* plane = x.data() + (n * C + c) * H * W;
      Scalar* oplane = out.data() + (n * C + c) * OH * OW;
      for (std::int64_t oy = 0; oy < OH; ++oy) {
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          Scalar best = 0.0;
          std::int64_t best_idx = -1;
          for (std::int64_t ki = 0; ki < kernel_; ++ki) {
            const std::int64_t iy = oy * stride_ - padding_ + ki;
            if (iy < 0 || iy >= H) continue;
            for (std::int64_t kj = 0; kj < kernel_; ++kj) {
              const std::int64_t ix = ox * stride_ - padding_ + kj;
              if (ix < 0 || ix >= W) continue;
              const Scalar v = plane[iy * W + ix];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = iy * W + ix;
              }
            }
          }
          oplane[oy * OW + ox] = best;
          if (training_) {
            argmax_[static_cast<std::size_t>((n * C + c) * OH * OW + oy * OW +
                                             ox)] = (n * C + c) * H * W + best_idx;
          }
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  if (argmax_.size() != static_cast<std::size_t>(grad_out.numel())) {
    throw TrainingError("MaxPool2d::backward without a training-mode forward");
  }
  Tensor dx(input_shape_);
  const Scalar* gy = grad_out.data();
  Scalar* d = dx.data();
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
    const std::int64_t idx = argmax_[static_cast<std::size_t>(i)];
    if (idx >= 0) d[idx] += gy[i];
  }
  return dx;
}

// ----------------------------------------------------------------------
// GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x) {
  require_rank4(x, "GlobalAvgPool");
  const std::int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (training_) input_shape_ = x.shape();
  Tensor out({N, C});
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const Scalar* p = x.data() + (n * C + c) * plane;
      Scalar s = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      out[n * C + c] = s / static_cast<Scalar>(plane);
    }
  }
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) {
    throw TrainingError("GlobalAvgPool::backward without a training-mode forward");
  }
  Tensor dx(input_shape_);
  const std::int64_t N = input_shape_[0], C = input_shape_[1];
  const std::int64_t plane = input_shape_[2] * input_shape_[3];
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const Scalar g = grad_out[n * C + c] / static_cast<Scalar>(plane);
      Scalar* d = dx.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) d[i] = g;
    }
  }
  return dx;
}

// ----------------------------------------------------------------------
// Linear

Linear::Linear(std::int64_t in_features, std::int64_t out_features)
    : in_features_(in_features), out_features_(out_features) {
  weight = Parameter(Tensor({out_features, in_features}));
  bias = Parameter(Tensor({out_features}));
}

void Linear::init_uniform(RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features_));
  for (std::int64_t i = 0; i < weight.value.numel(); ++i) {
    weight.value[i] = (2.0 * rng.uniform() - 1.0) * bound;
  }
  for (std::int64_t i = 0; i < bias.value.numel(); ++i) {
    bias.value[i] = (2.0 * rng.uniform() - 1.0) * bound;
  }
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_features_) {
    throw ShapeError("Linear: expected (N," + std::to_string(in_features_) +
                     "), got " + x.shape_str());
  }
  if (training_) input_ = x;
  const std::int64_t N = x.dim(0);
  Tensor out({N, out_features_});
  CMapRow xm(x.data(), N, in_features_);
  CMapRow wm(weight.value.data(), out_features_, in_features_);
  MapRow om(out.data(), N, out_features_);
  om.noalias() = xm * wm.transpose();
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t k = 0; k < out_features_; ++k) {
      out[n * out_features_ + k] += bias.value[k];
    }
  }
  return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
  if (!input_.defined()) {
    throw TrainingError("Linear::backward without a training-mode forward");
  }
  const std::int64_t N = input_.dim(0);
  CMapRow gym(grad_out.data(), N, out_features_);
  CMapRow xm(input_.data(), N, in_features_);
  MapRow dwm(weight.grad.data(), out_features_, in_features_);
  dwm.noalias() += gym.transpose() * xm;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t k = 0; k < out_features_; ++k) {
      bias.grad[k] += grad_out[n * out_features_ + k];
    }
  }
  Tensor dx({N, in_features_});
  MapRow dxm(dx.data(), N, in_features_);
  CMapRow wm(weight.value.data(), out_features_, in_features_);
  dxm.noalias() = gym * wm;
  return dx;
}

void Linear::collect_parameters(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

// ----------------------------------------------------------------------
// Dropout

Dropout::Dropout(double rate, RngStream* rng) : rate_(rate), rng_(rng) {
  if (rate_ < 0.0 || rate_ > 1.0) {
    throw ConfigError("dropout rate must lie in [0,1], got " +
                      std::to_string(rate_));
  }
}

Tensor Dropout::forward(const Tensor& x) {
  identity_pass_ = !training_ || rate_ == 0.0;
  if (identity_pass_) {
    return x;
  }
  const std::int64_t n = x.numel();
  mask_.assign(static_cast<std::size_t>(n), 0.0);
  Tensor out(x.shape());
  if (rate_ >= 1.0) {
    return out;  // everything dropped; mask stays zero
  }
  const Scalar keep_scale = 1.0 / (1.0 - rate_);
  for (std::int64_t i = 0; i < n; ++i) {
    if (rng_->uniform() >= rate_) {
      mask_[static_cast<std::size_t>(i)] = keep_scale;
      out[i] = x[i] * keep_scale;
    }
  }
  return out;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (identity_pass_) return grad_out;
  if (mask_.size() != static_cast<std::size_t>(grad_out.numel())) {
    throw TrainingError("Dropout::backward without a training-mode forward");
  }
  Tensor dx(grad_out.shape());
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
    dx[i] = grad_out[i] * mask_[static_cast<std::size_t>(i)];
  }
  return dx;
}

// ----------------------------------------------------------------------
// TemporalShiftOp

TemporalShiftOp::TemporalShiftOp(std::int64_t segments, std::int64_t shift_div,
                                 bool enabled)
    : segments_(segments), shift_div_(shift_div), enabled_(enabled) {}

bool TemporalShiftOp::active(std::int64_t channels) const {
  return enabled_ && segments_ > 0 && shift_fold(channels, shift_div_) > 0;
}

Tensor TemporalShiftOp::run(const Tensor& x, bool adjoint) const {
  require_rank4(x, "TemporalShiftOp");
  if (!active(x.dim(1))) return x;
  const std::int64_t NT = x.dim(0);
  if (NT % segments_ != 0) {
    throw ShapeError("TemporalShiftOp: folded batch " + std::to_string(NT) +
                     " is not a multiple of segments " +
                     std::to_string(segments_));
  }
  Tensor clip = x;
  clip.reshape({NT / segments_, segments_, x.dim(1), x.dim(2), x.dim(3)});
  Tensor shifted = adjoint ? temporal_shift_adjoint(clip, shift_div_)
                           : temporal_shift(clip, shift_div_);
  shifted.reshape(x.shape());
  return shifted;
}

Tensor TemporalShiftOp::apply(const Tensor& x) const { return run(x, false); }

Tensor TemporalShiftOp::apply_adjoint(const Tensor& g) const {
  return run(g, true);
}

// ----------------------------------------------------------------------
// BasicBlock

BasicBlock::BasicBlock(std::int64_t in_channels, std::int64_t out_channels,
                       std::int64_t stride, const ShiftConfig& shift,
                       RngStream& init_rng)
    : shift_(shift.segments, shift.shift_div, shift.enabled),
      placement_(shift.placement),
      conv1_(in_channels, out_channels, 3, stride, 1),
      bn1_(out_channels),
      conv2_(out_channels, out_channels, 3, 1, 1),
      bn2_(out_channels) {
  conv1_.init_he_normal(init_rng);
  conv2_.init_he_normal(init_rng);
  if (stride != 1 || in_channels != out_channels) {
    down_conv_ = std::make_unique<Conv2d>(in_channels, out_channels, 1, stride, 0);
    down_bn_ = std::make_unique<BatchNorm2d>(out_channels);
    down_conv_->init_he_normal(init_rng);
  }
}

Tensor BasicBlock::forward(const Tensor& x) {
  const bool shift_on = shift_.active(x.dim(1));

  Tensor input = (shift_on && placement_ == ShiftPlacement::in_place)
                     ? shift_.apply(x)
                     : x;
  Tensor branch_src = (shift_on && placement_ == ShiftPlacement::residual_branch)
                          ? shift_.apply(input)
                          : input;

  Tensor h = bn2_.forward(
      conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(branch_src)))));
  Tensor identity = down_conv_ ? down_bn_->forward(down_conv_->forward(input))
                               : std::move(input);
  h.add_scaled(identity, 1.0);
  return relu_out_.forward(h);
}

Tensor BasicBlock::backward(const Tensor& grad_out) {
  const bool shift_on = shift_.active(conv1_.in_channels());
  Tensor g = relu_out_.backward(grad_out);

  Tensor g_branch = conv1_.backward(
      bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
  Tensor g_identity =
      down_conv_ ? down_conv_->backward(down_bn_->backward(g)) : std::move(g);

  Tensor gx;
  if (shift_on && placement_ == ShiftPlacement::residual_branch) {
    gx = shift_.apply_adjoint(g_branch);
  } else {
    gx = std::move(g_branch);
  }
  gx.add_scaled(g_identity, 1.0);
  if (shift_on && placement_ == ShiftPlacement::in_place) {
    gx = shift_.apply_adjoint(gx);
  }
  return gx;
}

void BasicBlock::collect_parameters(const std::string& prefix,
                                    NamedParams& out) {
  conv1_.collect_parameters(prefix + ".conv1", out);
  bn1_.collect_parameters(prefix + ".bn1", out);
  conv2_.collect_parameters(prefix + ".conv2", out);
  bn2_.collect_parameters(prefix + ".bn2", out);
  if (down_conv_) {
    down_conv_->collect_parameters(prefix + ".downsample.conv", out);
    down_bn_->collect_parameters(prefix + ".downsample.bn", out);
  }
}

void BasicBlock::collect_buffers(const std::string& prefix, NamedTensors& out) {
  bn1_.collect_buffers(prefix + ".bn1", out);
  bn2_.collect_buffers(prefix + ".bn2", out);
  if (down_bn_) down_bn_->collect_buffers(prefix + ".downsample.bn", out);
}

void BasicBlock::set_training(bool training) {
  Layer::set_training(training);
  conv1_.set_training(training);
  bn1_.set_training(training);
  relu1_.set_training(training);
  conv2_.set_training(training);
  bn2_.set_training(training);
  relu_out_.set_training(training);
  if (down_conv_) down_conv_->set_training(training);
  if (down_bn_) down_bn_->set_training(training);
}

void BasicBlock::set_bn_frozen(bool frozen) {
  bn1_.set_bn_frozen(frozen);
  bn2_.set_bn_frozen(frozen);
  if (down_bn_) down_bn_->set_bn_frozen(frozen);
}

// ----------------------------------------------------------------------
// Bottleneck

Bottleneck::Bottleneck(std::int64_t in_channels, std::int64_t planes,
                       std::int64_t stride, std::int64_t groups,
                       std::int64_t width_per_group, const ShiftConfig& shift,
                       RngStream& init_rng)
    : shift_(shift.segments, shift.shift_div, shift.enabled),
      placement_(shift.placement),
      conv1_(in_channels, planes * width_per_group / 64 * groups, 1, 1, 0),
      bn1_(planes * width_per_group / 64 * groups),
      conv2_(planes * width_per_group / 64 * groups,
             planes * width_per_group / 64 * groups, 3, stride, 1, groups),
      bn2_(planes * width_per_group / 64 * groups),
      conv3_(planes * width_per_group / 64 * groups, planes * kExpansion, 1, 1, 0),
      bn3_(planes * kExpansion) {
  conv1_.init_he_normal(init_rng);
  conv2_.init_he_normal(init_rng);
  conv3_.init_he_normal(init_rng);
  if (stride != 1 || in_channels != planes * kExpansion) {
    down_conv_ =
        std::make_unique<Conv2d>(in_channels, planes * kExpansion, 1, stride, 0);
    down_bn_ = std::make_unique<BatchNorm2d>(planes * kExpansion);
    down_conv_->init_he_normal(init_rng);
  }
}

Tensor Bottleneck::forward(const Tensor& x) {
  const bool shift_on = shift_.active(x.dim(1));

  Tensor input = (shift_on && placement_ == ShiftPlacement::in_place)
                     ? shift_.apply(x)
                     : x;
  Tensor branch_src = (shift_on && placement_ == ShiftPlacement::residual_branch)
                          ? shift_.apply(input)
                          : input;

  Tensor h = relu1_.forward(bn1_.forward(conv1_.forward(branch_src)));
  h = relu2_.forward(bn2_.forward(conv2_.forward(h)));
  h = bn3_.forward(conv3_.forward(h));
  Tensor identity = down_conv_ ? down_bn_->forward(down_conv_->forward(input))
                               : std::move(input);
  h.add_scaled(identity, 1.0);
  return relu_out_.forward(h);
}

Tensor Bottleneck::backward(const Tensor& grad_out) {
  const bool shift_on = shift_.active(conv1_.in_channels());
  Tensor g = relu_out_.backward(grad_out);

  Tensor gb = conv3_.backward(bn3_.backward(g));
  gb = conv2_.backward(bn2_.backward(relu2_.backward(gb)));
  gb = conv1_.backward(bn1_.backward(relu1_.backward(gb)));

  Tensor g_identity =
      down_conv_ ? down_conv_->backward(down_bn_->backward(g)) : std::move(g);

  Tensor gx;
  if (shift_on && placement_ == ShiftPlacement::residual_branch) {
    gx = shift_.apply_adjoint(gb);
  } else {
    gx = std::move(gb);
  }
  gx.add_scaled(g_identity, 1.0);
  if (shift_on && placement_ == ShiftPlacement::in_place) {
    gx = shift_.apply_adjoint(gx);
  }
  return gx;
}

void Bottleneck::collect_parameters(const std::string& prefix,
                                    NamedParams& out) {
  conv1_.collect_parameters(prefix + ".conv1", out);
  bn1_.collect_parameters(prefix + ".bn1", out);
  conv2_.collect_parameters(prefix + ".conv2", out);
  bn2_.collect_parameters(prefix + ".bn2", out);
  conv3_.collect_parameters(prefix + ".conv3", out);
  bn3_.collect_parameters(prefix + ".bn3", out);
  if (down_conv_) {
    down_conv_->collect_parameters(prefix + ".downsample.conv", out);
    down_bn_->collect_parameters(prefix + ".downsample.bn", out);
  }
}

void Bottleneck::collect_buffers(const std::string& prefix, NamedTensors& out) {
  bn1_.collect_buffers(prefix + ".bn1", out);
  bn2_.collect_buffers(prefix + ".bn2", out);
  bn3_.collect_buffers(prefix + ".bn3", out);
  if (down_bn_) down_bn_->collect_buffers(prefix + ".downsample.bn", out);
}

void Bottleneck::set_training(bool training) {
  Layer::set_training(training);
  conv1_.set_training(training);
  bn1_.set_training(training);
  relu1_.set_training(training);
  conv2_.set_training(training);
  bn2_.set_training(training);
  relu2_.set_training(training);
  conv3_.set_training(training);
  bn3_.set_training(training);
  relu_out_.set_training(training);
  if (down_conv_) down_conv_->set_training(training);
  if (down_bn_) down_bn_->set_training(training);
}

void Bottleneck::set_bn_frozen(bool frozen) {
  bn1_.set_bn_frozen(frozen);
  bn2_.set_bn_frozen(frozen);
  bn3_.set_bn_frozen(frozen);
  if (down_bn_) down_bn_->set_bn_frozen(frozen);
}

// ----------------------------------------------------------------------
// Sequential

void Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  layer->set_training(training_);
  layers_.emplace_back(std::move(name), std::move(layer));
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor h = x;
  for (auto& [name, layer] : layers_) {
    h = layer->forward(h);
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = it->second->backward(g);
  }
  return g;
}

void Sequential::collect_parameters(const std::string& prefix,
                                    NamedParams& out) {
  for (auto& [name, layer] : layers_) {
    layer->collect_parameters(prefix.empty() ? name : prefix + "." + name, out);
  }
}

void Sequential::collect_buffers(const std::string& prefix, NamedTensors& out) {
  for (auto& [name, layer] : layers_) {
    layer->collect_buffers(prefix.empty() ? name : prefix + "." + name, out);
  }
}

void Sequential::set_training(bool training) {
  Layer::set_training(training);
  for (auto& [name, layer] : layers_) layer->set_training(training);
}

void Sequential::set_bn_frozen(bool frozen) {
  for (auto& [name, layer] : layers_) layer->set_bn_frozen(frozen);
}

// ----------------------------------------------------------------------
// Loss

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_rows expects (N,K), got " + logits.shape_str());
  }
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  Tensor probs(logits.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    const Scalar* z = logits.data() + n * K;
    Scalar* p = probs.data() + n * K;
    Scalar m = z[0];
    for (std::int64_t k = 1; k < K; ++k) m = std::max(m, z[k]);
    Scalar sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      p[k] = std::exp(z[k] - m);
      sum += p[k];
    }
    for (std::int64_t k = 0; k < K; ++k) p[k] /= sum;
  }
  return probs;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                         const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2 ||
      logits.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw ShapeError("softmax_cross_entropy: logits " + logits.shape_str() +
                     " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  CrossEntropyResult result;
  result.grad = Tensor(logits.shape());

  for (std::int64_t n = 0; n < N; ++n) {
    const Scalar* z = logits.data() + n * K;
    Scalar* g = result.grad.data() + n * K;
    const std::int64_t y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= K) {
      throw ValidationError("label " + std::to_string(y) + " out of range");
    }
    Scalar m = z[0];
    std::int64_t arg = 0;
    for (std::int64_t k = 1; k < K; ++k) {
      if (z[k] > m) {
        m = z[k];
        arg = k;
      }
    }
    if (arg == y) ++result.correct;

    Scalar sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += std::exp(z[k] - m);
    const Scalar log_sum = std::log(sum) + m;
    result.loss += log_sum - z[y];

    const Scalar inv_n = 1.0 / static_cast<Scalar>(N);
    for (std::int64_t k = 0; k < K; ++k) {
      g[k] = std::exp(z[k] - log_sum) * inv_n;
    }
    g[y] -= inv_n;
  }
  result.loss /= static_cast<Scalar>(N);
  return result;
}

}  // namespace ear::nn
