#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ear/rng.hpp"
#include "ear/shift.hpp"
#include "ear/tensor.hpp"

namespace ear::nn {

struct Parameter {
  Tensor value;
  Tensor grad;  // same shape, zero until first backward

  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape()) {}
  Parameter() = default;
};

using NamedParams = std::vector<std::pair<std::string, Parameter*>>;
using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

// Forward/backward layer over (N,C,H,W) activations. Layers cache whatever
// backward needs during a training-mode forward; eval forwards skip the
// caches. backward(grad_out) returns grad wrt the layer input and
// accumulates parameter gradients.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual void collect_parameters(const std::string& prefix, NamedParams& out) {
    (void)prefix;
    (void)out;
  }
  virtual void collect_buffers(const std::string& prefix, NamedTensors& out) {
    (void)prefix;
    (void)out;
  }
  virtual void set_training(bool training) { training_ = training; }
  virtual void set_bn_frozen(bool frozen) { (void)frozen; }

  bool training() const { return training_; }

 protected:
  bool training_ = false;
};

// 2-D convolution with optional channel groups (cardinality). Weight layout
// (out_channels, in_channels/groups, k, k).
class Conv2d : public Layer {
 public:
  Conv2d(std::int64_t in_channels, std::int64_t out_channels,
         std::int64_t kernel, std::int64_t stride, std::int64_t padding,
         std::int64_t groups = 1, bool bias = false);

  void init_he_normal(RngStream& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, NamedParams& out) override;

  std::int64_t in_channels() const { return in_channels_; }
  std::int64_t out_channels() const { return out_channels_; }

  Parameter weight;
  Parameter bias;
  bool has_bias = false;

 private:
  std::int64_t in_channels_, out_channels_, kernel_, stride_, padding_, groups_;
  Tensor input_;  // cached when training
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(std::int64_t channels, double eps = 1e-5,
                       double momentum = 0.1);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, NamedParams& out) override;
  void collect_buffers(const std::string& prefix, NamedTensors& out) override;
  void set_bn_frozen(bool frozen) override { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

  Parameter weight;  // scale (gamma)
  Parameter bias;    // offset (beta)
  Tensor running_mean;
  Tensor running_var;

 private:
  std::int64_t channels_;
  double eps_, momentum_;
  bool frozen_ = false;  // frozen: use running stats even in training mode

  // backward caches
  Tensor xhat_;
  std::vector<Scalar> inv_std_;
  bool stats_from_batch_ = false;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<std::uint8_t> mask_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(std::int64_t kernel, std::int64_t stride, std::int64_t padding = 0);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::int64_t kernel_, stride_, padding_;
  std::vector<std::int64_t> argmax_;
  std::vector<std::int64_t> input_shape_;
};

// (N,C,H,W) -> (N,C) spatial mean.
class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<std::int64_t> input_shape_;
};

class Linear : public Layer {
 public:
  Linear(std::int64_t in_features, std::int64_t out_features);

  void init_uniform(RngStream& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, NamedParams& out) override;

  Parameter weight;  // (out, in)
  Parameter bias;    // (out)

 private:
  std::int64_t in_features_, out_features_;
  Tensor input_;
};

// Inverted dropout; identity in eval mode or at rate zero. Draws from an
// externally owned stream so the model controls reseeding.
class Dropout : public Layer {
 public:
  Dropout(double rate, RngStream* rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

  double rate() const { return rate_; }

 private:
  double rate_;
  RngStream* rng_;
  std::vector<Scalar> mask_;
  bool identity_pass_ = true;
};

// Temporal shift over activations folded as (N*T, C, H, W); T = segments.
// Linear operator: backward is the adjoint shift, no caches.
class TemporalShiftOp {
 public:
  TemporalShiftOp(std::int64_t segments, std::int64_t shift_div, bool enabled);

  Tensor apply(const Tensor& x) const;
  Tensor apply_adjoint(const Tensor& g) const;
  bool active(std::int64_t channels) const;

  std::int64_t segments() const { return segments_; }

 private:
  Tensor run(const Tensor& x, bool adjoint) const;

  std::int64_t segments_, shift_div_;
  bool enabled_;
};

// Two 3x3 convolutions with batch norm and a residual connection; optional
// 1x1 downsample projection. The temporal shift sits per the configured
// placement: residual_branch shifts only the branch input, in_place shifts
// the whole block input.
class BasicBlock : public Layer {
 public:
  BasicBlock(std::int64_t in_channels, std::int64_t out_channels,
             std::int64_t stride, const ShiftConfig& shift, RngStream& init_rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, NamedParams& out) override;
  void collect_buffers(const std::string& prefix, NamedTensors& out) override;
  void set_training(bool training) override;
  void set_bn_frozen(bool frozen) override;

 private:
  TemporalShiftOp shift_;
  ShiftPlacement placement_;
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReLU relu1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  std::unique_ptr<Conv2d> down_conv_;
  std::unique_ptr<BatchNorm2d> down_bn_;
  ReLU relu_out_;
};

// ResNeXt-style bottleneck: 1x1 reduce, 3x3 grouped, 1x1 expand (x4), with
// the same shift placement semantics as BasicBlock.
class Bottleneck : public Layer {
 public:
  static constexpr std::int64_t kExpansion = 4;

  Bottleneck(std::int64_t in_channels, std::int64_t planes, std::int64_t stride,
             std::int64_t groups, std::int64_t width_per_group,
             const ShiftConfig& shift, RngStream& init_rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, NamedParams& out) override;
  void collect_buffers(const std::string& prefix, NamedTensors& out) override;
  void set_training(bool training) override;
  void set_bn_frozen(bool frozen) override;

 private:
  TemporalShiftOp shift_;
  ShiftPlacement placement_;
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReLU relu1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  ReLU relu2_;
  Conv2d conv3_;
  BatchNorm2d bn3_;
  std::unique_ptr<Conv2d> down_conv_;
  std::unique_ptr<BatchNorm2d> down_bn_;
  ReLU relu_out_;
};

// Ordered chain of named sublayers.
class Sequential : public Layer {
 public:
  void add(std::string name, std::unique_ptr<Layer> layer);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, NamedParams& out) override;
  void collect_buffers(const std::string& prefix, NamedTensors& out) override;
  void set_training(bool training) override;
  void set_bn_frozen(bool frozen) override;

  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

// Mean cross-entropy over a batch of logits (N,K) with integer labels.
// grad is d(loss)/d(logits), already divided by N.
struct CrossEntropyResult {
  double loss = 0.0;
  Tensor grad;
  std::int64_t correct = 0;  // argmax hits, lowest index wins ties
};

CrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                         const std::vector<std::int64_t>& labels);

// Row-wise softmax of (N,K) logits.
Tensor softmax_rows(const Tensor& logits);

}  // namespace ear::nn
