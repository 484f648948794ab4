#include "ear/model.hpp"

#include <algorithm>

#include "ear/checkpoint.hpp"
#include "ear/errors.hpp"

namespace ear {

std::string to_string(BackboneKind k) {
  return k == BackboneKind::resnext50_32x4d ? "resnext50_32x4d"
                                            : "tiny_residual";
}

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "resnext50_32x4d") return BackboneKind::resnext50_32x4d;
  if (s == "tiny_residual") return BackboneKind::tiny_residual;
  throw ConfigError("unknown backbone kind: '" + s + "'");
}

std::string to_string(ConsensusKind c) {
  (void)c;
  return "average";
}

ConsensusKind consensus_kind_from_string(const std::string& s) {
  if (s == "average") return ConsensusKind::average;
  throw ConfigError("unknown consensus function: '" + s + "'");
}

std::string to_string(ConsensusDomain d) {
  return d == ConsensusDomain::logits ? "logits" : "probabilities";
}

ConsensusDomain consensus_domain_from_string(const std::string& s) {
  if (s == "logits") return ConsensusDomain::logits;
  if (s == "probabilities") return ConsensusDomain::probabilities;
  throw ConfigError("unknown consensus domain: '" + s + "'");
}

void BackboneSpec::validate() const {
  if (kind == BackboneKind::resnext50_32x4d) {
    if (cardinality < 1 || width_per_group < 1) {
      throw ConfigError("backbone: cardinality and width_per_group must be >= 1");
    }
  }
  for (std::int64_t s : shift_stages) {
    if (s < 1 || s > 4) {
      throw ConfigError("backbone: shift_stages entries must lie in [1,4]");
    }
  }
}

// Architectural identity only; pretrained provenance fields are excluded.
bool BackboneSpec::operator==(const BackboneSpec& other) const {
  return kind == other.kind && cardinality == other.cardinality &&
         width_per_group == other.width_per_group &&
         shift_stages == other.shift_stages;
}

void HeadSpec::validate() const {
  if (num_classes != 6) {
    throw ConfigError("head: the EAR task has exactly 6 classes, got " +
                      std::to_string(num_classes));
  }
  if (dropout_rate < 0.0 || dropout_rate > 1.0) {
    throw ConfigError("head: dropout_rate must lie in [0,1]");
  }
}

bool HeadSpec::operator==(const HeadSpec& other) const {
  return num_classes == other.num_classes &&
         dropout_rate == other.dropout_rate && consensus == other.consensus &&
         consensus_domain == other.consensus_domain;
}

namespace {

ShiftConfig stage_shift(const ShiftConfig& shift,
                        const std::vector<std::int64_t>& stages,
                        std::int64_t stage) {
  ShiftConfig cfg = shift;
  if (!stages.empty() &&
      std::find(stages.begin(), stages.end(), stage) == stages.end()) {
    cfg.enabled = false;
  }
  return cfg;
}

}  // namespace

Model::Model(const BackboneSpec& backbone, const HeadSpec& head,
             const ShiftConfig& shift, std::uint64_t init_seed)
    : backbone_spec_(backbone),
      head_spec_(head),
      shift_config_(shift),
      dropout_rng_(RngStream::substream(init_seed, "dropout")) {
  backbone.validate();
  head.validate();
  shift.validate();

  auto init_rng = RngStream::substream(init_seed, "init");

  auto stem = std::make_unique<nn::Sequential>();
  if (backbone.kind == BackboneKind::tiny_residual) {
    // Desk-scale backbone: 3 basic blocks, 32 channels at the widest.
    auto stem_conv = std::make_unique<nn::Conv2d>(3, 8, 3, 1, 1);
    stem_conv->init_he_normal(init_rng);
    stem->add("conv", std::move(stem_conv));
    stem->add("bn", std::make_unique<nn::BatchNorm2d>(8));
    stem->add("relu", std::make_unique<nn::ReLU>());
    stem->add("pool", std::make_unique<nn::MaxPool2d>(2, 2, 0));
    features_.add("stem", std::move(stem));

    auto layer1 = std::make_unique<nn::Sequential>();
    layer1->add("0", std::make_unique<nn::BasicBlock>(
                         8, 16, 2, stage_shift(shift, backbone.shift_stages, 1),
                         init_rng));
    features_.add("layer1", std::move(layer1));

    auto layer2 = std::make_unique<nn::Sequential>();
    layer2->add("0", std::make_unique<nn::BasicBlock>(
                         16, 32, 2, stage_shift(shift, backbone.shift_stages, 2),
                         init_rng));
    features_.add("layer2", std::move(layer2));

    auto layer3 = std::make_unique<nn::Sequential>();
    layer3->add("0", std::make_unique<nn::BasicBlock>(
                         32, 32, 1, stage_shift(shift, backbone.shift_stages, 3),
                         init_rng));
    features_.add("layer3", std::move(layer3));

    feature_dim_ = 32;
  } else {
    auto stem_conv = std::make_unique<nn::Conv2d>(3, 64, 7, 2, 3);
    stem_conv->init_he_normal(init_rng);
    stem->add("conv", std::move(stem_conv));
    stem->add("bn", std::make_unique<nn::BatchNorm2d>(64));
    stem->add("relu", std::make_unique<nn::ReLU>());
    stem->add("pool", std::make_unique<nn::MaxPool2d>(3, 2, 1));
    features_.add("stem", std::move(stem));

    const std::int64_t block_counts[4] = {3, 4, 6, 3};
    const std::int64_t planes[4] = {64, 128, 256, 512};
    std::int64_t in_channels = 64;
    for (int stage = 0; stage < 4; ++stage) {
      auto layer = std::make_unique<nn::Sequential>();
      const std::int64_t stride = stage == 0 ? 1 : 2;
      const ShiftConfig cfg =
          stage_shift(shift, backbone.shift_stages, stage + 1);
      for (std::int64_t b = 0; b < block_counts[stage]; ++b) {
        layer->add(std::to_string(b),
                   std::make_unique<nn::Bottleneck>(
                       in_channels, planes[stage], b == 0 ? stride : 1,
                       backbone.cardinality, backbone.width_per_group, cfg,
                       init_rng));
        in_channels = planes[stage] * nn::Bottleneck::kExpansion;
      }
      features_.add("layer" + std::to_string(stage + 1), std::move(layer));
    }
    feature_dim_ = 512 * nn::Bottleneck::kExpansion;
  }

  dropout_ = std::make_unique<nn::Dropout>(head.dropout_rate, &dropout_rng_);
  fc_ = std::make_unique<nn::Linear>(feature_dim_, head.num_classes);
  fc_->init_uniform(init_rng);

  set_mode(Mode::eval);
}

void Model::set_mode(Mode mode) {
  training_mode_ = mode == Mode::train;
  features_.set_training(training_mode_);
  pool_.set_training(training_mode_);
  dropout_->set_training(training_mode_);
  fc_->set_training(training_mode_);
}

Tensor Model::forward_clip(const Tensor& clip, Mode mode) {
  if (clip.rank() != 5) {
    throw ShapeError("forward_clip expects (N,T,C,H,W), got " +
                     clip.shape_str());
  }
  if (clip.dim(1) != shift_config_.segments) {
    throw ShapeError("forward_clip: clip has T=" + std::to_string(clip.dim(1)) +
                     " but the model expects " +
                     std::to_string(shift_config_.segments) + " segments");
  }
  set_mode(mode);

  const std::int64_t N = clip.dim(0);
  const std::int64_t T = clip.dim(1);
  const std::int64_t K = head_spec_.num_classes;

  Tensor folded = clip;
  folded.reshape({N * T, clip.dim(2), clip.dim(3), clip.dim(4)});

  Tensor h = features_.forward(folded);
  h = pool_.forward(h);
  h = dropout_->forward(h);
  Tensor segment_logits = fc_->forward(h);  // (N*T, K)

  last_batch_ = N;

  const Tensor& segment_scores =
      head_spec_.consensus_domain == ConsensusDomain::probabilities
          ? (segment_probs_ = nn::softmax_rows(segment_logits))
          : segment_logits;

  Tensor consensus({N, K});
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t t = 0; t < T; ++t) {
      const Scalar* src = segment_scores.data() + (n * T + t) * K;
      Scalar* dst = consensus.data() + n * K;
      for (std::int64_t k = 0; k < K; ++k) dst[k] += src[k];
    }
  }
  consensus.scale(1.0 / static_cast<Scalar>(T));
  return consensus;
}

void Model::backward_from_scores(const Tensor& grad_scores) {
  if (!training_mode_) {
    throw TrainingError("backward_from_scores requires a train-mode forward");
  }
  const std::int64_t N = last_batch_;
  const std::int64_t T = shift_config_.segments;
  const std::int64_t K = head_spec_.num_classes;
  if (grad_scores.rank() != 2 || grad_scores.dim(0) != N ||
      grad_scores.dim(1) != K) {
    throw ShapeError("backward_from_scores: grad shape " +
                     grad_scores.shape_str() + " does not match scores");
  }

  // Consensus backward: every segment receives grad/T; the probabilities
  // domain additionally routes through each segment's softmax Jacobian.
  Tensor grad_logits({N * T, K});
  const Scalar inv_t = 1.0 / static_cast<Scalar>(T);
  if (head_spec_.consensus_domain == ConsensusDomain::probabilities) {
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t t = 0; t < T; ++t) {
        const Scalar* p = segment_probs_.data() + (n * T + t) * K;
        const Scalar* g = grad_scores.data() + n * K;
        Scalar* out = grad_logits.data() + (n * T + t) * K;
        Scalar dot = 0.0;
        for (std::int64_t k = 0; k < K; ++k) dot += g[k] * inv_t * p[k];
        for (std::int64_t k = 0; k < K; ++k) {
          out[k] = p[k] * (g[k] * inv_t - dot);
        }
      }
    }
  } else {
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t t = 0; t < T; ++t) {
        const Scalar* g = grad_scores.data() + n * K;
        Scalar* out = grad_logits.data() + (n * T + t) * K;
        for (std::int64_t k = 0; k < K; ++k) out[k] = g[k] * inv_t;
      }
    }
  }

  Tensor g = fc_->backward(grad_logits);
  g = dropout_->backward(g);
  g = pool_.backward(g);
  features_.backward(g);
}

nn::NamedParams Model::named_parameters() {
  nn::NamedParams out;
  features_.collect_parameters("", out);
  fc_->collect_parameters("fc", out);
  return out;
}

std::vector<nn::Parameter*> Model::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

nn::NamedTensors Model::named_buffers() {
  nn::NamedTensors out;
  features_.collect_buffers("", out);
  return out;
}

std::int64_t Model::parameter_count() {
  std::int64_t n = 0;
  for (auto* p : parameters()) n += p->value.numel();
  return n;
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->grad.zero();
}

void Model::set_bn_frozen(bool frozen) { features_.set_bn_frozen(frozen); }

void Model::reseed_dropout(std::uint64_t seed) {
  dropout_rng_ = RngStream::substream(seed, "dropout");
}

std::map<std::string, Tensor> Model::state_dict() {
  std::map<std::string, Tensor> state;
  for (auto& [name, p] : named_parameters()) state.emplace(name, p->value);
  for (auto& [name, t] : named_buffers()) state.emplace(name, *t);
  return state;
}

void Model::load_state(const std::map<std::string, Tensor>& state) {
  std::map<std::string, Tensor*> targets;
  for (auto& [name, p] : named_parameters()) targets.emplace(name, &p->value);
  for (auto& [name, t] : named_buffers()) targets.emplace(name, t);

  for (const auto& [name, tensor] : state) {
    auto it = targets.find(name);
    if (it == targets.end()) {
      throw ValidationError("load_state: unknown tensor '" + name + "'");
    }
    if (!(it->second->shape() == tensor.shape())) {
      throw ValidationError("load_state: shape mismatch for '" + name + "': " +
                            it->second->shape_str() + " vs " +
                            tensor.shape_str());
    }
    *it->second = tensor;
    targets.erase(it);
  }
  if (!targets.empty()) {
    throw ValidationError("load_state: missing tensor '" +
                          targets.begin()->first + "' (and " +
                          std::to_string(targets.size() - 1) + " more)");
  }
}

std::unique_ptr<Model> build_model(const BackboneSpec& backbone,
                                   const HeadSpec& head,
                                   const ShiftConfig& shift,
                                   std::uint64_t init_seed) {
  auto model = std::make_unique<Model>(backbone, head, shift, init_seed);
  if (backbone.pretrained_init) {
    if (backbone.pretrained_weights.empty()) {
      throw ConfigError(
          "backbone.pretrained_init is set but no pretrained_weights file is "
          "configured");
    }
    load_pretrained_backbone(*model, backbone.pretrained_weights);
  }
  return model;
}

}  // namespace ear
