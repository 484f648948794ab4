#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ear/nn.hpp"
#include "ear/rng.hpp"
#include "ear/shift.hpp"
#include "ear/tensor.hpp"

namespace ear {

enum class BackboneKind { resnext50_32x4d, tiny_residual };

std::string to_string(BackboneKind k);
BackboneKind backbone_kind_from_string(const std::string& s);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::tiny_residual;
  std::int64_t cardinality = 32;      // groups in the 3x3 bottleneck convs
  std::int64_t width_per_group = 4;
  bool pretrained_init = false;
  // Local file with pretrained parameters; consulted only when
  // pretrained_init is set. Never downloaded.
  std::string pretrained_weights;
  // Stages whose residual blocks carry the temporal shift (1-based stage
  // numbers). Empty means every residual block.
  std::vector<std::int64_t> shift_stages;

  void validate() const;
  bool operator==(const BackboneSpec& other) const;
};

enum class ConsensusKind { average };
enum class ConsensusDomain { logits, probabilities };

std::string to_string(ConsensusKind c);
ConsensusKind consensus_kind_from_string(const std::string& s);
std::string to_string(ConsensusDomain d);
ConsensusDomain consensus_domain_from_string(const std::string& s);

struct HeadSpec {
  std::int64_t num_classes = 6;
  double dropout_rate = 0.5;
  ConsensusKind consensus = ConsensusKind::average;
  // What the consensus averages. Logit averaging is the default; the
  // probabilities domain averages per-segment softmax scores instead.
  ConsensusDomain consensus_domain = ConsensusDomain::logits;

  void validate() const;
  bool operator==(const HeadSpec& other) const;
};

enum class Mode { train, eval };

// Recognition network: 2-D residual backbone over time-folded frames with
// the temporal shift inside residual blocks, global average pooling, dropout,
// a linear classifier, and average consensus over segments.
class Model {
 public:
  Model(const BackboneSpec& backbone, const HeadSpec& head,
        const ShiftConfig& shift, std::uint64_t init_seed);

  // clip (N, T, C, H, W) with T == shift.segments -> consensus scores
  // (N, num_classes). Segments fold into the batch axis for every 2-D
  // operation; only the temporal shift reads across time.
  Tensor forward_clip(const Tensor& clip, Mode mode);

  // Backpropagates d(loss)/d(consensus scores) from the latest train-mode
  // forward_clip, accumulating parameter gradients.
  void backward_from_scores(const Tensor& grad_scores);

  std::vector<nn::Parameter*> parameters();
  nn::NamedParams named_parameters();
  nn::NamedTensors named_buffers();
  std::int64_t parameter_count();

  void zero_grad();
  void set_bn_frozen(bool frozen);
  void reseed_dropout(std::uint64_t seed);

  // Strict by-name, by-shape load. Unknown or missing names throw.
  void load_state(const std::map<std::string, Tensor>& state);
  std::map<std::string, Tensor> state_dict();

  const BackboneSpec& backbone_spec() const { return backbone_spec_; }
  const HeadSpec& head_spec() const { return head_spec_; }
  const ShiftConfig& shift_config() const { return shift_config_; }

 private:
  void set_mode(Mode mode);

  BackboneSpec backbone_spec_;
  HeadSpec head_spec_;
  ShiftConfig shift_config_;

  RngStream dropout_rng_;
  nn::Sequential features_;
  nn::GlobalAvgPool pool_;
  std::unique_ptr<nn::Dropout> dropout_;
  std::unique_ptr<nn::Linear> fc_;

  std::int64_t feature_dim_ = 0;
  std::int64_t last_batch_ = 0;
  Tensor segment_probs_;  // cached for probabilities-domain backward
  bool training_mode_ = false;
};

// Validates the spec triple and assembles the network. Initialization is
// seeded He-style; pretrained_init additionally overlays backbone parameters
// from the configured local weights file (classifier stays re-initialized).
std::unique_ptr<Model> build_model(const BackboneSpec& backbone,
                                   const HeadSpec& head,
                                   const ShiftConfig& shift,
                                   std::uint64_t init_seed);

}  // namespace ear
