#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ear/manifest.hpp"
#include "ear/model.hpp"
#include "ear/sampler.hpp"

namespace ear {

struct TrainConfig {
  double learning_rate = 0.001;
  std::vector<std::int64_t> lr_decay_epochs = {20, 40};
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip_norm = 20.0;
  std::int64_t epochs = 100;
  std::int64_t batch_size = 4;
  std::int64_t loader_workers = 32;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;

  // Appends one message per violation; empty result means valid.
  void validate(std::vector<std::string>& issues) const;
  void validate_or_throw() const;
};

// Stepped schedule: learning_rate * factor^(#decay epochs <= epoch).
// Epochs are 0-based; epoch must lie in [0, config.epochs).
double lr_at_epoch(const TrainConfig& config, std::int64_t epoch);

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm; gradients below the threshold are untouched. Returns the
// pre-clip norm.
double clip_global_grad_norm(const std::vector<nn::Parameter*>& params,
                             double max_norm);

// Plain SGD with momentum. Weight decay is an additive lambda*w gradient
// term applied before clipping (see train_epoch), so it lives in its own
// call rather than inside step().
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<nn::Parameter*> params, double momentum,
               double weight_decay);

  void add_weight_decay();                 // grad += weight_decay * value
  void step(double lr);                    // buf = m*buf + grad; value -= lr*buf
  void zero_grad();

  // Momentum buffers keyed by parameter name, for resumable checkpoints.
  std::map<std::string, Tensor> state_dict(const nn::NamedParams& named) const;
  void load_state(const nn::NamedParams& named,
                  const std::map<std::string, Tensor>& state);

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<Tensor> momentum_buffers_;
  double momentum_;
  double weight_decay_;
};

struct EpochMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::int64_t clips_seen = 0;
};

// One pass over the train manifest: seeded shuffle into batches of
// batch_size, train_random clip sampling (stream keyed by seed, epoch and
// video id, so loader parallelism cannot change the data), cross-entropy on
// consensus scores, weight decay, global-norm clipping, momentum SGD at
// lr_at_epoch. Throws TrainingError with (epoch, batch, lr) diagnostics on
// NaN loss.
EpochMetrics train_epoch(Model& model, const Manifest& train_manifest,
                         const TrainConfig& config, std::int64_t epoch,
                         const CropSpec& crop, SgdOptimizer& optimizer,
                         FrameCache* cache = nullptr);

// Average accuracy under eval_center sampling and center crop.
double evaluate_accuracy(Model& model, const Manifest& manifest,
                         const CropSpec& crop, std::int64_t batch_size,
                         std::int64_t loader_workers,
                         FrameCache* cache = nullptr);

struct TrainState {
  std::int64_t epoch = -1;  // last completed epoch, 0-based
  double current_lr = 0.0;
  double best_val_accuracy = 0.0;
  std::int64_t best_epoch = -1;
  std::filesystem::path best_checkpoint_path;
};

// Runs the full recipe: epochs sequentially, validation average accuracy
// after each, checkpoint_best.ear persisted on strict improvement,
// checkpoint_last.ear (with optimizer state) every epoch for resume, and a
// metrics CSV `epoch,lr,train_loss,train_acc,val_acc` in run_dir. With
// resume set, picks up after the last completed epoch recorded in
// checkpoint_last.ear.
TrainState fit(Model& model, const Manifest& train_manifest,
               const Manifest& val_manifest, const TrainConfig& config,
               const CropSpec& crop, const std::filesystem::path& run_dir,
               bool resume = false);

}  // namespace ear
