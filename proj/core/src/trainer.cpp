#include "ear/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ear/checkpoint.hpp"
#include "ear/errors.hpp"
#include "ear/rng.hpp"
#include "parallel.hpp"

namespace fs = std::filesystem;

namespace ear {

void TrainConfig::validate(std::vector<std::string>& issues) const {
  if (!(learning_rate > 0.0)) {
    issues.push_back("train.learning_rate must be > 0");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    issues.push_back("train.momentum must lie in [0,1)");
  }
  if (!(grad_clip_norm > 0.0)) {
    issues.push_back("train.grad_clip_norm must be > 0");
  }
  if (weight_decay < 0.0) {
    issues.push_back("train.weight_decay must be >= 0");
  }
  if (epochs < 0) {
    issues.push_back("train.epochs must be >= 0");
  }
  if (batch_size < 1) {
    issues.push_back("train.batch_size must be >= 1");
  }
  if (loader_workers < 0) {
    issues.push_back("train.loader_workers must be >= 0");
  }
  if (dropout_rate < 0.0 || dropout_rate > 1.0) {
    issues.push_back("train.dropout_rate must lie in [0,1]");
  }
  if (!(lr_decay_factor > 0.0)) {
    issues.push_back("train.lr_decay_factor must be > 0");
  }
  // Decay epochs beyond the horizon are legal: truncated schedules simply
  // never reach them.
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) {
      issues.push_back("train.lr_decay_epochs must be strictly increasing");
      break;
    }
  }
}

void TrainConfig::validate_or_throw() const {
  std::vector<std::string> issues;
  validate(issues);
  if (!issues.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& m : issues) msg += "\n  - " + m;
    throw ConfigError(msg);
  }
}

double lr_at_epoch(const TrainConfig& config, std::int64_t epoch) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw ConfigError("lr_at_epoch: epoch " + std::to_string(epoch) +
                      " outside [0," + std::to_string(config.epochs) + ")");
  }
  double lr = config.learning_rate;
  for (std::int64_t decay : config.lr_decay_epochs) {
    if (decay <= epoch) lr *= config.lr_decay_factor;
  }
  return lr;
}

double clip_global_grad_norm(const std::vector<nn::Parameter*>& params,
                             double max_norm) {
  if (!(max_norm > 0.0)) {
    throw ConfigError("grad_clip_norm must be > 0");
  }
  double sq = 0.0;
  for (const auto* p : params) {
    const Scalar* g = p->grad.data();
    for (std::int64_t i = 0; i < p->grad.numel(); ++i) sq += g[i] * g[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto* p : params) p->grad.scale(scale);
  }
  return norm;
}

SgdOptimizer::SgdOptimizer(std::vector<nn::Parameter*> params, double momentum,
                           double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  momentum_buffers_.reserve(params_.size());
  for (const auto* p : params_) {
    momentum_buffers_.emplace_back(p->value.shape());
  }
}

void SgdOptimizer::add_weight_decay() {
  if (weight_decay_ == 0.0) return;
  for (auto* p : params_) {
    p->grad.add_scaled(p->value, weight_decay_);
  }
}

void SgdOptimizer::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& buf = momentum_buffers_[i];
    nn::Parameter& p = *params_[i];
    Scalar* b = buf.data();
    const Scalar* g = p.grad.data();
    Scalar* w = p.value.data();
    const std::int64_t n = buf.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      b[j] = momentum_ * b[j] + g[j];
      w[j] -= lr * b[j];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (auto* p : params_) p->grad.zero();
}

std::map<std::string, Tensor> SgdOptimizer::state_dict(
    const nn::NamedParams& named) const {
  if (named.size() != params_.size()) {
    throw ValidationError("optimizer state: parameter list mismatch");
  }
  std::map<std::string, Tensor> state;
  for (std::size_t i = 0; i < named.size(); ++i) {
    state.emplace("momentum." + named[i].first, momentum_buffers_[i]);
  }
  return state;
}

void SgdOptimizer::load_state(const nn::NamedParams& named,
                              const std::map<std::string, Tensor>& state) {
  if (named.size() != params_.size()) {
    throw ValidationError("optimizer state: parameter list mismatch");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto it = state.find("momentum." + named[i].first);
    if (it == state.end()) {
      throw ValidationError("optimizer state missing buffer for '" +
                            named[i].first + "'");
    }
    if (!(it->second.shape() == momentum_buffers_[i].shape())) {
      throw ValidationError("optimizer buffer shape mismatch for '" +
                            named[i].first + "'");
    }
    momentum_buffers_[i] = it->second;
  }
}

namespace {

// Per-clip sampling seed: a pure function of (run seed, epoch, video id) so
// that worker scheduling cannot perturb what gets sampled.
std::uint64_t clip_seed(std::uint64_t seed, std::int64_t epoch,
                        const std::string& video_id) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stable_hash(video_id)) ^
                    static_cast<std::uint64_t>(epoch + 1));
}

using detail::run_parallel;

// Loads one batch of clips (in manifest order given by `items`) and stacks
// them into (B, T, 3, S, S) plus the label vector.
std::pair<Tensor, std::vector<std::int64_t>> load_batch(
    const std::vector<const ManifestEntry*>& items, SampleMode mode,
    std::uint64_t run_seed, std::int64_t epoch, std::int64_t segments,
    const CropSpec& crop, std::int64_t workers, FrameCache* cache) {
  const auto B = static_cast<std::int64_t>(items.size());
  const std::int64_t S = crop.crop_size;
  Tensor batch({B, segments, 3, S, S});
  std::vector<std::int64_t> labels(static_cast<std::size_t>(B));

  run_parallel(B, workers, [&](std::int64_t i) {
    const ManifestEntry& entry = *items[static_cast<std::size_t>(i)];
    if (!entry.ear_label) {
      throw ValidationError("video '" + entry.video_id + "' has no ear_label");
    }
    SampleSpec spec;
    spec.segments = segments;
    spec.mode = mode;
    spec.seed = mode == SampleMode::train_random
                    ? clip_seed(run_seed, epoch, entry.video_id)
                    : 0;
    Tensor clip = load_clip(entry, spec, crop, cache);
    std::copy(clip.data(), clip.data() + clip.numel(),
              batch.data() + i * clip.numel());
    labels[static_cast<std::size_t>(i)] =
        static_cast<std::int64_t>(*entry.ear_label);
  });
  return {std::move(batch), std::move(labels)};
}

}  // namespace

EpochMetrics train_epoch(Model& model, const Manifest& train_manifest,
                         const TrainConfig& config, std::int64_t epoch,
                         const CropSpec& crop, SgdOptimizer& optimizer,
                         FrameCache* cache) {
  if (train_manifest.empty()) {
    throw ValidationError("train_epoch: empty train manifest");
  }
  const double lr = lr_at_epoch(config, epoch);
  const std::int64_t segments = model.shift_config().segments;

  std::vector<const ManifestEntry*> order;
  order.reserve(train_manifest.size());
  for (const auto& e : train_manifest) order.push_back(&e);
  auto shuffle_rng = RngStream::substream(config.seed, "shuffle",
                                          static_cast<std::uint64_t>(epoch));
  shuffle_rng.shuffle(order);

  model.reseed_dropout(splitmix64(splitmix64(config.seed) ^
                                  static_cast<std::uint64_t>(epoch + 1)));

  EpochMetrics metrics;
  double loss_sum = 0.0;
  std::int64_t hits = 0;
  std::int64_t batch_index = 0;

  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
    const std::size_t end =
        std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
    std::vector<const ManifestEntry*> items(order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
    auto [batch, labels] =
        load_batch(items, SampleMode::train_random, config.seed, epoch,
                   segments, crop, config.loader_workers, cache);

    model.zero_grad();
    Tensor scores = model.forward_clip(batch, Mode::train);

    double loss = 0.0;
    Tensor grad;
    if (model.head_spec().consensus_domain == ConsensusDomain::probabilities) {
      // scores are averaged probabilities; loss = -mean log p[y]
      const std::int64_t N = scores.dim(0), K = scores.dim(1);
      grad = Tensor(scores.shape());
      std::int64_t batch_hits = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const std::int64_t y = labels[static_cast<std::size_t>(n)];
        const Scalar* row = scores.data() + n * K;
        std::int64_t arg = 0;
        for (std::int64_t k = 1; k < K; ++k) {
          if (row[k] > row[arg]) arg = k;
        }
        if (arg == y) ++batch_hits;
        loss -= std::log(std::max<Scalar>(row[y], 1e-300));
        grad[n * K + y] = -1.0 / (std::max<Scalar>(row[y], 1e-300) *
                                  static_cast<Scalar>(N));
      }
      loss /= static_cast<double>(N);
      hits += batch_hits;
    } else {
      auto ce = nn::softmax_cross_entropy(scores, labels);
      loss = ce.loss;
      grad = std::move(ce.grad);
      hits += ce.correct;
    }

    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(batch_index) + ", lr " +
                          std::to_string(lr));
    }

    model.backward_from_scores(grad);
    optimizer.add_weight_decay();
    clip_global_grad_norm(model.parameters(), config.grad_clip_norm);
    optimizer.step(lr);

    loss_sum += loss * static_cast<double>(labels.size());
    metrics.clips_seen += static_cast<std::int64_t>(labels.size());
  }

  metrics.mean_loss = loss_sum / static_cast<double>(metrics.clips_seen);
  metrics.accuracy =
      static_cast<double>(hits) / static_cast<double>(metrics.clips_seen);
  return metrics;
}

double evaluate_accuracy(Model& model, const Manifest& manifest,
                         const CropSpec& crop, std::int64_t batch_size,
                         std::int64_t loader_workers, FrameCache* cache) {
  if (manifest.empty()) {
    throw ValidationError("evaluate_accuracy: empty manifest");
  }
  const std::int64_t segments = model.shift_config().segments;
  std::vector<const ManifestEntry*> items;
  items.reserve(manifest.size());
  for (const auto& e : manifest) items.push_back(&e);

  std::int64_t hits = 0;
  for (std::size_t start = 0; start < items.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(items.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const ManifestEntry*> chunk(items.begin() + static_cast<std::ptrdiff_t>(start),
                                            items.begin() + static_cast<std::ptrdiff_t>(end));
    auto [batch, labels] = load_batch(chunk, SampleMode::eval_center, 0, 0,
                                      segments, crop, loader_workers, cache);
    Tensor scores = model.forward_clip(batch, Mode::eval);
    const std::int64_t N = scores.dim(0), K = scores.dim(1);
    for (std::int64_t n = 0; n < N; ++n) {
      const Scalar* row = scores.data() + n * K;
      std::int64_t arg = 0;
      for (std::int64_t k = 1; k < K; ++k) {
        if (row[k] > row[arg]) arg = k;
      }
      if (arg == labels[static_cast<std::size_t>(n)]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(manifest.size());
}

namespace {

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void check_disjoint(const Manifest& a, const Manifest& b) {
  std::set<std::string> ids;
  for (const auto& e : a) ids.insert(e.video_id);
  for (const auto& e : b) {
    if (ids.count(e.video_id)) {
      throw ValidationError(
          "train and validation manifests share video_id '" + e.video_id + "'");
    }
  }
}

}  // namespace

TrainState fit(Model& model, const Manifest& train_manifest,
               const Manifest& val_manifest, const TrainConfig& config,
               const CropSpec& crop, const fs::path& run_dir, bool resume) {
  config.validate_or_throw();
  check_disjoint(train_manifest, val_manifest);
  fs::create_directories(run_dir);

  const fs::path metrics_path = run_dir / "metrics.csv";
  const fs::path best_path = run_dir / "checkpoint_best.ear";
  const fs::path last_path = run_dir / "checkpoint_last.ear";

  SgdOptimizer optimizer(model.parameters(), config.momentum,
                         config.weight_decay);

  TrainState state;
  std::int64_t start_epoch = 0;
  std::vector<std::string> kept_rows;

  if (resume && fs::exists(last_path)) {
    Checkpoint last = load_checkpoint(last_path);
    model.load_state(last.model_state);
    optimizer.load_state(model.named_parameters(), last.optimizer_state);
    start_epoch = last.epoch + 1;

    // Recover best-so-far from the metrics log.
    std::ifstream in(metrics_path);
    std::string line;
    bool header = true;
    while (in && std::getline(in, line)) {
      if (header) {
        header = false;
        continue;
      }
      std::istringstream row(line);
      std::string cell;
      std::getline(row, cell, ',');
      const std::int64_t e = std::stoll(cell);
      if (e >= start_epoch) continue;
      kept_rows.push_back(line);
      for (int i = 0; i < 3; ++i) std::getline(row, cell, ',');
      std::getline(row, cell, ',');
      const double val_acc = std::stod(cell);
      if (val_acc > state.best_val_accuracy) {
        state.best_val_accuracy = val_acc;
        state.best_epoch = e;
        state.best_checkpoint_path = best_path;
      }
      state.epoch = e;
    }
  }

  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) {
    throw ConfigError("cannot write metrics log: " + metrics_path.string());
  }
  metrics << "epoch,lr,train_loss,train_acc,val_acc\n";
  for (const auto& row : kept_rows) metrics << row << '\n';
  metrics.flush();

  FrameCache cache;
  for (std::int64_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config, epoch);
    const EpochMetrics train_metrics = train_epoch(
        model, train_manifest, config, epoch, crop, optimizer, &cache);
    const double val_acc =
        evaluate_accuracy(model, val_manifest, crop, config.batch_size,
                          config.loader_workers, &cache);

    metrics << epoch << ',' << format_metric(lr) << ','
            << format_metric(train_metrics.mean_loss) << ','
            << format_metric(train_metrics.accuracy) << ','
            << format_metric(val_acc) << '\n';
    metrics.flush();

    state.epoch = epoch;
    state.current_lr = lr;

    if (val_acc > state.best_val_accuracy) {
      state.best_val_accuracy = val_acc;
      state.best_epoch = epoch;
      state.best_checkpoint_path = best_path;
      save_checkpoint(make_checkpoint(model, crop, epoch, val_acc), best_path);
    }

    Checkpoint last = make_checkpoint(model, crop, epoch, val_acc);
    last.optimizer_state = optimizer.state_dict(model.named_parameters());
    save_checkpoint(last, last_path);
  }

  return state;
}

}  // namespace ear
