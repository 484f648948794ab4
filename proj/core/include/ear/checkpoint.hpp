#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "ear/model.hpp"
#include "ear/sampler.hpp"
#include "ear/tensor.hpp"

namespace ear {

// Single-file archive holding every model parameter and buffer keyed by its
// hierarchical name, the full spec set that produced it, the training epoch,
// the validation accuracy, and (for resumable checkpoints) optimizer state.
struct Checkpoint {
  BackboneSpec backbone;
  HeadSpec head;
  ShiftConfig shift;
  CropSpec crop;
  std::int64_t epoch = -1;
  double val_accuracy = 0.0;
  std::map<std::string, Tensor> model_state;
  std::map<std::string, Tensor> optimizer_state;
};

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

Checkpoint make_checkpoint(Model& model, const CropSpec& crop,
                           std::int64_t epoch, double val_accuracy);

// Overlays backbone tensors from a checkpoint-format weights file onto the
// model. Classifier (fc.*) entries are ignored, keeping the head freshly
// initialized; every other entry must match a model tensor by name and shape.
void load_pretrained_backbone(Model& model,
                              const std::filesystem::path& weights_file);

// Human-readable line-by-line description of the spec set; cmd_infer prints
// a diff of these when a checkpoint disagrees with the requested config.
std::vector<std::string> describe_specs(const BackboneSpec& backbone,
                                        const HeadSpec& head,
                                        const ShiftConfig& shift,
                                        const CropSpec& crop);

}  // namespace ear
