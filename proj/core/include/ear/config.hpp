#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ear/manifest.hpp"
#include "ear/model.hpp"
#include "ear/sampler.hpp"
#include "ear/shift.hpp"
#include "ear/trainer.hpp"

namespace ear {

enum class Profile { paper, desk };

std::string to_string(Profile p);
Profile profile_from_string(const std::string& s);

struct PathsConfig {
  // (source dataset, frame-store root) pairs, scanned in order.
  std::vector<std::pair<SourceDataset, std::string>> roots;
  std::string mapping_file;
  std::string filter_file;
  std::string output_dir;
};

// The full declarative run configuration. A config file starts from its
// profile's defaults and overrides the keys it names, so an echoed config
// always materializes every default. One top-level seed fans out into the
// sampling, init, shuffle and split substreams; resolve() mirrors it into
// the per-module seed fields.
struct RunConfig {
  Profile profile = Profile::desk;
  std::uint64_t seed = 0;
  PathsConfig paths;
  SampleSpec sample;
  CropSpec crop;
  BackboneSpec backbone;
  HeadSpec head;
  ShiftConfig shift;
  TrainConfig train;

  // The paper training recipe: 8 segments, shift divisor 8 at the residual
  // blocks, resnext50_32x4d, lr 0.001 decayed at epochs 20 and 40, weight
  // decay 1e-4, gradient clip norm 20, 100 epochs, batch 4, 32 workers,
  // dropout 0.5, single 224 center crop from a 256 short-side resize.
  static RunConfig paper_profile();

  // Desk-scale profile: tiny_residual, 4 segments, 32-pixel crops, short
  // schedules. Sized so synthetic-data runs finish in minutes on a CPU.
  static RunConfig desk_profile();

  static RunConfig from_profile(Profile profile);
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& file);

  // Canonical JSON echo: sorted keys, two-space indent, trailing newline.
  // Contains every field the code consults; no hidden defaults.
  std::string to_json_text() const;

  // Applies a dotted-path override such as ("train.learning_rate", "0.01").
  // The key must exist in the schema; the value is parsed as JSON when
  // possible and as a bare string otherwise.
  void apply_override(const std::string& dotted_key, const std::string& value);

  // Mirrors the top-level seed into sample.seed and train.seed and the head
  // dropout into train.dropout_rate.
  void resolve();

  // All violations at once, cross-field checks included.
  std::vector<std::string> validate() const;
  void validate_or_throw() const;
};

}  // namespace ear
