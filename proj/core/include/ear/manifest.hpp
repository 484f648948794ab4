#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ear {

// The six EAR action categories.
enum class EarLabel : int {
  locomotion = 0,
  manipulation = 1,
  hygiene = 2,
  eating = 3,
  communication = 4,
  leisure = 5,
};

inline constexpr int kNumEarLabels = 6;

std::string to_string(EarLabel label);
EarLabel ear_label_from_string(const std::string& s);
const std::vector<std::string>& ear_label_names();

enum class SourceDataset {
  toyota_smarthome,
  etri_activity3d,
  etri_livinglab,
  synthetic,
};

std::string to_string(SourceDataset d);
SourceDataset source_dataset_from_string(const std::string& s);

// One video's identity and provenance. frame_dir points at a frame store:
// a directory of contiguously numbered img_00000.jpg .. img_{n-1}.jpg files.
struct ManifestEntry {
  std::string video_id;
  std::filesystem::path frame_dir;
  std::int64_t frame_count = 0;
  SourceDataset source_dataset = SourceDataset::synthetic;
  std::string source_label;
  std::optional<EarLabel> ear_label;
  std::optional<std::string> subject_id;
};

// Maps (source dataset, source label) pairs onto EAR categories. Patterns
// are literal matches plus '*', which matches any run of characters. The
// first matching rule wins.
struct LabelRule {
  SourceDataset dataset;
  std::string pattern;
  EarLabel target;
};

enum class UnmappedPolicy { error, drop };

struct LabelMapping {
  std::vector<LabelRule> rules;
  UnmappedPolicy unmapped_policy = UnmappedPolicy::error;

  // First matching rule's target, or nullopt.
  std::optional<EarLabel> map(SourceDataset dataset,
                              const std::string& source_label) const;

  // Rejects duplicate (dataset, pattern) pairs with different targets.
  void validate() const;
};

bool glob_match(const std::string& pattern, const std::string& text);

// Parses a mapping file: one `source_dataset,source_label_pattern,ear_label`
// rule per line, '#' comments and blank lines ignored.
LabelMapping load_label_mapping(const std::filesystem::path& file);

// Inclusive subject range for one dataset, e.g. P091..P100. Bounds must
// share their non-numeric prefix; matching compares the numeric suffixes.
struct SubsetFilter {
  SourceDataset dataset;
  std::string subject_lo;
  std::string subject_hi;

  void validate() const;
  bool contains(const std::string& subject_id) const;
};

// Parses a filter file: one `source_dataset,subject_lo,subject_hi` line per
// range, '#' comments and blank lines ignored. An empty file means no
// restriction.
std::vector<SubsetFilter> load_subset_filters(const std::filesystem::path& file);

using Manifest = std::vector<ManifestEntry>;

struct ManifestRoot {
  std::filesystem::path path;
  SourceDataset dataset;
};

// Scans each root for video directories, extracts (source_label, subject_id)
// from directory names, applies subject filters, and maps labels onto the
// six categories. Entries come back sorted by video_id. Duplicate video ids
// across roots are a ValidationError; an unmapped label aborts with the
// offending (dataset, label) pair when the policy is `error`.
//
// Directory-name conventions, by dataset:
//   - source_label is the substring before the first '_'
//     (e.g. "Eat.Attable_p02_r00" -> "Eat.Attable", "A001_P091_G001" -> "A001")
//   - subject_id is the first '_'-separated token of the form
//     letter-prefix + digits starting with 'P' or 'p' (e.g. "P091", "p02")
Manifest build_manifest(const std::vector<ManifestRoot>& roots,
                        const LabelMapping& mapping,
                        const std::vector<SubsetFilter>& filters);

// CSV persistence with the fixed header
//   video_id,frame_dir,frame_count,source_dataset,source_label,ear_label,subject_id
// Empty optional fields serialize as empty cells.
void write_manifest_csv(const Manifest& manifest,
                        const std::filesystem::path& file);
Manifest read_manifest_csv(const std::filesystem::path& file);

struct SplitReport {
  // Categories with fewer than two videos, placed entirely in train.
  std::vector<EarLabel> underfilled_categories;
  std::map<EarLabel, std::int64_t> train_counts;
  std::map<EarLabel, std::int64_t> validation_counts;
};

struct ManifestSplit {
  Manifest train;
  Manifest validation;
  SplitReport report;
};

// Deterministic seed-keyed partition, stratified by ear_label. Every entry
// must carry an ear_label. Per category with n >= 2 videos, the validation
// side gets clamp(round(n * holdout_fraction), 1, n - 1) videos.
ManifestSplit split_manifest(const Manifest& manifest, double holdout_fraction,
                             std::uint64_t seed);

std::map<EarLabel, std::int64_t> category_counts(const Manifest& manifest);

}  // namespace ear
