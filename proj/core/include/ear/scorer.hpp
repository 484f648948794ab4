#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ear/manifest.hpp"
#include "ear/model.hpp"
#include "ear/sampler.hpp"

namespace ear {

struct SubmissionRow {
  std::string video_id;
  EarLabel predicted = EarLabel::locomotion;
};

struct PredictReport {
  std::int64_t total = 0;
  std::int64_t fallbacks = 0;  // unreadable videos resolved in lenient mode
  std::vector<std::string> fallback_ids;
};

// Argmax prediction per manifest entry under eval_center sampling and a
// center crop; rows sorted by video_id; deterministic. Unreadable videos
// abort in strict mode; lenient mode assigns the most frequent class among
// the readable predictions (ties to the lowest class index) and counts the
// fallback in the report.
std::vector<SubmissionRow> predict_all(Model& model, const Manifest& manifest,
                                       const CropSpec& crop,
                                       bool strict = true,
                                       PredictReport* report = nullptr,
                                       std::int64_t batch_size = 4,
                                       std::int64_t loader_workers = 1,
                                       FrameCache* cache = nullptr);

// Submission CSV: header `video_id,predicted`, LF endings, sorted rows.
void write_submission_csv(const std::vector<SubmissionRow>& rows,
                          const std::filesystem::path& file);
std::vector<SubmissionRow> read_submission_csv(const std::filesystem::path& file);

// Ground-truth CSV: header `video_id,ear_label`.
void write_ground_truth_csv(const std::map<std::string, EarLabel>& truth,
                            const std::filesystem::path& file);
std::map<std::string, EarLabel> read_ground_truth_csv(
    const std::filesystem::path& file);

// Average accuracy: correct/total computed in integer arithmetic and
// converted to double once. Every prediction must exist in the ground truth
// and every ground-truth id must be predicted exactly once; violations throw
// ValidationError listing the offenders.
double score(const std::vector<SubmissionRow>& predictions,
             const std::map<std::string, EarLabel>& ground_truth);

// Deterministic public/private partition of an id set: parity of a stable
// 64-bit hash of (seed, video_id), then a minimal deterministic post-pass so
// the two sides differ by at most one id. Stable under input reordering.
struct SplitAssignment {
  std::map<std::string, bool> is_public;

  bool public_side(const std::string& video_id) const;
};

SplitAssignment make_split_assignment(const std::vector<std::string>& video_ids,
                                      std::uint64_t seed);

struct SplitScore {
  double public_accuracy = 0.0;
  double private_accuracy = 0.0;
  std::int64_t public_count = 0;
  std::int64_t private_count = 0;
};

// score() restricted to each partition; the assignment must cover every
// ground-truth id.
SplitScore split_score(const std::vector<SubmissionRow>& predictions,
                       const std::map<std::string, EarLabel>& ground_truth,
                       const SplitAssignment& assignment);

// Diagnostic 6x6 confusion counts: rows are ground truth, columns are
// predictions. A report extra, not a scored output.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumEarLabels>, kNumEarLabels> counts{};

  std::int64_t at(EarLabel truth, EarLabel predicted) const {
    return counts[static_cast<std::size_t>(truth)]
                 [static_cast<std::size_t>(predicted)];
  }
};

ConfusionMatrix confusion_matrix(const std::vector<SubmissionRow>& predictions,
                                 const std::map<std::string, EarLabel>& ground_truth);

std::string render_confusion(const ConfusionMatrix& matrix);

struct LeaderboardRow {
  std::string name;
  double public_score = 0.0;
  double private_score = 0.0;
};

// Fixed-width table sorted by private score descending; ties fall back to
// public score descending, then name ascending. Scores render with five
// decimals. Out-of-range scores throw ValidationError.
std::string render_leaderboard(const std::vector<LeaderboardRow>& rows);

std::vector<LeaderboardRow> read_leaderboard_csv(
    const std::filesystem::path& file);

}  // namespace ear
