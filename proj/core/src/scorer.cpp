#include "ear/scorer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "ear/errors.hpp"
#include "ear/rng.hpp"
#include "parallel.hpp"

namespace fs = std::filesystem;

namespace ear {

std::vector<SubmissionRow> predict_all(Model& model, const Manifest& manifest,
                                       const CropSpec& crop, bool strict,
                                       PredictReport* report,
                                       std::int64_t batch_size,
                                       std::int64_t loader_workers,
                                       FrameCache* cache) {
  const std::int64_t segments = model.shift_config().segments;

  Manifest ordered = manifest;
  std::sort(ordered.begin(), ordered.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return a.video_id < b.video_id;
            });

  std::vector<SubmissionRow> rows;
  rows.reserve(ordered.size());
  std::vector<std::string> failed;
  std::vector<std::int64_t> class_votes(static_cast<std::size_t>(kNumEarLabels), 0);

  SampleSpec spec;
  spec.segments = segments;
  spec.mode = SampleMode::eval_center;
  const std::int64_t S = crop.crop_size;

  for (std::size_t start = 0; start < ordered.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(ordered.size(), start + static_cast<std::size_t>(batch_size));
    const auto chunk = static_cast<std::int64_t>(end - start);

    // Clip decoding fans out across read-only loaders; inference itself is
    // one forward over the surviving clips.
    std::vector<Tensor> clips(static_cast<std::size_t>(chunk));
    std::vector<std::string> errors(static_cast<std::size_t>(chunk));
    detail::run_parallel(chunk, loader_workers, [&](std::int64_t i) {
      const ManifestEntry& entry = ordered[start + static_cast<std::size_t>(i)];
      try {
        clips[static_cast<std::size_t>(i)] = load_clip(entry, spec, crop, cache);
      } catch (const IngestError& e) {
        errors[static_cast<std::size_t>(i)] = e.what();
      }
    });

    std::vector<std::pair<std::string, const Tensor*>> loaded;
    for (std::int64_t i = 0; i < chunk; ++i) {
      const ManifestEntry& entry = ordered[start + static_cast<std::size_t>(i)];
      if (!errors[static_cast<std::size_t>(i)].empty()) {
        if (strict) {
          throw IngestError("predict_all: video '" + entry.video_id +
                            "' unreadable: " + errors[static_cast<std::size_t>(i)]);
        }
        failed.push_back(entry.video_id);
        continue;
      }
      loaded.emplace_back(entry.video_id, &clips[static_cast<std::size_t>(i)]);
    }
    if (loaded.empty()) continue;

    const auto B = static_cast<std::int64_t>(loaded.size());
    Tensor batch({B, segments, 3, S, S});
    for (std::int64_t i = 0; i < B; ++i) {
      const Tensor& clip = *loaded[static_cast<std::size_t>(i)].second;
      std::copy(clip.data(), clip.data() + clip.numel(),
                batch.data() + i * clip.numel());
    }
    Tensor scores = model.forward_clip(batch, Mode::eval);
    const std::int64_t K = scores.dim(1);
    for (std::int64_t i = 0; i < B; ++i) {
      const Scalar* row = scores.data() + i * K;
      std::int64_t arg = 0;
      for (std::int64_t k = 1; k < K; ++k) {
        if (row[k] > row[arg]) arg = k;
      }
      rows.push_back(SubmissionRow{loaded[static_cast<std::size_t>(i)].first,
                                   static_cast<EarLabel>(arg)});
      ++class_votes[static_cast<std::size_t>(arg)];
    }
  }

  // Lenient fallback: the most frequent predicted class, ties to the lowest
  // class index.
  if (!failed.empty()) {
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < kNumEarLabels; ++k) {
      if (class_votes[static_cast<std::size_t>(k)] >
          class_votes[static_cast<std::size_t>(best)]) {
        best = k;
      }
    }
    for (const auto& id : failed) {
      rows.push_back(SubmissionRow{id, static_cast<EarLabel>(best)});
    }
  }

  std::sort(rows.begin(), rows.end(),
            [](const SubmissionRow& a, const SubmissionRow& b) {
              return a.video_id < b.video_id;
            });

  if (report) {
    report->total = static_cast<std::int64_t>(rows.size());
    report->fallbacks = static_cast<std::int64_t>(failed.size());
    report->fallback_ids = failed;
  }
  return rows;
}

void write_submission_csv(const std::vector<SubmissionRow>& rows,
                          const fs::path& file) {
  std::vector<SubmissionRow> ordered = rows;
  std::sort(ordered.begin(), ordered.end(),
            [](const SubmissionRow& a, const SubmissionRow& b) {
              return a.video_id < b.video_id;
            });
  std::ofstream out(file, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write submission: " + file.string());
  }
  out << "video_id,predicted\n";
  for (const auto& row : ordered) {
    out << row.video_id << ',' << to_string(row.predicted) << '\n';
  }
}

std::vector<SubmissionRow> read_submission_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open submission: " + file.string());
  }
  std::string line;
  if (!std::getline(in, line) ||
      (line != "video_id,predicted" && line != "video_id,predicted\r")) {
    throw ValidationError("unexpected submission header in " + file.string());
  }
  std::vector<SubmissionRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ValidationError("malformed submission row: '" + line + "'");
    }
    SubmissionRow row;
    row.video_id = line.substr(0, comma);
    row.predicted = ear_label_from_string(line.substr(comma + 1));
    if (row.video_id.empty()) {
      throw ValidationError("submission row with empty video_id");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ground_truth_csv(const std::map<std::string, EarLabel>& truth,
                            const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write ground truth: " + file.string());
  }
  out << "video_id,ear_label\n";
  for (const auto& [id, label] : truth) {
    out << id << ',' << to_string(label) << '\n';
  }
}

std::map<std::string, EarLabel> read_ground_truth_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open ground truth: " + file.string());
  }
  std::string line;
  if (!std::getline(in, line) ||
      (line != "video_id,ear_label" && line != "video_id,ear_label\r")) {
    throw ValidationError("unexpected ground-truth header in " + file.string());
  }
  std::map<std::string, EarLabel> truth;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ValidationError("malformed ground-truth row: '" + line + "'");
    }
    const std::string id = line.substr(0, comma);
    if (!truth.emplace(id, ear_label_from_string(line.substr(comma + 1))).second) {
      throw ValidationError("duplicate video_id in ground truth: '" + id + "'");
    }
  }
  return truth;
}

namespace {

void validate_predictions(const std::vector<SubmissionRow>& predictions,
                          const std::map<std::string, EarLabel>& ground_truth) {
  std::vector<std::string> offenders;
  std::set<std::string> seen;
  for (const auto& row : predictions) {
    if (!seen.insert(row.video_id).second) {
      offenders.push_back("duplicate prediction: " + row.video_id);
    }
    if (!ground_truth.count(row.video_id)) {
      offenders.push_back("prediction without ground truth: " + row.video_id);
    }
  }
  for (const auto& [id, label] : ground_truth) {
    if (!seen.count(id)) {
      offenders.push_back("missing prediction: " + id);
    }
  }
  if (!offenders.empty()) {
    std::string msg = "score validation failed:";
    for (const auto& o : offenders) msg += "\n  - " + o;
    throw ValidationError(msg);
  }
}

}  // namespace

double score(const std::vector<SubmissionRow>& predictions,
             const std::map<std::string, EarLabel>& ground_truth) {
  validate_predictions(predictions, ground_truth);
  if (predictions.empty()) {
    throw ValidationError("score: empty prediction set");
  }
  std::int64_t correct = 0;
  for (const auto& row : predictions) {
    if (ground_truth.at(row.video_id) == row.predicted) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(predictions.size());
}

bool SplitAssignment::public_side(const std::string& video_id) const {
  auto it = is_public.find(video_id);
  if (it == is_public.end()) {
    throw ValidationError("split assignment does not cover video_id '" +
                          video_id + "'");
  }
  return it->second;
}

SplitAssignment make_split_assignment(const std::vector<std::string>& video_ids,
                                      std::uint64_t seed) {
  std::set<std::string> unique(video_ids.begin(), video_ids.end());
  if (unique.size() != video_ids.size()) {
    throw ValidationError("split assignment input contains duplicate ids");
  }

  SplitAssignment assignment;
  // (hash, id) pairs; the hash drives both the parity and the deterministic
  // rebalancing order.
  std::vector<std::pair<std::uint64_t, const std::string*>> hashed;
  hashed.reserve(unique.size());
  for (const auto& id : unique) {
    const std::uint64_t h = splitmix64(splitmix64(seed) ^ stable_hash(id));
    assignment.is_public[id] = (h & 1ULL) == 0;
    hashed.emplace_back(h, &id);
  }

  std::int64_t publics = 0;
  for (const auto& [id, pub] : assignment.is_public) {
    if (pub) ++publics;
  }
  const auto total = static_cast<std::int64_t>(unique.size());
  const std::int64_t diff = publics - (total - publics);

  if (diff > 1 || diff < -1) {
    const bool shrink_public = diff > 0;
    std::int64_t moves = (shrink_public ? diff : -diff) / 2;
    std::sort(hashed.begin(), hashed.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return *a.second < *b.second;
              });
    for (const auto& [h, id] : hashed) {
      if (moves == 0) break;
      bool& pub = assignment.is_public[*id];
      if (pub == shrink_public) {
        pub = !pub;
        --moves;
      }
    }
  }
  return assignment;
}

SplitScore split_score(const std::vector<SubmissionRow>& predictions,
                       const std::map<std::string, EarLabel>& ground_truth,
                       const SplitAssignment& assignment) {
  validate_predictions(predictions, ground_truth);
  std::int64_t pub_correct = 0, pub_total = 0;
  std::int64_t priv_correct = 0, priv_total = 0;
  for (const auto& row : predictions) {
    const bool correct = ground_truth.at(row.video_id) == row.predicted;
    if (assignment.public_side(row.video_id)) {
      ++pub_total;
      if (correct) ++pub_correct;
    } else {
      ++priv_total;
      if (correct) ++priv_correct;
    }
  }
  SplitScore result;
  result.public_count = pub_total;
  result.private_count = priv_total;
  result.public_accuracy =
      pub_total ? static_cast<double>(pub_correct) / static_cast<double>(pub_total)
                : 0.0;
  result.private_accuracy =
      priv_total
          ? static_cast<double>(priv_correct) / static_cast<double>(priv_total)
          : 0.0;
  return result;
}

ConfusionMatrix confusion_matrix(
    const std::vector<SubmissionRow>& predictions,
    const std::map<std::string, EarLabel>& ground_truth) {
  validate_predictions(predictions, ground_truth);
  ConfusionMatrix matrix;
  for (const auto& row : predictions) {
    const auto truth = ground_truth.at(row.video_id);
    ++matrix.counts[static_cast<std::size_t>(truth)]
                   [static_cast<std::size_t>(row.predicted)];
  }
  return matrix;
}

std::string render_confusion(const ConfusionMatrix& matrix) {
  std::size_t width = 0;
  for (const auto& name : ear_label_names()) {
    width = std::max(width, name.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width) + 2) << "truth\\pred";
  for (const auto& name : ear_label_names()) {
    os << std::right << std::setw(static_cast<int>(width) + 2) << name;
  }
  os << '\n';
  for (int t = 0; t < kNumEarLabels; ++t) {
    os << std::left << std::setw(static_cast<int>(width) + 2)
       << ear_label_names()[static_cast<std::size_t>(t)];
    for (int p = 0; p < kNumEarLabels; ++p) {
      os << std::right << std::setw(static_cast<int>(width) + 2)
         << matrix.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    os << '\n';
  }
  return os.str();
}

std::string render_leaderboard(const std::vector<LeaderboardRow>& rows) {
  for (const auto& row : rows) {
    if (row.public_score < 0.0 || row.public_score > 1.0 ||
        row.private_score < 0.0 || row.private_score > 1.0) {
      throw ValidationError("leaderboard score out of [0,1] for '" + row.name +
                            "'");
    }
  }
  std::vector<LeaderboardRow> ordered = rows;
  std::sort(ordered.begin(), ordered.end(),
            [](const LeaderboardRow& a, const LeaderboardRow& b) {
              if (a.private_score != b.private_score) {
                return a.private_score > b.private_score;
              }
              if (a.public_score != b.public_score) {
                return a.public_score > b.public_score;
              }
              return a.name < b.name;
            });

  std::size_t name_width = std::string("method").size();
  for (const auto& row : ordered) {
    name_width = std::max(name_width, row.name.size());
  }

  std::ostringstream os;
  os << std::left << std::setw(6) << "rank" << std::setw(static_cast<int>(name_width) + 2)
     << "method" << std::setw(9) << "public" << "private" << '\n';
  char buf[16];
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    os << std::left << std::setw(6) << (i + 1)
       << std::setw(static_cast<int>(name_width) + 2) << ordered[i].name;
    std::snprintf(buf, sizeof(buf), "%.5f", ordered[i].public_score);
    os << std::setw(9) << buf;
    std::snprintf(buf, sizeof(buf), "%.5f", ordered[i].private_score);
    os << buf << '\n';
  }
  return os.str();
}

std::vector<LeaderboardRow> read_leaderboard_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open leaderboard fixture: " + file.string());
  }
  std::string line;
  if (!std::getline(in, line) ||
      (line != "name,public,private" && line != "name,public,private\r")) {
    throw ValidationError("unexpected leaderboard header in " + file.string());
  }
  std::vector<LeaderboardRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name, pub, priv;
    if (!std::getline(is, name, ',') || !std::getline(is, pub, ',') ||
        !std::getline(is, priv, ',')) {
      throw ValidationError("malformed leaderboard row: '" + line + "'");
    }
    rows.push_back(LeaderboardRow{name, std::stod(pub), std::stod(priv)});
  }
  return rows;
}

}  // namespace ear
