#include "ear/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ear/errors.hpp"
#include "ear/rng.hpp"

namespace fs = std::filesystem;

namespace ear {

namespace {

const std::vector<std::string> kEarLabelNames = {
    "locomotion", "manipulation", "hygiene",
    "eating",     "communication", "leisure"};

const std::vector<std::string> kDatasetNames = {
    "toyota_smarthome", "etri_activity3d", "etri_livinglab", "synthetic"};

std::string strip(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// Splits a subject id into (prefix, numeric value, digit count).
struct SubjectKey {
  std::string prefix;
  std::int64_t number = -1;
};

std::optional<SubjectKey> parse_subject(const std::string& s) {
  std::size_t i = s.size();
  while (i > 0 && std::isdigit(static_cast<unsigned char>(s[i - 1]))) --i;
  if (i == s.size()) return std::nullopt;  // no numeric suffix
  SubjectKey key;
  key.prefix = s.substr(0, i);
  key.number = std::stoll(s.substr(i));
  return key;
}

std::vector<std::string> split_tokens(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream is(s);
  while (std::getline(is, tok, sep)) out.push_back(tok);
  return out;
}

bool looks_like_subject_token(const std::string& tok) {
  if (tok.size() < 2) return false;
  if (tok[0] != 'P' && tok[0] != 'p') return false;
  return std::all_of(tok.begin() + 1, tok.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c));
  });
}

}  // namespace

std::string to_string(EarLabel label) {
  return kEarLabelNames.at(static_cast<std::size_t>(label));
}

EarLabel ear_label_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kEarLabelNames.size(); ++i) {
    if (kEarLabelNames[i] == s) return static_cast<EarLabel>(i);
  }
  throw ValidationError("unknown EAR category: '" + s + "'");
}

const std::vector<std::string>& ear_label_names() { return kEarLabelNames; }

std::string to_string(SourceDataset d) {
  return kDatasetNames.at(static_cast<std::size_t>(d));
}

SourceDataset source_dataset_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kDatasetNames.size(); ++i) {
    if (kDatasetNames[i] == s) return static_cast<SourceDataset>(i);
  }
  throw ConfigError("unknown source dataset: '" + s + "'");
}

bool glob_match(const std::string& pattern, const std::string& text) {
  // Iterative '*' glob with backtracking; '*' matches any run of characters.
  std::size_t p = 0, t = 0;
  std::size_t star = std::string::npos, star_t = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      star_t = t;
    } else if (star != std::string::npos) {
      p = star + 1;
      t = ++star_t;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::optional<EarLabel> LabelMapping::map(SourceDataset dataset,
                                          const std::string& source_label) const {
  for (const auto& rule : rules) {
    if (rule.dataset == dataset && glob_match(rule.pattern, source_label)) {
      return rule.target;
    }
  }
  return std::nullopt;
}

void LabelMapping::validate() const {
  std::map<std::pair<int, std::string>, EarLabel> seen;
  for (const auto& rule : rules) {
    const auto key = std::make_pair(static_cast<int>(rule.dataset), rule.pattern);
    auto it = seen.find(key);
    if (it != seen.end() && it->second != rule.target) {
      throw ConfigError("conflicting mapping rules for (" +
                        to_string(rule.dataset) + ", '" + rule.pattern +
                        "'): " + to_string(it->second) + " vs " +
                        to_string(rule.target));
    }
    seen.emplace(key, rule.target);
  }
}

LabelMapping load_label_mapping(const fs::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open label mapping file: " + file.string());
  }
  LabelMapping mapping;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = strip(line);
    if (s.empty() || s[0] == '#') continue;
    const auto cells = split_csv_line(s);
    if (cells.size() != 3) {
      throw ConfigError(file.string() + ":" + std::to_string(line_no) +
                        ": expected `source_dataset,pattern,ear_label`");
    }
    mapping.rules.push_back(LabelRule{source_dataset_from_string(strip(cells[0])),
                                      strip(cells[1]),
                                      ear_label_from_string(strip(cells[2]))});
  }
  mapping.validate();
  return mapping;
}

void SubsetFilter::validate() const {
  const auto lo = parse_subject(subject_lo);
  const auto hi = parse_subject(subject_hi);
  if (!lo || !hi) {
    throw ConfigError("subset filter bounds need a numeric suffix: '" +
                      subject_lo + "'..'" + subject_hi + "'");
  }
  if (lo->prefix != hi->prefix) {
    throw ConfigError("subset filter bounds must share a prefix: '" +
                      subject_lo + "' vs '" + subject_hi + "'");
  }
  if (lo->number > hi->number) {
    throw ConfigError("subset filter range is empty: '" + subject_lo +
                      "'..'" + subject_hi + "'");
  }
}

bool SubsetFilter::contains(const std::string& subject_id) const {
  const auto key = parse_subject(subject_id);
  if (!key) return false;
  const auto lo = parse_subject(subject_lo);
  const auto hi = parse_subject(subject_hi);
  if (key->prefix != lo->prefix) return false;
  return key->number >= lo->number && key->number <= hi->number;
}

std::vector<SubsetFilter> load_subset_filters(const fs::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open filter file: " + file.string());
  }
  std::vector<SubsetFilter> filters;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = strip(line);
    if (s.empty() || s[0] == '#') continue;
    const auto cells = split_csv_line(s);
    if (cells.size() != 3) {
      throw ConfigError(file.string() + ":" + std::to_string(line_no) +
                        ": expected `source_dataset,subject_lo,subject_hi`");
    }
    SubsetFilter f{source_dataset_from_string(strip(cells[0])), strip(cells[1]),
                   strip(cells[2])};
    f.validate();
    filters.push_back(std::move(f));
  }
  return filters;
}

namespace {

// Counts img_*.jpg frames in a video directory and checks the numbering is
// contiguous from img_00000.jpg.
std::int64_t count_frames(const fs::path& dir, const std::string& video_id) {
  std::set<std::int64_t> indices;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() != 13 || name.rfind("img_", 0) != 0 ||
        name.substr(9) != ".jpg") {
      continue;
    }
    const std::string digits = name.substr(4, 5);
    if (!std::all_of(digits.begin(), digits.end(), [](char c) {
          return std::isdigit(static_cast<unsigned char>(c));
        })) {
      continue;
    }
    indices.insert(std::stoll(digits));
  }
  if (indices.empty()) return 0;
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  if (*indices.begin() != 0 || *indices.rbegin() != n - 1) {
    throw IngestError("frame store for video '" + video_id +
                      "' is not contiguously numbered from img_00000.jpg (" +
                      dir.string() + ")");
  }
  return n;
}

}  // namespace

Manifest build_manifest(const std::vector<ManifestRoot>& roots,
                        const LabelMapping& mapping,
                        const std::vector<SubsetFilter>& filters) {
  mapping.validate();
  Manifest manifest;
  std::set<std::string> seen_ids;

  for (const auto& root : roots) {
    if (!fs::is_directory(root.path)) {
      throw ConfigError("manifest root does not exist: " + root.path.string());
    }
    bool dataset_has_filters = false;
    for (const auto& f : filters) {
      if (f.dataset == root.dataset) dataset_has_filters = true;
    }

    std::vector<fs::path> video_dirs;
    for (const auto& e : fs::directory_iterator(root.path)) {
      if (e.is_directory()) video_dirs.push_back(e.path());
    }
    std::sort(video_dirs.begin(), video_dirs.end());

    for (const auto& dir : video_dirs) {
      ManifestEntry entry;
      entry.video_id = dir.filename().string();
      entry.frame_dir = dir;
      entry.source_dataset = root.dataset;

      const auto tokens = split_tokens(entry.video_id, '_');
      entry.source_label = tokens.empty() ? entry.video_id : tokens.front();
      for (const auto& tok : tokens) {
        if (looks_like_subject_token(tok)) {
          entry.subject_id = tok;
          break;
        }
      }

      if (dataset_has_filters) {
        bool inside = false;
        for (const auto& f : filters) {
          if (f.dataset == root.dataset && entry.subject_id &&
              f.contains(*entry.subject_id)) {
            inside = true;
            break;
          }
        }
        if (!inside) continue;
      }

      const auto mapped = mapping.map(root.dataset, entry.source_label);
      if (!mapped) {
        if (mapping.unmapped_policy == UnmappedPolicy::error) {
          throw ValidationError("no mapping rule for (" +
                                to_string(root.dataset) + ", '" +
                                entry.source_label + "') from video '" +
                                entry.video_id + "'");
        }
        continue;  // drop
      }
      entry.ear_label = *mapped;

      entry.frame_count = count_frames(dir, entry.video_id);
      if (entry.frame_count == 0) {
        throw IngestError("video '" + entry.video_id +
                          "' has no img_*.jpg frames in " + dir.string());
      }

      if (!seen_ids.insert(entry.video_id).second) {
        throw ValidationError("duplicate video_id across roots: '" +
                              entry.video_id + "'");
      }
      manifest.push_back(std::move(entry));
    }
  }

  std::sort(manifest.begin(), manifest.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return a.video_id < b.video_id;
            });
  return manifest;
}

void write_manifest_csv(const Manifest& manifest, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write manifest: " + file.string());
  }
  out << "video_id,frame_dir,frame_count,source_dataset,source_label,"
         "ear_label,subject_id\n";
  for (const auto& e : manifest) {
    out << e.video_id << ',' << e.frame_dir.string() << ',' << e.frame_count
        << ',' << to_string(e.source_dataset) << ',' << e.source_label << ','
        << (e.ear_label ? to_string(*e.ear_label) : std::string()) << ','
        << (e.subject_id ? *e.subject_id : std::string()) << '\n';
  }
}

Manifest read_manifest_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open manifest: " + file.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ValidationError("manifest is empty: " + file.string());
  }
  if (strip(line) !=
      "video_id,frame_dir,frame_count,source_dataset,source_label,ear_label,"
      "subject_id") {
    throw ValidationError("unexpected manifest header in " + file.string());
  }
  Manifest manifest;
  std::int64_t line_no = 1;
  std::set<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    const auto cells = split_csv_line(strip(line));
    if (cells.size() != 7) {
      throw ValidationError(file.string() + ":" + std::to_string(line_no) +
                            ": expected 7 cells, got " +
                            std::to_string(cells.size()));
    }
    ManifestEntry e;
    e.video_id = cells[0];
    e.frame_dir = cells[1];
    e.frame_count = std::stoll(cells[2]);
    e.source_dataset = source_dataset_from_string(cells[3]);
    e.source_label = cells[4];
    if (!cells[5].empty()) e.ear_label = ear_label_from_string(cells[5]);
    if (!cells[6].empty()) e.subject_id = cells[6];
    if (!seen_ids.insert(e.video_id).second) {
      throw ValidationError("duplicate video_id in manifest: '" + e.video_id +
                            "'");
    }
    manifest.push_back(std::move(e));
  }
  return manifest;
}

ManifestSplit split_manifest(const Manifest& manifest, double holdout_fraction,
                             std::uint64_t seed) {
  if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must lie in (0,1), got " +
                      std::to_string(holdout_fraction));
  }
  std::map<EarLabel, std::vector<const ManifestEntry*>> by_label;
  for (const auto& e : manifest) {
    if (!e.ear_label) {
      throw ValidationError("split_manifest: video '" + e.video_id +
                            "' has no ear_label");
    }
    by_label[*e.ear_label].push_back(&e);
  }

  ManifestSplit split;
  for (auto& [label, entries] : by_label) {
    std::sort(entries.begin(), entries.end(),
              [](const ManifestEntry* a, const ManifestEntry* b) {
                return a->video_id < b->video_id;
              });
    const std::int64_t n = static_cast<std::int64_t>(entries.size());
    if (n < 2) {
      for (const auto* e : entries) split.train.push_back(*e);
      split.report.underfilled_categories.push_back(label);
      split.report.train_counts[label] = n;
      split.report.validation_counts[label] = 0;
      continue;
    }
    std::int64_t n_val = static_cast<std::int64_t>(
        std::llround(static_cast<double>(n) * holdout_fraction));
    n_val = std::clamp<std::int64_t>(n_val, 1, n - 1);

    auto rng = RngStream::substream(seed, "split",
                                    static_cast<std::uint64_t>(label));
    rng.shuffle(entries);
    for (std::int64_t i = 0; i < n; ++i) {
      if (i < n_val) {
        split.validation.push_back(*entries[static_cast<std::size_t>(i)]);
      } else {
        split.train.push_back(*entries[static_cast<std::size_t>(i)]);
      }
    }
    split.report.train_counts[label] = n - n_val;
    split.report.validation_counts[label] = n_val;
  }

  auto by_id = [](const ManifestEntry& a, const ManifestEntry& b) {
    return a.video_id < b.video_id;
  };
  std::sort(split.train.begin(), split.train.end(), by_id);
  std::sort(split.validation.begin(), split.validation.end(), by_id);
  return split;
}

std::map<EarLabel, std::int64_t> category_counts(const Manifest& manifest) {
  std::map<EarLabel, std::int64_t> counts;
  for (const auto& e : manifest) {
    if (e.ear_label) ++counts[*e.ear_label];
  }
  return counts;
}

}  // namespace ear
