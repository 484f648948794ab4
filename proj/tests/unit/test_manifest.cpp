#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ear/errors.hpp"
#include "ear/manifest.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using ear::EarLabel;
using ear::SourceDataset;

namespace {

void write_store(const fs::path& dir, std::int64_t frames = 2) {
  eartest::write_constant_store(dir, frames, 90, 20, 24);
}

ear::LabelMapping etri_mapping() {
  ear::LabelMapping mapping;
  mapping.rules.push_back(
      {SourceDataset::etri_activity3d, "A*", EarLabel::eating});
  return mapping;
}

}  // namespace

TEST_CASE("glob_match: literal plus star wildcard") {
  CHECK(ear::glob_match("Walk", "Walk"));
  CHECK_FALSE(ear::glob_match("Walk", "Walking"));
  CHECK(ear::glob_match("Walk*", "Walking"));
  CHECK(ear::glob_match("*", "anything"));
  CHECK(ear::glob_match("A0*1", "A001"));
  CHECK_FALSE(ear::glob_match("A0*2", "A001"));
  CHECK(ear::glob_match("Drink.*", "Drink.Frombottle"));
}

TEST_CASE("LabelMapping: first matching rule wins; duplicates rejected") {
  ear::LabelMapping mapping;
  mapping.rules.push_back({SourceDataset::synthetic, "a*", EarLabel::eating});
  mapping.rules.push_back({SourceDataset::synthetic, "ab", EarLabel::hygiene});
  CHECK(mapping.map(SourceDataset::synthetic, "ab") == EarLabel::eating);
  CHECK_NOTHROW(mapping.validate());

  mapping.rules.push_back({SourceDataset::synthetic, "a*", EarLabel::leisure});
  CHECK_THROWS_AS(mapping.validate(), ear::ConfigError);
}

TEST_CASE("SubsetFilter: prefix-sharing numeric ranges") {
  ear::SubsetFilter f{SourceDataset::etri_activity3d, "P091", "P100"};
  CHECK_NOTHROW(f.validate());
  CHECK(f.contains("P091"));
  CHECK(f.contains("P095"));
  CHECK(f.contains("P100"));
  CHECK_FALSE(f.contains("P090"));
  CHECK_FALSE(f.contains("P101"));
  CHECK_FALSE(f.contains("Q095"));
  CHECK_FALSE(f.contains("P"));

  ear::SubsetFilter bad{SourceDataset::etri_activity3d, "P100", "Q101"};
  CHECK_THROWS_AS(bad.validate(), ear::ConfigError);
}

TEST_CASE("build_manifest: empty roots give an empty manifest") {
  const auto manifest = ear::build_manifest({}, etri_mapping(), {});
  CHECK(manifest.empty());
}

TEST_CASE("build_manifest: a root without video directories is empty, not fatal") {
  eartest::TempDir tmp("emptyroot");
  fs::create_directories(tmp.path() / "root");
  const auto manifest = ear::build_manifest(
      {{tmp.path() / "root", SourceDataset::synthetic}}, etri_mapping(), {});
  CHECK(manifest.empty());
}

TEST_CASE("build_manifest: subject filters keep exactly P091..P100") {
  eartest::TempDir tmp("etri");
  const fs::path root = tmp.path() / "etri";
  for (int p = 90; p <= 101; ++p) {
    char name[32];
    std::snprintf(name, sizeof(name), "A001_P%03d_G001", p);
    write_store(root / name);
  }
  const std::vector<ear::SubsetFilter> filters = {
      {SourceDataset::etri_activity3d, "P091", "P100"}};
  const auto manifest = ear::build_manifest(
      {{root, SourceDataset::etri_activity3d}}, etri_mapping(), filters);

  REQUIRE(manifest.size() == 10);
  for (const auto& entry : manifest) {
    REQUIRE(entry.subject_id.has_value());
    const int num = std::stoi(entry.subject_id->substr(1));
    CHECK(num >= 91);
    CHECK(num <= 100);
    CHECK(entry.source_label == "A001");
    CHECK(entry.ear_label == EarLabel::eating);
    CHECK(entry.frame_count == 2);
  }
}

TEST_CASE("build_manifest: synthetic tree maps 12 videos, 2 per category") {
  eartest::TempDir tmp("synth12");
  const fs::path root = tmp.path() / "videos";
  const char* labels[6] = {"a", "b", "c", "d", "e", "f"};
  for (int cls = 0; cls < 6; ++cls) {
    for (int v = 0; v < 2; ++v) {
      write_store(root / (std::string(labels[cls]) + "_v" + std::to_string(v)));
    }
  }
  ear::LabelMapping mapping;
  for (int cls = 0; cls < 6; ++cls) {
    mapping.rules.push_back({SourceDataset::synthetic, labels[cls],
                             static_cast<EarLabel>(cls)});
  }
  const auto manifest =
      ear::build_manifest({{root, SourceDataset::synthetic}}, mapping, {});
  REQUIRE(manifest.size() == 12);
  const auto counts = ear::category_counts(manifest);
  for (int cls = 0; cls < 6; ++cls) {
    CHECK(counts.at(static_cast<EarLabel>(cls)) == 2);
  }
  // sorted by video_id
  for (std::size_t i = 1; i < manifest.size(); ++i) {
    CHECK(manifest[i - 1].video_id < manifest[i].video_id);
  }
}

TEST_CASE("build_manifest: unmapped label aborts with the offending pair") {
  eartest::TempDir tmp("unmapped");
  const fs::path root = tmp.path() / "videos";
  write_store(root / "mystery_v0");
  ear::LabelMapping mapping = eartest::synthetic_identity_mapping();
  try {
    (void)ear::build_manifest({{root, SourceDataset::synthetic}}, mapping, {});
    FAIL("expected ValidationError");
  } catch (const ear::ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("synthetic") != std::string::npos);
    CHECK(msg.find("mystery") != std::string::npos);
  }
}

TEST_CASE("build_manifest: drop policy removes unmapped entries silently") {
  eartest::TempDir tmp("drop");
  const fs::path root = tmp.path() / "videos";
  write_store(root / "eating_v0");
  write_store(root / "mystery_v0");
  ear::LabelMapping mapping = eartest::synthetic_identity_mapping();
  mapping.unmapped_policy = ear::UnmappedPolicy::drop;
  const auto manifest =
      ear::build_manifest({{root, SourceDataset::synthetic}}, mapping, {});
  REQUIRE(manifest.size() == 1);
  CHECK(manifest[0].video_id == "eating_v0");
}

TEST_CASE("build_manifest: duplicate video ids across roots conflict") {
  eartest::TempDir tmp("dup");
  const fs::path root_a = tmp.path() / "a";
  const fs::path root_b = tmp.path() / "b";
  write_store(root_a / "eating_v0");
  write_store(root_b / "eating_v0");
  CHECK_THROWS_AS(
      ear::build_manifest({{root_a, SourceDataset::synthetic},
                           {root_b, SourceDataset::synthetic}},
                          eartest::synthetic_identity_mapping(), {}),
      ear::ValidationError);
}

TEST_CASE("manifest CSV: round trip preserves every field") {
  eartest::TempDir tmp("csv");
  const fs::path root = tmp.path() / "videos";
  write_store(root / "eating_P001_v0", 3);
  const auto manifest = ear::build_manifest(
      {{root, SourceDataset::synthetic}}, eartest::synthetic_identity_mapping(), {});

  const fs::path csv = tmp.path() / "manifest.csv";
  ear::write_manifest_csv(manifest, csv);
  const auto loaded = ear::read_manifest_csv(csv);

  REQUIRE(loaded.size() == manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    CHECK(loaded[i].video_id == manifest[i].video_id);
    CHECK(loaded[i].frame_dir == manifest[i].frame_dir);
    CHECK(loaded[i].frame_count == manifest[i].frame_count);
    CHECK(loaded[i].source_dataset == manifest[i].source_dataset);
    CHECK(loaded[i].source_label == manifest[i].source_label);
    CHECK(loaded[i].ear_label == manifest[i].ear_label);
    CHECK(loaded[i].subject_id == manifest[i].subject_id);
  }

  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "video_id,frame_dir,frame_count,source_dataset,source_label,ear_label,"
        "subject_id");
}

TEST_CASE("load_label_mapping and load_subset_filters parse rule files") {
  eartest::TempDir tmp("files");
  const fs::path map_file = tmp.path() / "map.txt";
  {
    std::ofstream out(map_file);
    out << "# comment line\n";
    out << "toyota_smarthome,Walk,locomotion\n";
    out << "etri_activity3d,A00*,eating\n";
    out << "\n";
    out << "synthetic,*,leisure\n";
  }
  const auto mapping = ear::load_label_mapping(map_file);
  REQUIRE(mapping.rules.size() == 3);
  CHECK(mapping.map(SourceDataset::toyota_smarthome, "Walk") ==
        EarLabel::locomotion);
  CHECK(mapping.map(SourceDataset::etri_activity3d, "A003") == EarLabel::eating);
  CHECK(mapping.map(SourceDataset::synthetic, "whatever") == EarLabel::leisure);
  CHECK(mapping.map(SourceDataset::toyota_smarthome, "Sitdown") ==
        std::nullopt);

  const fs::path filter_file = tmp.path() / "filters.txt";
  {
    std::ofstream out(filter_file);
    out << "# config 1 ranges\n";
    out << "etri_activity3d,P091,P100\n";
    out << "etri_livinglab,P201,P230\n";
  }
  const auto filters = ear::load_subset_filters(filter_file);
  REQUIRE(filters.size() == 2);
  CHECK(filters[0].contains("P095"));
  CHECK(filters[1].contains("P230"));

  CHECK_THROWS_AS(ear::load_label_mapping(tmp.path() / "nope.txt"),
                  ear::ConfigError);
}

TEST_CASE("split_manifest: 60 videos at fraction 0.2 give 48/12, 2 per class") {
  ear::Manifest manifest;
  for (int cls = 0; cls < 6; ++cls) {
    for (int v = 0; v < 10; ++v) {
      ear::ManifestEntry e;
      e.video_id = ear::to_string(static_cast<EarLabel>(cls)) + "_v" +
                   std::to_string(v);
      e.frame_dir = "/nonexistent";
      e.frame_count = 1;
      e.source_dataset = SourceDataset::synthetic;
      e.ear_label = static_cast<EarLabel>(cls);
      manifest.push_back(e);
    }
  }
  const auto split = ear::split_manifest(manifest, 0.2, 99);
  CHECK(split.train.size() == 48);
  CHECK(split.validation.size() == 12);
  for (int cls = 0; cls < 6; ++cls) {
    CHECK(split.report.validation_counts.at(static_cast<EarLabel>(cls)) == 2);
    CHECK(split.report.train_counts.at(static_cast<EarLabel>(cls)) == 8);
  }
  CHECK(split.report.underfilled_categories.empty());
}

TEST_CASE("split_manifest: fraction outside (0,1) is an input error") {
  ear::Manifest manifest;
  ear::ManifestEntry e;
  e.video_id = "v";
  e.frame_count = 1;
  e.ear_label = EarLabel::eating;
  manifest.push_back(e);
  CHECK_THROWS_AS(ear::split_manifest(manifest, 0.0, 1), ear::ConfigError);
  CHECK_THROWS_AS(ear::split_manifest(manifest, 1.0, 1), ear::ConfigError);
  CHECK_THROWS_AS(ear::split_manifest(manifest, -0.5, 1), ear::ConfigError);
}

TEST_CASE("split_manifest: deterministic for a fixed seed") {
  ear::Manifest manifest;
  for (int cls = 0; cls < 3; ++cls) {
    for (int v = 0; v < 7; ++v) {
      ear::ManifestEntry e;
      e.video_id = "c" + std::to_string(cls) + "_v" + std::to_string(v);
      e.frame_count = 1;
      e.ear_label = static_cast<EarLabel>(cls);
      manifest.push_back(e);
    }
  }
  const auto a = ear::split_manifest(manifest, 0.3, 5);
  const auto b = ear::split_manifest(manifest, 0.3, 5);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].video_id == b.train[i].video_id);
  }
  for (std::size_t i = 0; i < a.validation.size(); ++i) {
    CHECK(a.validation[i].video_id == b.validation[i].video_id);
  }
}

TEST_CASE("split_manifest: partition property and underfilled handling") {
  ear::Manifest manifest;
  for (int v = 0; v < 9; ++v) {
    ear::ManifestEntry e;
    e.video_id = "eat_v" + std::to_string(v);
    e.frame_count = 1;
    e.ear_label = EarLabel::eating;
    manifest.push_back(e);
  }
  ear::ManifestEntry lone;
  lone.video_id = "lonely";
  lone.frame_count = 1;
  lone.ear_label = EarLabel::leisure;
  manifest.push_back(lone);

  const auto split = ear::split_manifest(manifest, 0.25, 3);
  std::set<std::string> train_ids, val_ids;
  for (const auto& e : split.train) train_ids.insert(e.video_id);
  for (const auto& e : split.validation) val_ids.insert(e.video_id);

  CHECK(train_ids.size() + val_ids.size() == manifest.size());
  for (const auto& id : val_ids) CHECK(train_ids.count(id) == 0);
  CHECK(train_ids.count("lonely") == 1);
  REQUIRE(split.report.underfilled_categories.size() == 1);
  CHECK(split.report.underfilled_categories[0] == EarLabel::leisure);
}

TEST_CASE("filter soundness on the color dataset fixture") {
  eartest::TempDir tmp("colors");
  const fs::path root = tmp.path() / "colors";
  eartest::ColorDatasetSpec spec;
  spec.videos_per_class = 3;
  spec.frames_per_video = 2;
  eartest::write_color_dataset(root, spec);

  const std::vector<ear::SubsetFilter> filters = {
      {SourceDataset::synthetic, "P002", "P003"}};
  const auto manifest =
      ear::build_manifest({{root, SourceDataset::synthetic}},
                          eartest::synthetic_identity_mapping(), filters);
  REQUIRE(manifest.size() == 12);  // 6 classes x subjects P002,P003
  for (const auto& e : manifest) {
    REQUIRE(e.subject_id.has_value());
    CHECK(filters[0].contains(*e.subject_id));
  }
}
