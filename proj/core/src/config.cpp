#include "ear/config.hpp"

#include <fstream>
#include <sstream>

#include "ear/errors.hpp"
#include "spec_json.hpp"

namespace fs = std::filesystem;

namespace ear {

using detail::json;

std::string to_string(Profile p) {
  return p == Profile::paper ? "paper" : "desk";
}

Profile profile_from_string(const std::string& s) {
  if (s == "paper") return Profile::paper;
  if (s == "desk") return Profile::desk;
  throw ConfigError("unknown profile: '" + s + "' (expected paper or desk)");
}

namespace {

json to_json(const TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate},
              {"lr_decay_epochs", t.lr_decay_epochs},
              {"lr_decay_factor", t.lr_decay_factor},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"grad_clip_norm", t.grad_clip_norm},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"loader_workers", t.loader_workers},
              {"dropout_rate", t.dropout_rate},
              {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.learning_rate = j.at("learning_rate").get<double>();
  t.lr_decay_epochs = j.at("lr_decay_epochs").get<std::vector<std::int64_t>>();
  t.lr_decay_factor = j.at("lr_decay_factor").get<double>();
  t.momentum = j.at("momentum").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  t.epochs = j.at("epochs").get<std::int64_t>();
  t.batch_size = j.at("batch_size").get<std::int64_t>();
  t.loader_workers = j.at("loader_workers").get<std::int64_t>();
  t.dropout_rate = j.at("dropout_rate").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

json to_json(const PathsConfig& p) {
  json roots = json::array();
  for (const auto& [dataset, path] : p.roots) {
    roots.push_back(json{{"dataset", to_string(dataset)}, {"path", path}});
  }
  return json{{"roots", roots},
              {"mapping_file", p.mapping_file},
              {"filter_file", p.filter_file},
              {"output_dir", p.output_dir}};
}

PathsConfig paths_from_json(const json& j) {
  PathsConfig p;
  for (const auto& root : j.at("roots")) {
    p.roots.emplace_back(
        source_dataset_from_string(root.at("dataset").get<std::string>()),
        root.at("path").get<std::string>());
  }
  p.mapping_file = j.at("mapping_file").get<std::string>();
  p.filter_file = j.at("filter_file").get<std::string>();
  p.output_dir = j.at("output_dir").get<std::string>();
  return p;
}

json config_to_json(const RunConfig& c) {
  return json{{"profile", to_string(c.profile)},
              {"seed", c.seed},
              {"paths", to_json(c.paths)},
              {"sample", detail::to_json(c.sample)},
              {"crop", detail::to_json(c.crop)},
              {"backbone", detail::to_json(c.backbone)},
              {"head", detail::to_json(c.head)},
              {"shift", detail::to_json(c.shift)},
              {"train", to_json(c.train)}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  c.profile = profile_from_string(j.at("profile").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.paths = paths_from_json(j.at("paths"));
  c.sample = detail::sample_from_json(j.at("sample"));
  c.crop = detail::crop_from_json(j.at("crop"));
  c.backbone = detail::backbone_from_json(j.at("backbone"));
  c.head = detail::head_from_json(j.at("head"));
  c.shift = detail::shift_from_json(j.at("shift"));
  c.train = train_from_json(j.at("train"));
  return c;
}

// Rejects keys that do not exist in the schema, so typos never pass silently.
void check_known_keys(const json& value, const json& schema,
                      const std::string& prefix) {
  if (!value.is_object()) return;
  for (const auto& [key, sub] : value.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.is_object() || !schema.contains(key)) {
      throw ConfigError("unknown config key: '" + path + "'");
    }
    // paths.roots holds free-form entries; everything else is recursed.
    if (path != "paths.roots") {
      check_known_keys(sub, schema.at(key), path);
    }
  }
}

void deep_merge(json& base, const json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key) && base.at(key).is_object() && value.is_object()) {
      deep_merge(base.at(key), value);
    } else {
      base[key] = value;
    }
  }
}

}  // namespace

RunConfig RunConfig::paper_profile() {
  RunConfig c;
  c.profile = Profile::paper;
  c.seed = 0;

  c.sample.segments = 8;
  c.sample.mode = SampleMode::eval_center;
  c.sample.seed = 0;

  c.crop.resize_short_side = 256;
  c.crop.crop_size = 224;
  c.crop.crop_mode = CropMode::center;
  c.crop.mean = {0.485, 0.456, 0.406};
  c.crop.stddev = {0.229, 0.224, 0.225};

  c.backbone.kind = BackboneKind::resnext50_32x4d;
  c.backbone.cardinality = 32;
  c.backbone.width_per_group = 4;
  c.backbone.pretrained_init = true;
  c.backbone.pretrained_weights = "";
  c.backbone.shift_stages = {};  // every residual block

  c.head.num_classes = 6;
  c.head.dropout_rate = 0.5;
  c.head.consensus = ConsensusKind::average;
  c.head.consensus_domain = ConsensusDomain::logits;

  c.shift.enabled = true;
  c.shift.shift_div = 8;
  c.shift.placement = ShiftPlacement::residual_branch;
  c.shift.segments = 8;

  c.train.learning_rate = 0.001;
  c.train.lr_decay_epochs = {20, 40};
  c.train.lr_decay_factor = 0.1;
  c.train.momentum = 0.9;
  c.train.weight_decay = 1e-4;
  c.train.grad_clip_norm = 20.0;
  c.train.epochs = 100;
  c.train.batch_size = 4;
  c.train.loader_workers = 32;
  c.train.dropout_rate = 0.5;
  c.train.seed = 0;
  return c;
}

RunConfig RunConfig::desk_profile() {
  RunConfig c = paper_profile();
  c.profile = Profile::desk;

  c.sample.segments = 4;
  c.crop.resize_short_side = 36;
  c.crop.crop_size = 32;

  c.backbone.kind = BackboneKind::tiny_residual;
  c.backbone.pretrained_init = false;

  c.shift.segments = 4;

  c.train.learning_rate = 0.02;
  c.train.lr_decay_epochs = {10, 20};
  c.train.epochs = 25;
  c.train.loader_workers = 2;
  return c;
}

RunConfig RunConfig::from_profile(Profile profile) {
  return profile == Profile::paper ? paper_profile() : desk_profile();
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json overlay;
  try {
    overlay = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Profile profile = Profile::desk;
  if (overlay.is_object() && overlay.contains("profile")) {
    profile = profile_from_string(overlay.at("profile").get<std::string>());
  }
  json base = config_to_json(from_profile(profile));
  check_known_keys(overlay, base, "");
  deep_merge(base, overlay);
  return config_from_json(base);
}

RunConfig RunConfig::from_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open config file: " + file.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  return from_json_text(text.str());
}

std::string RunConfig::to_json_text() const {
  return config_to_json(*this).dump(2) + "\n";
}

void RunConfig::apply_override(const std::string& dotted_key,
                               const std::string& value) {
  json root = config_to_json(*this);
  json* node = &root;
  std::vector<std::string> parts;
  std::istringstream is(dotted_key);
  std::string part;
  while (std::getline(is, part, '.')) parts.push_back(part);
  if (parts.empty()) {
    throw ConfigError("empty override key");
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      throw ConfigError("unknown config key: '" + dotted_key + "'");
    }
    node = &node->at(parts[i]);
  }
  if (!node->is_object() || !node->contains(parts.back())) {
    throw ConfigError("unknown config key: '" + dotted_key + "'");
  }

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare string
  }
  (*node)[parts.back()] = parsed;
  *this = config_from_json(root);
}

void RunConfig::resolve() {
  sample.seed = seed;
  train.seed = seed;
  train.dropout_rate = head.dropout_rate;
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> issues;
  auto guard = [&issues](const auto& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      issues.emplace_back(e.what());
    }
  };
  guard([&] { sample.validate(); });
  guard([&] { crop.validate(); });
  guard([&] { backbone.validate(); });
  guard([&] { head.validate(); });
  guard([&] { shift.validate(); });
  train.validate(issues);

  if (sample.segments != shift.segments) {
    issues.push_back("sample.segments (" + std::to_string(sample.segments) +
                     ") must equal shift.segments (" +
                     std::to_string(shift.segments) + ")");
  }
  if (head.dropout_rate != train.dropout_rate) {
    issues.push_back("head.dropout_rate and train.dropout_rate disagree; "
                     "set head.dropout_rate and resolve()");
  }
  if (backbone.pretrained_init && backbone.pretrained_weights.empty()) {
    issues.push_back(
        "backbone.pretrained_init is set but backbone.pretrained_weights "
        "names no file");
  }
  return issues;
}

void RunConfig::validate_or_throw() const {
  const auto issues = validate();
  if (!issues.empty()) {
    std::string msg = "invalid config:";
    for (const auto& m : issues) msg += "\n  - " + m;
    throw ConfigError(msg);
  }
}

}  // namespace ear
