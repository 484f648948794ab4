// Internal JSON (de)serialization for the spec structs. Not installed;
// nlohmann/json stays out of the public headers.
#pragma once

#include <json.hpp>

#include <algorithm>

#include "ear/errors.hpp"
#include "ear/model.hpp"
#include "ear/sampler.hpp"
#include "ear/shift.hpp"

namespace ear::detail {

using json = nlohmann::json;

inline json to_json(const ShiftConfig& c) {
  return json{{"enabled", c.enabled},
              {"shift_div", c.shift_div},
              {"placement", to_string(c.placement)},
              {"segments", c.segments}};
}

inline ShiftConfig shift_from_json(const json& j) {
  ShiftConfig c;
  c.enabled = j.at("enabled").get<bool>();
  c.shift_div = j.at("shift_div").get<std::int64_t>();
  c.placement = shift_placement_from_string(j.at("placement").get<std::string>());
  c.segments = j.at("segments").get<std::int64_t>();
  return c;
}

inline json to_json(const BackboneSpec& b) {
  return json{{"kind", to_string(b.kind)},
              {"cardinality", b.cardinality},
              {"width_per_group", b.width_per_group},
              {"pretrained_init", b.pretrained_init},
              {"pretrained_weights", b.pretrained_weights},
              {"shift_stages", b.shift_stages}};
}

inline BackboneSpec backbone_from_json(const json& j) {
  BackboneSpec b;
  b.kind = backbone_kind_from_string(j.at("kind").get<std::string>());
  b.cardinality = j.at("cardinality").get<std::int64_t>();
  b.width_per_group = j.at("width_per_group").get<std::int64_t>();
  b.pretrained_init = j.at("pretrained_init").get<bool>();
  if (j.contains("pretrained_weights")) {
    b.pretrained_weights = j.at("pretrained_weights").get<std::string>();
  }
  if (j.contains("shift_stages")) {
    b.shift_stages = j.at("shift_stages").get<std::vector<std::int64_t>>();
  }
  return b;
}

inline json to_json(const HeadSpec& h) {
  return json{{"num_classes", h.num_classes},
              {"dropout_rate", h.dropout_rate},
              {"consensus", to_string(h.consensus)},
              {"consensus_domain", to_string(h.consensus_domain)}};
}

inline HeadSpec head_from_json(const json& j) {
  HeadSpec h;
  h.num_classes = j.at("num_classes").get<std::int64_t>();
  h.dropout_rate = j.at("dropout_rate").get<double>();
  h.consensus = consensus_kind_from_string(j.at("consensus").get<std::string>());
  h.consensus_domain =
      consensus_domain_from_string(j.at("consensus_domain").get<std::string>());
  return h;
}

inline json to_json(const CropSpec& c) {
  return json{{"resize_short_side", c.resize_short_side},
              {"crop_size", c.crop_size},
              {"crop_mode", to_string(c.crop_mode)},
              {"mean", c.mean},
              {"std", c.stddev}};
}

inline CropSpec crop_from_json(const json& j) {
  CropSpec c;
  c.resize_short_side = j.at("resize_short_side").get<std::int64_t>();
  c.crop_size = j.at("crop_size").get<std::int64_t>();
  c.crop_mode = crop_mode_from_string(j.at("crop_mode").get<std::string>());
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto stddev = j.at("std").get<std::vector<double>>();
  if (mean.size() != 3 || stddev.size() != 3) {
    throw ConfigError("crop: mean and std need exactly 3 entries");
  }
  std::copy(mean.begin(), mean.end(), c.mean.begin());
  std::copy(stddev.begin(), stddev.end(), c.stddev.begin());
  return c;
}

inline json to_json(const SampleSpec& s) {
  return json{{"segments", s.segments},
              {"mode", to_string(s.mode)},
              {"seed", s.seed}};
}

inline SampleSpec sample_from_json(const json& j) {
  SampleSpec s;
  s.segments = j.at("segments").get<std::int64_t>();
  s.mode = sample_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace ear::detail
