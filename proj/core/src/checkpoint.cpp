#include "ear/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "ear/errors.hpp"
#include "spec_json.hpp"

namespace fs = std::filesystem;

namespace ear {

namespace {

constexpr char kMagic[8] = {'E', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

using detail::json;

void append_tensors(const std::map<std::string, Tensor>& tensors,
                    const char* kind, json& index, std::uint64_t& offset) {
  for (const auto& [name, tensor] : tensors) {
    index.push_back(json{{"name", name},
                         {"kind", kind},
                         {"shape", tensor.shape()},
                         {"offset", offset}});
    offset += static_cast<std::uint64_t>(tensor.numel()) * sizeof(Scalar);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& file) {
  json header;
  header["format_version"] = 1;
  header["specs"] = json{{"backbone", detail::to_json(checkpoint.backbone)},
                         {"head", detail::to_json(checkpoint.head)},
                         {"shift", detail::to_json(checkpoint.shift)},
                         {"crop", detail::to_json(checkpoint.crop)}};
  header["epoch"] = checkpoint.epoch;
  header["val_accuracy"] = checkpoint.val_accuracy;
  header["scalar_type"] = "f64le";

  json index = json::array();
  std::uint64_t offset = 0;
  append_tensors(checkpoint.model_state, "model", index, offset);
  append_tensors(checkpoint.optimizer_state, "optim", index, offset);
  header["tensors"] = index;

  const std::string header_text = header.dump();
  const std::uint64_t header_size = header_text.size();

  std::ofstream out(file, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write checkpoint: " + file.string());
  }
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&header_size), sizeof(header_size));
  out.write(header_text.data(),
            static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, tensor] : checkpoint.model_state) {
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(Scalar)));
  }
  for (const auto& [name, tensor] : checkpoint.optimizer_state) {
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(Scalar)));
  }
  if (!out) {
    throw ConfigError("short write while saving checkpoint: " + file.string());
  }
}

Checkpoint load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open checkpoint: " + file.string());
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a checkpoint file: " + file.string());
  }
  std::uint64_t header_size = 0;
  in.read(reinterpret_cast<char*>(&header_size), sizeof(header_size));
  std::string header_text(header_size, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_size));
  if (!in) {
    throw ValidationError("truncated checkpoint header: " + file.string());
  }

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw ValidationError("corrupt checkpoint header (" + file.string() +
                          "): " + e.what());
  }
  if (header.at("format_version").get<int>() != 1) {
    throw ValidationError("unsupported checkpoint format version in " +
                          file.string());
  }

  Checkpoint ckpt;
  const auto& specs = header.at("specs");
  ckpt.backbone = detail::backbone_from_json(specs.at("backbone"));
  ckpt.head = detail::head_from_json(specs.at("head"));
  ckpt.shift = detail::shift_from_json(specs.at("shift"));
  ckpt.crop = detail::crop_from_json(specs.at("crop"));
  ckpt.epoch = header.at("epoch").get<std::int64_t>();
  ckpt.val_accuracy = header.at("val_accuracy").get<double>();

  const std::streampos payload_start = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto kind = entry.at("kind").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();

    Tensor tensor(shape);
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(tensor.data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(Scalar)));
    if (!in) {
      throw ValidationError("truncated checkpoint payload at tensor '" + name +
                            "' in " + file.string());
    }
    if (kind == "model") {
      ckpt.model_state.emplace(name, std::move(tensor));
    } else if (kind == "optim") {
      ckpt.optimizer_state.emplace(name, std::move(tensor));
    } else {
      throw ValidationError("unknown tensor kind '" + kind + "' in " +
                            file.string());
    }
  }
  return ckpt;
}

Checkpoint make_checkpoint(Model& model, const CropSpec& crop,
                           std::int64_t epoch, double val_accuracy) {
  Checkpoint ckpt;
  ckpt.backbone = model.backbone_spec();
  ckpt.head = model.head_spec();
  ckpt.shift = model.shift_config();
  ckpt.crop = crop;
  ckpt.epoch = epoch;
  ckpt.val_accuracy = val_accuracy;
  ckpt.model_state = model.state_dict();
  return ckpt;
}

void load_pretrained_backbone(Model& model, const fs::path& weights_file) {
  if (!fs::exists(weights_file)) {
    throw ConfigError("pretrained weights file not found: " +
                      weights_file.string());
  }
  const Checkpoint source = load_checkpoint(weights_file);

  std::map<std::string, Tensor*> targets;
  for (auto& [name, p] : model.named_parameters()) {
    targets.emplace(name, &p->value);
  }
  for (auto& [name, t] : model.named_buffers()) {
    targets.emplace(name, t);
  }

  for (const auto& [name, tensor] : source.model_state) {
    if (name.rfind("fc.", 0) == 0) continue;  // classifier stays fresh
    auto it = targets.find(name);
    if (it == targets.end()) {
      throw ValidationError("pretrained weights contain unknown tensor '" +
                            name + "'");
    }
    if (!(it->second->shape() == tensor.shape())) {
      throw ValidationError("pretrained tensor '" + name +
                            "' has shape " + tensor.shape_str() +
                            ", model expects " + it->second->shape_str());
    }
    *it->second = tensor;
  }
}

std::vector<std::string> describe_specs(const BackboneSpec& backbone,
                                        const HeadSpec& head,
                                        const ShiftConfig& shift,
                                        const CropSpec& crop) {
  json backbone_json = detail::to_json(backbone);
  // Pretrained provenance is not part of the architectural identity.
  backbone_json.erase("pretrained_init");
  backbone_json.erase("pretrained_weights");
  json specs{{"backbone", backbone_json},
             {"head", detail::to_json(head)},
             {"shift", detail::to_json(shift)},
             {"crop", detail::to_json(crop)}};
  std::vector<std::string> lines;
  for (const auto& [section, body] : specs.items()) {
    for (const auto& [key, value] : body.items()) {
      lines.push_back(section + "." + key + " = " + value.dump());
    }
  }
  return lines;
}

}  // namespace ear
