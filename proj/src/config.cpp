#include "s3net/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace s3net {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void read_path(const json& obj, const char* key, std::filesystem::path& out, const std::filesystem::path& base) {
  if (!obj.contains(key)) return;
  out = obj.at(key).get<std::string>();
  if (!out.empty() && out.is_relative() && !base.empty()) out = base / out;
}

void parse_network(const json& j, NetworkConfig& n) {
  reject_unknown(j,
                 {"input_channels", "class_count", "stem_channels", "encoder_channels", "kernel_size", "damping",
                  "reduction", "encoder_tower_depth", "decoder_tower_depth", "encoder_inter", "encoder_intra",
                  "decoder_inter", "bn_momentum", "bn_eps"},
                 "network");
  read(j, "input_channels", n.input_channels);
  read(j, "class_count", n.class_count);
  read(j, "stem_channels", n.stem_channels);
  read(j, "encoder_channels", n.encoder_channels);
  read(j, "kernel_size", n.kernel_size);
  read(j, "damping", n.damping);
  read(j, "reduction", n.reduction);
  read(j, "encoder_tower_depth", n.encoder_tower_depth);
  read(j, "decoder_tower_depth", n.decoder_tower_depth);
  read(j, "encoder_inter", n.encoder_inter);
  read(j, "encoder_intra", n.encoder_intra);
  read(j, "decoder_inter", n.decoder_inter);
  read(j, "bn_momentum", n.bn_momentum);
  read(j, "bn_eps", n.bn_eps);
}

}  // namespace

void RunConfig::validate() const {
  try {
    network.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
  if (!(voxel_size > 0.0)) throw ConfigError("voxel_size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (max_scans < 0) throw ConfigError("max_scans must be non-negative");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be positive");
  if (!(lr_decay > 0.0) || lr_period < 1) throw ConfigError("scheduler needs decay > 0 and period >= 1");
  if (loss.wce < 0.0 || loss.geo < 0.0) throw ConfigError("loss weights must be non-negative");
}

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  RunConfig c;
  try {
    const json doc = json::parse(json_text);
    reject_unknown(doc,
                   {"dataset_root", "train_sequences", "val_sequences", "label_map", "frequency_manifest", "max_scans",
                    "network", "optimizer", "scheduler", "loss", "range_image", "voxel_size", "epochs", "batch_size",
                    "seed", "precision", "workers"},
                   "config");
    read_path(doc, "dataset_root", c.dataset_root, base_dir);
    read(doc, "train_sequences", c.train_sequences);
    read(doc, "val_sequences", c.val_sequences);
    read_path(doc, "label_map", c.label_map, base_dir);
    read_path(doc, "frequency_manifest", c.frequency_manifest, base_dir);
    read(doc, "max_scans", c.max_scans);
    if (doc.contains("network")) parse_network(doc.at("network"), c.network);
    if (doc.contains("optimizer")) {
      const json& o = doc.at("optimizer");
      reject_unknown(o, {"learning_rate", "beta1", "beta2", "eps", "weight_decay"}, "optimizer");
      read(o, "learning_rate", c.optimizer.learning_rate);
      read(o, "beta1", c.optimizer.beta1);
      read(o, "beta2", c.optimizer.beta2);
      read(o, "eps", c.optimizer.eps);
      read(o, "weight_decay", c.optimizer.weight_decay);
    }
    if (doc.contains("scheduler")) {
      const json& s = doc.at("scheduler");
      reject_unknown(s, {"decay", "period"}, "scheduler");
      read(s, "decay", c.lr_decay);
      read(s, "period", c.lr_period);
    }
    if (doc.contains("loss")) {
      const json& l = doc.at("loss");
      reject_unknown(l, {"wce", "geo"}, "loss");
      read(l, "wce", c.loss.wce);
      read(l, "geo", c.loss.geo);
    }
    if (doc.contains("range_image")) {
      const json& r = doc.at("range_image");
      reject_unknown(r, {"height", "width", "fov_up_deg", "fov_down_deg"}, "range_image");
      read(r, "height", c.range_image.height);
      read(r, "width", c.range_image.width);
      read(r, "fov_up_deg", c.range_image.fov_up_deg);
      read(r, "fov_down_deg", c.range_image.fov_down_deg);
    }
    read(doc, "voxel_size", c.voxel_size);
    read(doc, "epochs", c.epochs);
    read(doc, "batch_size", c.batch_size);
    read(doc, "seed", c.seed);
    read(doc, "workers", c.workers);
    if (doc.contains("precision")) {
      const auto p = doc.at("precision").get<std::string>();
      if (p == "float32") c.precision = Precision::Float32;
      else if (p == "float64") c.precision = Precision::Float64;
      else throw ConfigError("precision must be \"float32\" or \"float64\", got \"" + p + "\"");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.parent_path());
}

std::string to_json(const RunConfig& c) {
  const NetworkConfig& n = c.network;
  json doc = {
      {"dataset_root", c.dataset_root.string()},
      {"train_sequences", c.train_sequences},
      {"val_sequences", c.val_sequences},
      {"label_map", c.label_map.string()},
      {"frequency_manifest", c.frequency_manifest.string()},
      {"max_scans", c.max_scans},
      {"network",
       {{"input_channels", n.input_channels},
        {"class_count", n.class_count},
        {"stem_channels", n.stem_channels},
        {"encoder_channels", n.encoder_channels},
        {"kernel_size", n.kernel_size},
        {"damping", n.damping},
        {"reduction", n.reduction},
        {"encoder_tower_depth", n.encoder_tower_depth},
        {"decoder_tower_depth", n.decoder_tower_depth},
        {"encoder_inter", n.encoder_inter},
        {"encoder_intra", n.encoder_intra},
        {"decoder_inter", n.decoder_inter},
        {"bn_momentum", n.bn_momentum},
        {"bn_eps", n.bn_eps}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay}}},
      {"scheduler", {{"decay", c.lr_decay}, {"period", c.lr_period}}},
      {"loss", {{"wce", c.loss.wce}, {"geo", c.loss.geo}}},
      {"range_image",
       {{"height", c.range_image.height},
        {"width", c.range_image.width},
        {"fov_up_deg", c.range_image.fov_up_deg},
        {"fov_down_deg", c.range_image.fov_down_deg}}},
      {"voxel_size", c.voxel_size},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"precision", c.precision == Precision::Float64 ? "float64" : "float32"},
      {"workers", c.workers},
  };
  return doc.dump(2);
}

}  // namespace s3net
