#pragma once

#include "s3net/autodiff.hpp"
#include "s3net/features.hpp"
#include "s3net/loss.hpp"
#include "s3net/modules.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace s3net {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Precision { Float32, Float64 };

struct RunConfig {
  std::filesystem::path dataset_root;
  std::vector<std::string> train_sequences{"00", "01", "02", "03", "04", "05", "06", "07", "09", "10"};
  std::vector<std::string> val_sequences{"08"};
  std::filesystem::path label_map = "config/semantic_kitti.json";
  std::filesystem::path frequency_manifest;  // empty: <dataset_root>/class_frequencies.txt
  int max_scans = 0;                         // per split, 0 = all

  NetworkConfig network;
  AdamConfig optimizer;
  double lr_decay = 0.9;
  int lr_period = 10;  // epochs
  LossWeights loss;
  RangeImageConfig range_image;

  double voxel_size = 0.05;
  int epochs = 120;
  int batch_size = 2;
  std::uint64_t seed = 0;
  Precision precision = Precision::Float32;
  int workers = 1;

  std::filesystem::path manifest_path() const {
    return frequency_manifest.empty() ? dataset_root / "class_frequencies.txt" : frequency_manifest;
  }

  /// Throws ConfigError describing the first invalid value.
  void validate() const;
};

/// Keys missing from the document keep their defaults; unknown keys are rejected.
/// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

}  // namespace s3net
