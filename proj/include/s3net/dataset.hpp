#pragma once

#include "s3net/loss.hpp"
#include "s3net/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace s3net {

/// One LiDAR sweep: x, y, z (meters) and remission per point.
struct Scan {
  Eigen::Matrix<float, Eigen::Dynamic, 4, Eigen::RowMajor> points;

  Eigen::Index size() const { return points.rows(); }
  Eigen::MatrixX3d positions() const { return points.leftCols<3>().cast<double>(); }
  Eigen::VectorXd remission() const { return points.col(3).cast<double>(); }
};

/// Reads consecutive little-endian float32 quadruples. Throws DataError when the byte count
/// is not a positive multiple of 16 or a value is not finite.
Scan read_scan(const std::filesystem::path& path);
void write_scan(const std::filesystem::path& path, const Scan& scan);

/// Raw little-endian uint32 label words (instance id in the high 16 bits).
/// `expected_count` >= 0 enforces one label per point.
std::vector<std::uint32_t> read_raw_labels(const std::filesystem::path& path, long long expected_count = -1);
void write_raw_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels);

constexpr std::uint32_t semantic_id(std::uint32_t raw) { return raw & 0xFFFFu; }

/// Semantic ids (instance bits stripped) of a label file.
std::vector<std::uint32_t> read_labels(const std::filesystem::path& path, long long expected_count = -1);

/// Raw semantic id -> train id table, loaded from an editable JSON file:
///   { "classes": [names...], "learning_map": {"<raw>": train_id or -1}, "learning_map_inv": {"<train>": raw} }
class LabelMap {
public:
  static LabelMap load(const std::filesystem::path& path);
  static LabelMap parse(const std::string& json_text);

  int class_count() const { return static_cast<int>(class_names_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }

  /// Train ids in [0, class_count) or kIgnoreLabel. Throws DataError listing unmapped ids.
  std::vector<int> remap(std::span<const std::uint32_t> semantic_ids) const;
  /// Benchmark label word for a train id (0 for unknown or ignored ids).
  std::uint32_t to_raw(int train_id) const;

private:
  std::vector<std::string> class_names_;
  std::unordered_map<std::uint32_t, int> learning_map_;
  std::unordered_map<int, std::uint32_t> inverse_;
};

/// Per-class counts of supervised labels.
std::vector<std::uint64_t> count_classes(std::span<const int> train_ids, int class_count);

/// Text manifest, one line per class: "<class_id> <count> <frequency> <name>".
void write_frequency_manifest(const std::filesystem::path& path, std::span<const std::uint64_t> counts,
                              const std::vector<std::string>& class_names);
/// Returns the counts stored in a manifest.
std::vector<std::uint64_t> read_frequency_manifest(const std::filesystem::path& path);

/// Scan/label file pair of a SemanticKITTI-style tree: <root>/sequences/<seq>/{velodyne,labels}/<frame>.{bin,label}.
struct ScanEntry {
  std::filesystem::path scan;
  std::filesystem::path labels;
  std::string sequence;
  std::string frame;
};

/// Frames of the given sequences in sorted order. Throws DataError if a sequence directory is missing.
std::vector<ScanEntry> list_scans(const std::filesystem::path& root, const std::vector<std::string>& sequences);

}  // namespace s3net
