#pragma once

#include "s3net/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace s3net {

// Layout (all integers little-endian uint32):
//   "S3CK" | version | record count
//   per record: name length | name bytes | rows | cols | rows * cols float32, row-major
inline constexpr char kCheckpointMagic[4] = {'S', '3', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
};

/// Throws DataError on a bad magic, unsupported version or truncated file.
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);

template <typename Scalar>
std::vector<CheckpointRecord> checkpoint_records(const ParameterStore<Scalar>& store);

/// Every parameter of `store` is written, buffers included.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<Scalar>& store);

/// Overwrites matching parameters. Throws DataError naming any parameter that is missing
/// from the file or stored with a different shape, or any record with no matching parameter.
template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, ParameterStore<Scalar>& store);

}  // namespace s3net
