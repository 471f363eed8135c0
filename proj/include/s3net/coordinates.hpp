#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace s3net {

/// Integer voxel coordinate tagged with the batch (scan) it belongs to.
struct Coordinate {
  std::int32_t batch = 0;
  std::int32_t i = 0;
  std::int32_t j = 0;
  std::int32_t k = 0;

  friend auto operator<=>(const Coordinate&, const Coordinate&) = default;

  Coordinate shifted(const std::array<int, 3>& offset, int scale) const {
    return {batch, i + offset[0] * scale, j + offset[1] * scale, k + offset[2] * scale};
  }
};

struct CoordinateHash {
  std::size_t operator()(const Coordinate& c) const noexcept {
    // splitmix-style mixing over the packed fields
    std::uint64_t h = static_cast<std::uint32_t>(c.batch);
    for (std::int32_t v : {c.i, c.j, c.k}) {
      h ^= static_cast<std::uint32_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      h *= 0xbf58476d1ce4e5b9ULL;
      h ^= h >> 31;
    }
    return static_cast<std::size_t>(h);
  }
};

/// Immutable bijection between coordinates and row indices 0..size()-1.
class CoordinateMap {
public:
  CoordinateMap() = default;
  /// Rows follow the order of `coords`. Throws std::invalid_argument on duplicates.
  explicit CoordinateMap(std::vector<Coordinate> coords);

  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }

  const Coordinate& coordinate(std::size_t row) const { return coords_[row]; }
  std::span<const Coordinate> coordinates() const { return coords_; }

  /// Row of `c`, or -1 when absent.
  int find(const Coordinate& c) const;
  bool contains(const Coordinate& c) const { return find(c) >= 0; }

  /// Sorted distinct batch indices present in the map.
  std::span<const int> batches() const { return batches_; }
  /// Position of row's batch within batches().
  int batch_slot(std::size_t row) const { return row_slot_[row]; }
  /// Number of rows per entry of batches().
  std::span<const int> batch_counts() const { return batch_counts_; }

  /// True when every i, j, k is divisible by `stride`.
  bool aligned_to(int stride) const;

  friend bool operator==(const CoordinateMap& a, const CoordinateMap& b) { return a.coords_ == b.coords_; }

private:
  std::vector<Coordinate> coords_;
  std::unordered_map<Coordinate, int, CoordinateHash> index_;
  std::vector<int> batches_;
  std::vector<int> row_slot_;
  std::vector<int> batch_counts_;
};

using CoordinateMapPtr = std::shared_ptr<const CoordinateMap>;

/// Ordered offsets of an odd hypercubic kernel.
struct KernelOffsets {
  int kernel_size = 1;
  std::vector<std::array<int, 3>> offsets;

  std::size_t volume() const { return offsets.size(); }
};

/// Offsets in lexicographic order; throws std::invalid_argument for even or non-positive sizes.
KernelOffsets build_kernel_offsets(int kernel_size, int dimension = 3);

/// Unique coordinates of floor(c / (in_stride * factor)) * (in_stride * factor), sorted.
CoordinateMap stride_coordinates(const CoordinateMap& coords, int in_stride, int factor);

struct KernelPair {
  int in_row;
  int out_row;

  friend bool operator==(const KernelPair&, const KernelPair&) = default;
  friend auto operator<=>(const KernelPair&, const KernelPair&) = default;
};

/// Per-offset gather/scatter plan of one sparse convolution.
struct KernelMap {
  std::vector<std::vector<KernelPair>> pairs;  // indexed by offset, each sorted by out_row
  std::size_t in_count = 0;
  std::size_t out_count = 0;

  std::size_t pair_count() const;
};

using KernelMapPtr = std::shared_ptr<const KernelMap>;

/// For every output u and offset o, pairs (row(u + o * in_stride), row(u)) whenever the
/// input contains u + o * in_stride. Output rows may be split across `workers` threads;
/// the result does not depend on the worker count.
KernelMap build_kernel_map(const CoordinateMap& in, const CoordinateMap& out, const KernelOffsets& offsets,
                           int in_stride, int workers = 1);

}  // namespace s3net
