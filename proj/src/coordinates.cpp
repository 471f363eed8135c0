#include "s3net/coordinates.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <thread>

namespace s3net {

namespace {

std::int32_t floor_to_multiple(std::int32_t v, std::int32_t step) {
  std::int32_t q = v / step;
  if ((v % step != 0) && ((v < 0) != (step < 0))) --q;
  return q * step;
}

}  // namespace

CoordinateMap::CoordinateMap(std::vector<Coordinate> coords) : coords_(std::move(coords)) {
  index_.reserve(coords_.size());
  for (std::size_t row = 0; row < coords_.size(); ++row) {
    const auto [it, inserted] = index_.emplace(coords_[row], static_cast<int>(row));
    if (!inserted) {
      const auto& c = coords_[row];
      throw std::invalid_argument("duplicate coordinate (" + std::to_string(c.batch) + ", " + std::to_string(c.i) +
                                  ", " + std::to_string(c.j) + ", " + std::to_string(c.k) + ") at rows " +
                                  std::to_string(it->second) + " and " + std::to_string(row));
    }
  }

  for (const auto& c : coords_) batches_.push_back(c.batch);
  std::sort(batches_.begin(), batches_.end());
  batches_.erase(std::unique(batches_.begin(), batches_.end()), batches_.end());

  batch_counts_.assign(batches_.size(), 0);
  row_slot_.resize(coords_.size());
  for (std::size_t row = 0; row < coords_.size(); ++row) {
    const auto slot = std::lower_bound(batches_.begin(), batches_.end(), coords_[row].batch) - batches_.begin();
    row_slot_[row] = static_cast<int>(slot);
    ++batch_counts_[slot];
  }
}

int CoordinateMap::find(const Coordinate& c) const {
  const auto it = index_.find(c);
  return it == index_.end() ? -1 : it->second;
}

bool CoordinateMap::aligned_to(int stride) const {
  return std::all_of(coords_.begin(), coords_.end(),
                     [stride](const Coordinate& c) { return c.i % stride == 0 && c.j % stride == 0 && c.k % stride == 0; });
}

KernelOffsets build_kernel_offsets(int kernel_size, int dimension) {
  if (dimension != 3) throw std::invalid_argument("only 3-dimensional kernels are supported");
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw std::invalid_argument("kernel size must be odd and positive, got " + std::to_string(kernel_size));
  }
  const int half = kernel_size / 2;
  KernelOffsets result;
  result.kernel_size = kernel_size;
  result.offsets.reserve(static_cast<std::size_t>(kernel_size) * kernel_size * kernel_size);
  for (int a = -half; a <= half; ++a)
    for (int b = -half; b <= half; ++b)
      for (int c = -half; c <= half; ++c) result.offsets.push_back({a, b, c});
  return result;
}

CoordinateMap stride_coordinates(const CoordinateMap& coords, int in_stride, int factor) {
  if (factor < 2) throw std::invalid_argument("stride factor must be at least 2");
  if (in_stride < 1 || !coords.aligned_to(in_stride)) {
    throw std::invalid_argument("coordinates are not aligned to input stride " + std::to_string(in_stride));
  }
  const std::int32_t step = in_stride * factor;
  std::vector<Coordinate> out;
  out.reserve(coords.size());
  for (const auto& c : coords.coordinates()) {
    out.push_back({c.batch, floor_to_multiple(c.i, step), floor_to_multiple(c.j, step), floor_to_multiple(c.k, step)});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return CoordinateMap(std::move(out));
}

std::size_t KernelMap::pair_count() const {
  std::size_t n = 0;
  for (const auto& list : pairs) n += list.size();
  return n;
}

KernelMap build_kernel_map(const CoordinateMap& in, const CoordinateMap& out, const KernelOffsets& offsets,
                           int in_stride, int workers) {
  KernelMap kmap;
  kmap.in_count = in.size();
  kmap.out_count = out.size();
  kmap.pairs.resize(offsets.volume());

  const int n_out = static_cast<int>(out.size());
  workers = std::clamp(workers, 1, std::max(1, n_out));

  // Each worker fills its own contiguous range of output rows; concatenating the
  // per-worker lists in worker order keeps every offset list sorted by out_row.
  std::vector<std::vector<std::vector<KernelPair>>> partial(
      static_cast<std::size_t>(workers), std::vector<std::vector<KernelPair>>(offsets.volume()));
  auto fill = [&](int worker) {
    const int begin = static_cast<int>(static_cast<long long>(n_out) * worker / workers);
    const int end = static_cast<int>(static_cast<long long>(n_out) * (worker + 1) / workers);
    auto& lists = partial[static_cast<std::size_t>(worker)];
    for (int row = begin; row < end; ++row) {
      const Coordinate& u = out.coordinate(static_cast<std::size_t>(row));
      for (std::size_t o = 0; o < offsets.volume(); ++o) {
        const int in_row = in.find(u.shifted(offsets.offsets[o], in_stride));
        if (in_row >= 0) lists[o].push_back({in_row, row});
      }
    }
  };

  if (workers == 1) {
    fill(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(fill, w);
  }

  for (std::size_t o = 0; o < offsets.volume(); ++o) {
    auto& list = kmap.pairs[o];
    for (auto& part : partial) list.insert(list.end(), part[o].begin(), part[o].end());
  }
  return kmap;
}

}  // namespace s3net
