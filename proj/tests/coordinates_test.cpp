#include "s3net/coordinates.hpp"
#include "s3net/sparse_tensor.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

using namespace s3net;

namespace {

std::set<std::tuple<int, int, int>> floored_triples(const Eigen::MatrixX3d& pts, double voxel) {
  std::set<std::tuple<int, int, int>> out;
  for (Eigen::Index p = 0; p < pts.rows(); ++p) {
    out.emplace(static_cast<int>(std::floor(pts(p, 0) / voxel)), static_cast<int>(std::floor(pts(p, 1) / voxel)),
                static_cast<int>(std::floor(pts(p, 2) / voxel)));
  }
  return out;
}

}  // namespace

TEST(Quantize, SameVoxelPointsAreAveraged) {
  Eigen::MatrixX3d pts(2, 3);
  pts << 0.01, 0.01, 0.01, 0.02, 0.02, 0.02;
  Matrix<double> f(2, 1);
  f << 1.0, 3.0;
  const auto q = quantize_points<double>(pts, f, 0.05);
  ASSERT_EQ(q.tensor.rows(), 1);
  EXPECT_EQ(q.tensor.coords->coordinate(0), (Coordinate{0, 0, 0, 0}));
  EXPECT_DOUBLE_EQ(q.tensor.features(0, 0), 2.0);
  EXPECT_EQ(q.point_to_row, (std::vector<int>{0, 0}));
}

TEST(Quantize, FloorsNegativeCoordinates) {
  Eigen::MatrixX3d pts(1, 3);
  pts << -0.01, 0.0, 0.0;
  const auto q = quantize_points<double>(pts, Matrix<double>::Ones(1, 1), 0.05);
  EXPECT_EQ(q.tensor.coords->coordinate(0).i, -1);
}

TEST(Quantize, RowCountMatchesSetOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixX3d pts(1000, 3);
  for (Eigen::Index p = 0; p < pts.rows(); ++p) pts.row(p) << u(rng), u(rng), u(rng);
  const auto q = quantize_points<double>(pts, Matrix<double>::Ones(1000, 2), 0.05);
  const auto oracle = floored_triples(pts, 0.05);
  ASSERT_EQ(q.tensor.coords->size(), oracle.size());
  for (Eigen::Index p = 0; p < pts.rows(); ++p) {
    const Coordinate& c = q.tensor.coords->coordinate(static_cast<std::size_t>(q.point_to_row[static_cast<std::size_t>(p)]));
    EXPECT_EQ(c.i, static_cast<int>(std::floor(pts(p, 0) / 0.05)));
    EXPECT_EQ(c.j, static_cast<int>(std::floor(pts(p, 1) / 0.05)));
    EXPECT_EQ(c.k, static_cast<int>(std::floor(pts(p, 2) / 0.05)));
  }
}

TEST(Quantize, PointOrderDoesNotMatter) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  Eigen::MatrixX3d pts(300, 3);
  for (Eigen::Index p = 0; p < pts.rows(); ++p) pts.row(p) << u(rng), u(rng), u(rng);
  const Matrix<double> f = support::random_matrix(rng, 300, 3);
  std::vector<int> perm(300);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixX3d pts2(300, 3);
  Matrix<double> f2(300, 3);
  for (int p = 0; p < 300; ++p) {
    pts2.row(p) = pts.row(perm[static_cast<std::size_t>(p)]);
    f2.row(p) = f.row(perm[static_cast<std::size_t>(p)]);
  }
  const auto a = quantize_points<double>(pts, f, 0.05);
  const auto b = quantize_points<double>(pts2, f2, 0.05);
  EXPECT_EQ(*a.tensor.coords, *b.tensor.coords);
  EXPECT_LT((a.tensor.features - b.tensor.features).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Quantize, Errors) {
  EXPECT_THROW(quantize_points<double>(Eigen::MatrixX3d(0, 3), Matrix<double>(0, 1), 0.05), DataError);
  Eigen::MatrixX3d pts = Eigen::MatrixX3d::Zero(3, 3);
  pts(2, 1) = std::nan("");
  try {
    quantize_points<double>(pts, Matrix<double>::Ones(3, 1), 0.05);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
  }
}

TEST(CoordinateMapTest, RowsAreABijection) {
  std::mt19937_64 rng(3);
  const auto map = support::random_coords(rng, 400, -20, 20, 3);
  for (std::size_t r = 0; r < map->size(); ++r) EXPECT_EQ(map->find(map->coordinate(r)), static_cast<int>(r));
  EXPECT_EQ(map->find({0, 1000, 0, 0}), -1);
  EXPECT_THROW(CoordinateMap({{0, 1, 2, 3}, {0, 1, 2, 3}}), std::invalid_argument);
}

TEST(KernelOffsetsTest, SmallSizes) {
  const auto one = build_kernel_offsets(1);
  ASSERT_EQ(one.volume(), 1u);
  EXPECT_EQ(one.offsets[0], (std::array<int, 3>{0, 0, 0}));
  const auto three = build_kernel_offsets(3);
  EXPECT_EQ(three.volume(), 27u);
  for (const auto& o : three.offsets)
    for (int v : o) EXPECT_TRUE(v >= -1 && v <= 1);
  EXPECT_THROW(build_kernel_offsets(2), std::invalid_argument);
  EXPECT_THROW(build_kernel_offsets(0), std::invalid_argument);
}

TEST(KernelOffsetsTest, SizeFiveMatchesTripleLoop) {
  std::vector<std::array<int, 3>> oracle;
  for (int a = -2; a <= 2; ++a)
    for (int b = -2; b <= 2; ++b)
      for (int c = -2; c <= 2; ++c) oracle.push_back({a, b, c});
  const auto five = build_kernel_offsets(5);
  EXPECT_EQ(five.offsets, oracle);
  EXPECT_EQ((std::set<std::array<int, 3>>(five.offsets.begin(), five.offsets.end()).size()), 125u);
}

TEST(StrideCoordinates, Examples) {
  const CoordinateMap a({{0, 0, 0, 0}, {0, 1, 0, 0}});
  EXPECT_EQ(stride_coordinates(a, 1, 2), CoordinateMap({{0, 0, 0, 0}}));
  const CoordinateMap b({{0, 0, 0, 0}, {0, 2, 0, 0}});
  EXPECT_EQ(stride_coordinates(b, 1, 2), CoordinateMap({{0, 0, 0, 0}, {0, 2, 0, 0}}));
}

TEST(StrideCoordinates, MatchesDedupOracle) {
  std::mt19937_64 rng(17);
  for (int in_stride : {1, 2, 4}) {
    std::vector<Coordinate> coords;
    for (const auto& c : support::random_coords(rng, 500, -12, 12, 2)->coordinates())
      coords.push_back({c.batch, c.i * in_stride, c.j * in_stride, c.k * in_stride});
    const CoordinateMap map(coords);
    const int s = in_stride * 2;
    auto down = [s](int v) { return static_cast<int>(std::floor(static_cast<double>(v) / s)) * s; };
    std::set<Coordinate> oracle;
    for (const auto& c : coords) oracle.insert({c.batch, down(c.i), down(c.j), down(c.k)});
    const CoordinateMap out = stride_coordinates(map, in_stride, 2);
    EXPECT_EQ(std::set<Coordinate>(out.coordinates().begin(), out.coordinates().end()), oracle);
    EXPECT_EQ(out.size(), oracle.size());
    EXPECT_TRUE(out.aligned_to(s));
  }
}

TEST(KernelMapTest, IsolatedPoint) {
  const CoordinateMap c({{0, 0, 0, 0}});
  const KernelMap km = build_kernel_map(c, c, build_kernel_offsets(3), 1);
  for (std::size_t o = 0; o < 27; ++o) {
    if (o == 13) {
      EXPECT_EQ(km.pairs[o], (std::vector<KernelPair>{{0, 0}}));
    } else {
      EXPECT_TRUE(km.pairs[o].empty());
    }
  }
}

TEST(KernelMapTest, AdjacentPair) {
  const CoordinateMap c({{0, 0, 0, 0}, {0, 1, 0, 0}});
  const auto offsets = build_kernel_offsets(3);
  const KernelMap km = build_kernel_map(c, c, offsets, 1);
  for (std::size_t o = 0; o < offsets.volume(); ++o) {
    const auto& off = offsets.offsets[o];
    if (off == std::array<int, 3>{0, 0, 0}) EXPECT_EQ(km.pairs[o].size(), 2u);
    else if (off == std::array<int, 3>{1, 0, 0}) EXPECT_EQ(km.pairs[o], (std::vector<KernelPair>{{1, 0}}));
    else if (off == std::array<int, 3>{-1, 0, 0}) EXPECT_EQ(km.pairs[o], (std::vector<KernelPair>{{0, 1}}));
    else EXPECT_TRUE(km.pairs[o].empty());
  }
  EXPECT_EQ(km.pair_count(), 4u);
}

TEST(KernelMapTest, MatchesAllPairsOracle) {
  std::mt19937_64 rng(23);
  const auto in = support::random_coords(rng, 200, 0, 8, 2);
  const auto offsets = build_kernel_offsets(3);
  for (int stride : {1, 2}) {
    std::vector<Coordinate> scaled;
    for (const auto& c : in->coordinates()) scaled.push_back({c.batch, c.i * stride, c.j * stride, c.k * stride});
    const CoordinateMap src(scaled);
    const CoordinateMap dst = stride_coordinates(src, stride, 2);
    const KernelMap km = build_kernel_map(src, dst, offsets, stride);
    for (std::size_t o = 0; o < offsets.volume(); ++o) {
      std::vector<KernelPair> oracle;
      for (std::size_t b = 0; b < dst.size(); ++b)
        for (std::size_t a = 0; a < src.size(); ++a)
          if (src.coordinate(a) == dst.coordinate(b).shifted(offsets.offsets[o], stride))
            oracle.push_back({static_cast<int>(a), static_cast<int>(b)});
      std::vector<KernelPair> got = km.pairs[o];
      std::sort(got.begin(), got.end(), [](auto x, auto y) { return std::tie(x.out_row, x.in_row) < std::tie(y.out_row, y.in_row); });
      std::sort(oracle.begin(), oracle.end(), [](auto x, auto y) { return std::tie(x.out_row, x.in_row) < std::tie(y.out_row, y.in_row); });
      EXPECT_EQ(got, oracle) << "offset " << o << " stride " << stride;
    }
  }
}

TEST(KernelMapTest, SubmanifoldMapIsSymmetric) {
  std::mt19937_64 rng(29);
  const auto c = support::random_coords(rng, 150, 0, 7);
  const auto offsets = build_kernel_offsets(3);
  const KernelMap km = build_kernel_map(*c, *c, offsets, 1);
  for (std::size_t o = 0; o < offsets.volume(); ++o) {
    std::set<std::pair<int, int>> mirrored;
    for (const auto& p : km.pairs[offsets.volume() - 1 - o]) mirrored.emplace(p.out_row, p.in_row);
    std::set<std::pair<int, int>> direct;
    for (const auto& p : km.pairs[o]) direct.emplace(p.in_row, p.out_row);
    EXPECT_EQ(direct, mirrored);
  }
}

TEST(KernelMapTest, DenseGridPairCountIsChebyshevNeighbourCount) {
  const auto grid = support::dense_grid(5);
  const KernelMap km = build_kernel_map(*grid, *grid, build_kernel_offsets(3), 1);
  // per axis, the number of (a, b) with |a - b| <= 1 on a line of 5 is 5 + 2 * 4
  EXPECT_EQ(km.pair_count(), 13u * 13u * 13u);
}

TEST(KernelMapTest, WorkerCountDoesNotChangeResult) {
  std::mt19937_64 rng(31);
  const auto c = support::random_coords(rng, 600, 0, 12, 2);
  const auto offsets = build_kernel_offsets(3);
  const KernelMap one = build_kernel_map(*c, *c, offsets, 1, 1);
  const KernelMap four = build_kernel_map(*c, *c, offsets, 1, 4);
  EXPECT_EQ(one.pairs, four.pairs);
}
