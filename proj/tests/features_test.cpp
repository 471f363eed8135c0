#include "s3net/features.hpp"
#include "s3net/types.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace s3net;

namespace {

constexpr double kPi = std::numbers::pi;

// Sensor-frame point at the given azimuth and elevation (radians).
Eigen::RowVector3d polar(double range, double yaw, double pitch) {
  return {range * std::cos(pitch) * std::cos(yaw), range * std::cos(pitch) * std::sin(yaw), range * std::sin(pitch)};
}

// Azimuth at the centre of column c.
double column_yaw(int c, int width) { return kPi * (1.0 - 2.0 * (c + 0.5) / width); }

RangeImage image_from_depth(const Eigen::MatrixXd& depth) {
  RangeImage img;
  img.height = static_cast<int>(depth.rows());
  img.width = static_cast<int>(depth.cols());
  img.depth = depth;
  img.owner = Eigen::MatrixXi::Constant(img.height, img.width, -1);
  int next = 0;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      if (depth(r, c) > 0) img.owner(r, c) = next++;
  return img;
}

}  // namespace

TEST(Projection, PointOnForwardAxisLandsInCentreColumn) {
  const double mid = (3.0 + -25.0) / 2.0 * kPi / 180.0;
  Eigen::MatrixX3d pts(1, 3);
  pts.row(0) = polar(10.0, 0.0, mid);
  const RangeImage img = project_to_range(pts);
  EXPECT_EQ(img.mapping[0].col, 1024);
  EXPECT_EQ(img.mapping[0].row, 32);
  EXPECT_EQ(img.occupied_count(), 1u);
  EXPECT_DOUBLE_EQ(img.depth(32, 1024), 10.0);
}

TEST(Projection, NearerPointOwnsSharedPixel) {
  Eigen::MatrixX3d pts(2, 3);
  pts.row(0) = polar(10.0, 0.3, -0.1);
  pts.row(1) = polar(5.0, 0.3, -0.1);
  const RangeImage img = project_to_range(pts);
  EXPECT_EQ(img.mapping[0], img.mapping[1]);
  const auto [r, c] = img.mapping[0];
  EXPECT_NEAR(img.depth(r, c), 5.0, 1e-12);
  EXPECT_EQ(img.owner(r, c), 1);
}

TEST(Projection, RingOccupiesEveryColumnOnce) {
  Eigen::MatrixX3d pts(2048, 3);
  for (int c = 0; c < 2048; ++c) pts.row(c) = polar(20.0, column_yaw(c, 2048), -0.1);
  const RangeImage img = project_to_range(pts);
  std::vector<int> hits(2048, 0);
  for (const auto& px : img.mapping) ++hits[static_cast<std::size_t>(px.col)];
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_EQ(img.occupied_count(), 2048u);
}

TEST(Projection, RotationAboutVerticalAxisShiftsColumns) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> col(0, 2047);
  std::uniform_real_distribution<double> pitch(-0.4, 0.03), range(2.0, 50.0);
  const int shift = 37;
  Eigen::MatrixX3d a(200, 3), b(200, 3);
  for (int p = 0; p < 200; ++p) {
    const int c = col(rng);
    const double e = pitch(rng), d = range(rng);
    a.row(p) = polar(d, column_yaw(c, 2048), e);
    b.row(p) = polar(d, column_yaw((c + shift) % 2048, 2048), e);
  }
  const RangeImage ia = project_to_range(a), ib = project_to_range(b);
  for (int p = 0; p < 200; ++p) {
    EXPECT_EQ((ia.mapping[static_cast<std::size_t>(p)].col + shift) % 2048, ib.mapping[static_cast<std::size_t>(p)].col);
    EXPECT_EQ(ia.mapping[static_cast<std::size_t>(p)].row, ib.mapping[static_cast<std::size_t>(p)].row);
  }
}

TEST(Projection, OutOfViewRowsAreClamped) {
  Eigen::MatrixX3d pts(2, 3);
  pts.row(0) = polar(5.0, 0.0, 1.2);
  pts.row(1) = polar(5.0, 0.0, -1.2);
  const RangeImage img = project_to_range(pts);
  EXPECT_EQ(img.mapping[0].row, 0);
  EXPECT_EQ(img.mapping[1].row, 63);
}

TEST(Projection, Errors) {
  EXPECT_THROW(project_to_range(Eigen::MatrixX3d(0, 3)), DataError);
  Eigen::MatrixX3d pts(3, 3);
  pts << 1, 0, 0, 0, 0, 0, 2, 0, 0;
  try {
    project_to_range(pts);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("point 1"), std::string::npos);
  }
  pts.row(1) << 1, std::nan(""), 0;
  EXPECT_THROW(project_to_range(pts), DataError);
}

TEST(Normals, ConstantDepthPointsStraightOut) {
  const NormalMap n = compute_normals(image_from_depth(Eigen::MatrixXd::Constant(8, 16, 7.5)));
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 16; ++c) EXPECT_EQ(n.at(r, c), Eigen::RowVector3d(0, 0, 1));
}

TEST(Normals, UnitSlopeAlongColumns) {
  Eigen::MatrixXd depth(6, 10);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 10; ++c) depth(r, c) = c + 1.0;
  const NormalMap n = compute_normals(image_from_depth(depth));
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 10; ++c) {
      EXPECT_NEAR(n.at(r, c)(0), 0.7071, 1e-4);
      EXPECT_NEAR(n.at(r, c)(1), 0.0, 1e-4);
      EXPECT_NEAR(n.at(r, c)(2), 0.7071, 1e-4);
    }
}

TEST(Normals, MatchIndependentDifferenceOracle) {
  const int h = 16, w = 32;
  std::mt19937_64 rng(4);
  std::bernoulli_distribution hole(0.15);
  Eigen::MatrixXd depth(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) depth(r, c) = hole(rng) ? 0.0 : 10.0 + std::sin(0.3 * c) + 0.5 * std::cos(0.2 * r);
  const NormalMap n = compute_normals(image_from_depth(depth));

  auto occupied = [&](int r, int c) { return r >= 0 && c >= 0 && r < h && c < w && depth(r, c) > 0; };
  auto derivative = [&](int r, int c, int dr, int dc) {
    const bool prev = occupied(r - dr, c - dc), next = occupied(r + dr, c + dc);
    if (prev && next) return (depth(r + dr, c + dc) - depth(r - dr, c - dc)) / 2.0;
    if (next) return depth(r + dr, c + dc) - depth(r, c);
    if (prev) return depth(r, c) - depth(r - dr, c - dc);
    return 0.0;
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!occupied(r, c)) {
        EXPECT_EQ(n.at(r, c), Eigen::RowVector3d::Zero());
        continue;
      }
      const Eigen::Vector3d raw(derivative(r, c, 0, 1), derivative(r, c, 1, 0), 1.0);
      const Eigen::RowVector3d expected = raw.normalized().transpose();
      EXPECT_LT((n.at(r, c) - expected).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_NEAR(n.at(r, c).norm(), 1.0, 1e-5);
    }
}

TEST(Lifting, GathersPixelFeatures) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> yaw(-kPi, kPi), pitch(-0.4, 0.03), range(2.0, 40.0);
  Eigen::MatrixX3d pts(3000, 3);
  for (int p = 0; p < 3000; ++p) pts.row(p) = polar(range(rng), yaw(rng), pitch(rng));
  pts.row(2999) = pts.row(0) * 1.5;  // shares a pixel with point 0
  const RangeImage img = project_to_range(pts);
  const NormalMap normals = compute_normals(img);
  const Eigen::MatrixX3d lifted = lift_to_points(normals, img.mapping);
  for (int p = 0; p < 3000; ++p) {
    const auto [r, c] = img.mapping[static_cast<std::size_t>(p)];
    EXPECT_EQ(lifted.row(p), normals.at(r, c));
    EXPECT_NEAR(lifted.row(p).norm(), 1.0, 1e-5);
  }
  EXPECT_EQ(img.mapping[0], img.mapping[2999]);
  EXPECT_EQ(lifted.row(0), lifted.row(2999));
}

TEST(Lifting, RejectsOutOfRangeMapping) {
  const NormalMap n = compute_normals(image_from_depth(Eigen::MatrixXd::Ones(2, 2)));
  const std::vector<PixelIndex> bad{{0, 0}, {2, 0}};
  EXPECT_THROW(lift_to_points(n, bad), DataError);
}
