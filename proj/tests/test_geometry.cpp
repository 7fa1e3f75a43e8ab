#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <numbers>
#include <random>

#include "oracles.hpp"
#include "scanqa/data.hpp"
#include "scanqa/geometry.hpp"

using namespace scanqa;

namespace {

Box3D box(double cx, double cy, double cz, double sx, double sy, double sz) {
  return {Vec3(cx, cy, cz), Vec3(sx, sy, sz)};
}

Matrix random_points(int n, std::mt19937_64& rng, double extent = 1.0) {
  std::uniform_real_distribution<double> u(0.0, extent);
  Matrix x(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) x(i, k) = u(rng);
  return x;
}

}  // namespace

TEST(Iou, IdenticalBoxesGiveOne) {
  const Box3D b = box(1, 2, 3, 0.5, 1.0, 2.0);
  EXPECT_DOUBLE_EQ(iou_aabb(b, b), 1.0);
}

TEST(Iou, HalfShiftedUnitCubes) {
  EXPECT_NEAR(iou_aabb(box(0, 0, 0, 1, 1, 1), box(0.5, 0, 0, 1, 1, 1)), 1.0 / 3.0, 1e-15);
}

TEST(Iou, TouchingFacesAreZero) {
  EXPECT_EQ(iou_aabb(box(0, 0, 0, 1, 1, 1), box(1, 0, 0, 1, 1, 1)), 0.0);
  EXPECT_EQ(iou_aabb(box(0, 0, 0, 1, 1, 1), box(5, 5, 5, 1, 1, 1)), 0.0);
}

TEST(Iou, NestedBoxIsVolumeRatio) {
  EXPECT_NEAR(iou_aabb(box(0, 0, 0, 2, 2, 2), box(0, 0, 0, 1, 1, 1)), 1.0 / 8.0, 1e-15);
}

TEST(Iou, RejectsDegenerateBoxes) {
  EXPECT_THROW(iou_aabb(box(0, 0, 0, 0, 1, 1), box(0, 0, 0, 1, 1, 1)), GeometryError);
  EXPECT_THROW(iou_aabb(box(0, 0, 0, 1, 1, 1), box(0, 0, 0, 1, -1, 1)), GeometryError);
}

TEST(Iou, SymmetricAndBounded) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(-1, 1), s(0.1, 2);
  for (int t = 0; t < 200; ++t) {
    Box3D a = box(c(rng), c(rng), c(rng), s(rng), s(rng), s(rng));
    Box3D b = box(c(rng), c(rng), c(rng), s(rng), s(rng), s(rng));
    const double ab = iou_aabb(a, b);
    EXPECT_EQ(ab, iou_aabb(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Iou, MatchesVoxelMonteCarlo) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> c(-0.5, 0.5), s(0.2, 1.5);
  for (int t = 0; t < 10; ++t) {
    Box3D a = box(c(rng), c(rng), c(rng), s(rng), s(rng), s(rng));
    Box3D b = box(c(rng), c(rng), c(rng), s(rng), s(rng), s(rng));
    EXPECT_NEAR(iou_aabb(a, b), oracle::mc_iou(a, b, 60, rng), 4e-3) << t;
  }
}

TEST(Fps, ThreeCollinearPoints) {
  Matrix x(3, 3);
  x << 0, 0, 0, 1, 0, 0, 10, 0, 0;
  EXPECT_EQ(farthest_point_sample(x, 2, 0), (std::vector<int>{0, 2}));
}

TEST(Fps, FullSampleIsPermutation) {
  std::mt19937_64 rng(5);
  Matrix x = random_points(50, rng);
  auto idx = farthest_point_sample(x, 50, 0);
  std::sort(idx.begin(), idx.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(idx[i], i);
}

TEST(Fps, DuplicatePointsStayDistinctIndices) {
  Matrix x = Matrix::Zero(5, 3);
  auto idx = farthest_point_sample(x, 5, 2);
  EXPECT_EQ(idx, (std::vector<int>{2, 0, 1, 3, 4}));
}

TEST(Fps, RejectsTooManySamples) {
  Matrix x = Matrix::Zero(4, 3);
  EXPECT_THROW(farthest_point_sample(x, 5, 0), GeometryError);
  EXPECT_THROW(farthest_point_sample(x, 0, 0), GeometryError);
}

TEST(Fps, MatchesBruteForce) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const int n = 8 + static_cast<int>(rng() % 120);
    Matrix x = random_points(n, rng);
    const int m = 1 + static_cast<int>(rng() % n);
    const int start = static_cast<int>(rng() % n);
    EXPECT_EQ(farthest_point_sample(x, m, start), oracle::fps(x, m, start));
  }
}

TEST(BallQuery, EmptyNeighbourhoodFallsBackToNearest) {
  Matrix x(3, 3);
  x << 0, 0, 0, 5, 0, 0, 9, 0, 0;
  Matrix c(1, 3);
  c << 4, 0, 0;
  auto g = ball_query(x, c, 0.5, 3);
  EXPECT_EQ(g[0], (std::vector<int>{1, 1, 1}));
}

TEST(BallQuery, TruncatesInIndexOrderAndPads) {
  Matrix x(4, 3);
  x << 0, 0, 0, 0.1, 0, 0, 0.2, 0, 0, 3, 0, 0;
  Matrix c = Matrix::Zero(1, 3);
  EXPECT_EQ(ball_query(x, c, 0.5, 2)[0], (std::vector<int>{0, 1}));
  EXPECT_EQ(ball_query(x, c, 0.5, 5)[0], (std::vector<int>{0, 1, 2, 0, 0}));
}

TEST(BallQuery, MatchesBruteForce) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const int n = 4 + static_cast<int>(rng() % 124);
    Matrix x = random_points(n, rng);
    Matrix c = random_points(7, rng);
    const double r = 0.05 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng);
    const int k = 1 + static_cast<int>(rng() % 16);
    EXPECT_EQ(ball_query(x, c, r, k), oracle::ball_query(x, c, r, k));
  }
}

TEST(Channels, SelectKeepsRequestedColumns) {
  SceneConfig sc;
  sc.num_points = 256;
  const ScenePackage s = generate_scene(sc, 4, "scene0000_00");
  const std::vector<Channel> pick = {Channel::kRgb, Channel::kHeight};
  const PointCloud sub = s.point_cloud.select(pick);
  ASSERT_EQ(sub.features.cols(), 4);
  EXPECT_EQ(sub.features.leftCols(3), s.point_cloud.features.middleCols(1, 3));
  EXPECT_EQ(sub.features.col(3), s.point_cloud.features.col(0));
  EXPECT_EQ(s.point_cloud.features.cols(), 135);
}

TEST(Channels, ValidateRejectsNonUnitNormals) {
  SceneConfig sc;
  sc.num_points = 128;
  ScenePackage s = generate_scene(sc, 4, "scene0000_00");
  s.point_cloud.features(0, s.point_cloud.channel_offset(Channel::kNormal)) = 3.0;
  EXPECT_THROW(s.point_cloud.validate(), GeometryError);
}

TEST(Augment, ZeroConfigIsIdentity) {
  SceneConfig sc;
  sc.num_points = 256;
  const ScenePackage s = generate_scene(sc, 8, "scene0000_00");
  const Augmented a = augment(s.point_cloud, s.gt_boxes, {0.0, 0.0}, 99);
  EXPECT_EQ(a.cloud, s.point_cloud);
  EXPECT_EQ(a.boxes, s.gt_boxes);
}

TEST(Augment, RigidAndDeterministic) {
  SceneConfig sc;
  sc.num_points = 300;
  const ScenePackage s = generate_scene(sc, 8, "scene0000_00");
  const Augmented a = augment(s.point_cloud, s.gt_boxes, {}, 5);
  const Augmented b = augment(s.point_cloud, s.gt_boxes, {}, 5);
  EXPECT_EQ(a.cloud, b.cloud);
  const Matrix& p = s.point_cloud.coords;
  const Matrix& q = a.cloud.coords;
  for (int i = 0; i < 300; i += 7) {
    for (int j = i + 1; j < 300; j += 13) {
      const double d0 = (p.row(i) - p.row(j)).norm();
      const double d1 = (q.row(i) - q.row(j)).norm();
      EXPECT_LE(std::abs(d0 - d1), 1e-5 * std::max(d0, 1e-9));
    }
  }
  const int off = s.point_cloud.channel_offset(Channel::kNormal);
  for (int i = 0; i < 300; ++i) EXPECT_NEAR(a.cloud.features.row(i).segment(off, 3).norm(), 1.0, 1e-3);
}

TEST(Augment, RotationWithinBounds) {
  // translation off, so the centroid must not move and rotation is at most 5 degrees per axis
  SceneConfig sc;
  sc.num_points = 200;
  const ScenePackage s = generate_scene(sc, 2, "scene0000_00");
  const Augmented a = augment(s.point_cloud, {}, {5.0, 0.0}, 17);
  EXPECT_LT((a.cloud.coords.colwise().mean() - s.point_cloud.coords.colwise().mean()).norm(), 1e-9);
  // composing three rotations of at most 5 degrees turns by at most 15
  const double max_angle = 15.0 * std::numbers::pi / 180.0;
  Eigen::Matrix3d est;
  Matrix p = s.point_cloud.coords.rowwise() - s.point_cloud.coords.colwise().mean();
  Matrix q = a.cloud.coords.rowwise() - a.cloud.coords.colwise().mean();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(p.transpose() * q, Eigen::ComputeFullU | Eigen::ComputeFullV);
  est = svd.matrixV() * svd.matrixU().transpose();
  const double angle = std::acos(std::clamp((est.trace() - 1) / 2, -1.0, 1.0));
  EXPECT_LE(angle, max_angle + 1e-6);
}

TEST(Augment, RejectsNegativeBounds) {
  SceneConfig sc;
  sc.num_points = 64;
  const ScenePackage s = generate_scene(sc, 2, "scene0000_00");
  EXPECT_THROW(augment(s.point_cloud, {}, {-1.0, 0.0}, 1), GeometryError);
}
