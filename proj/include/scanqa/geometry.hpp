#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace scanqa {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Axis-aligned box: center plus full extents along x, y, z (meters).
struct Box3D {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();

  Vec3 min_corner() const { return center - 0.5 * size; }
  Vec3 max_corner() const { return center + 0.5 * size; }
  double volume() const { return size.prod(); }
  bool valid() const { return (size.array() > 0.0).all() && center.allFinite() && size.allFinite(); }
  /// Closed containment test.
  bool contains(const Vec3& p) const;

  bool operator==(const Box3D& other) const { return center == other.center && size == other.size; }
};

/// Per-point feature channel groups, in manifest order.
enum class Channel { kHeight, kRgb, kNormal, kMultiview };

int channel_width(Channel c);
std::string channel_name(Channel c);
Channel parse_channel(const std::string& name);

/// All four channel groups; their widths sum to 135.
std::vector<Channel> full_manifest();

struct PointCloud {
  Matrix coords;    // N x 3
  Matrix features;  // N x C
  std::vector<Channel> manifest;

  Eigen::Index size() const { return coords.rows(); }
  /// Column offset of a channel group inside `features`, or -1 when absent.
  int channel_offset(Channel c) const;
  /// Throws GeometryError when an invariant is broken.
  void validate() const;
  /// Copy keeping only the listed channel groups (in the order given).
  PointCloud select(std::span<const Channel> channels) const;

  bool operator==(const PointCloud& other) const {
    return manifest == other.manifest && coords == other.coords && features == other.features;
  }
};

struct AugmentConfig {
  double max_rot_deg = 5.0;
  double max_trans_m = 0.5;
};

/// Intersection volume over union volume. Touching faces give 0.
double iou_aabb(const Box3D& a, const Box3D& b);

/// Rotation matrix Rz * Ry * Rx for angles in radians.
Eigen::Matrix3d rotation_zyx(double rx, double ry, double rz);

struct Augmented {
  PointCloud cloud;
  std::vector<Box3D> boxes;
};

/// Random rigid motion used during training. Rotation is Rz*Ry*Rx about the
/// point centroid with independent uniform angles, followed by a uniform
/// translation. Box centers move with the points; extents are unchanged.
Augmented augment(const PointCloud& pc, std::span<const Box3D> boxes, const AugmentConfig& cfg,
                  std::uint64_t seed);

/// Greedy max-min sampling. Ties go to the lowest index.
std::vector<int> farthest_point_sample(const Matrix& coords, int m, int start_index = 0);

/// Per center, points within `radius` in ascending index order, truncated to
/// `max_k` and padded by repeating the first member. A center with no point in
/// range gets its nearest point.
std::vector<std::vector<int>> ball_query(const Matrix& coords, const Matrix& centers, double radius,
                                         int max_k);

}  // namespace scanqa
