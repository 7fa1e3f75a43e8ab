#include "scanqa/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

namespace scanqa {

bool Box3D::contains(const Vec3& p) const {
  const Vec3 lo = min_corner();
  const Vec3 hi = max_corner();
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

int channel_width(Channel c) {
  switch (c) {
    case Channel::kHeight:
      return 1;
    case Channel::kRgb:
    case Channel::kNormal:
      return 3;
    case Channel::kMultiview:
      return 128;
  }
  return 0;
}

std::string channel_name(Channel c) {
  switch (c) {
    case Channel::kHeight:
      return "height";
    case Channel::kRgb:
      return "rgb";
    case Channel::kNormal:
      return "normal";
    case Channel::kMultiview:
      return "multiview";
  }
  return "?";
}

Channel parse_channel(const std::string& name) {
  if (name == "height" || name == "xyz") return Channel::kHeight;
  if (name == "rgb") return Channel::kRgb;
  if (name == "normal") return Channel::kNormal;
  if (name == "multiview") return Channel::kMultiview;
  throw GeometryError("unknown feature channel: " + name);
}

std::vector<Channel> full_manifest() {
  return {Channel::kHeight, Channel::kRgb, Channel::kNormal, Channel::kMultiview};
}

int PointCloud::channel_offset(Channel c) const {
  int offset = 0;
  for (Channel m : manifest) {
    if (m == c) return offset;
    offset += channel_width(m);
  }
  return -1;
}

void PointCloud::validate() const {
  if (coords.rows() < 1) throw GeometryError("point cloud is empty");
  if (coords.cols() != 3) throw GeometryError("coords must be N x 3");
  int width = 0;
  for (Channel c : manifest) width += channel_width(c);
  if (features.rows() != coords.rows() || features.cols() != width) {
    throw GeometryError("feature matrix does not match channel manifest");
  }
  if (!coords.allFinite() || !features.allFinite()) throw GeometryError("non-finite point data");
  if (int off = channel_offset(Channel::kRgb); off >= 0) {
    auto rgb = features.middleCols(off, 3);
    if ((rgb.array() < 0.0).any() || (rgb.array() > 1.0).any()) {
      throw GeometryError("rgb channel outside [0, 1]");
    }
  }
  if (int off = channel_offset(Channel::kNormal); off >= 0) {
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      const double n = features.row(i).segment(off, 3).norm();
      if (std::abs(n - 1.0) > 1e-3) throw GeometryError("normal channel is not unit length");
    }
  }
}

PointCloud PointCloud::select(std::span<const Channel> channels) const {
  PointCloud out;
  out.coords = coords;
  int width = 0;
  for (Channel c : channels) {
    if (channel_offset(c) < 0) throw GeometryError("channel not present: " + channel_name(c));
    width += channel_width(c);
  }
  out.features.resize(coords.rows(), width);
  int col = 0;
  for (Channel c : channels) {
    const int w = channel_width(c);
    out.features.middleCols(col, w) = features.middleCols(channel_offset(c), w);
    col += w;
    out.manifest.push_back(c);
  }
  return out;
}

double iou_aabb(const Box3D& a, const Box3D& b) {
  if (!a.valid() || !b.valid()) throw GeometryError("invalid box: extents must be positive");
  const Vec3 lo = a.min_corner().cwiseMax(b.min_corner());
  const Vec3 hi = a.max_corner().cwiseMin(b.max_corner());
  const Vec3 overlap = (hi - lo).cwiseMax(0.0);
  const double inter = overlap.prod();
  if (inter <= 0.0) return 0.0;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Eigen::Matrix3d rotation_zyx(double rx, double ry, double rz) {
  const Eigen::Matrix3d x = Eigen::AngleAxisd(rx, Vec3::UnitX()).toRotationMatrix();
  const Eigen::Matrix3d y = Eigen::AngleAxisd(ry, Vec3::UnitY()).toRotationMatrix();
  const Eigen::Matrix3d z = Eigen::AngleAxisd(rz, Vec3::UnitZ()).toRotationMatrix();
  return z * y * x;
}

namespace {

double uniform_symmetric(std::mt19937_64& rng, double half_width) {
  if (half_width <= 0.0) return 0.0;
  return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
}

}  // namespace

Augmented augment(const PointCloud& pc, std::span<const Box3D> boxes, const AugmentConfig& cfg,
                  std::uint64_t seed) {
  if (cfg.max_rot_deg < 0.0 || cfg.max_trans_m < 0.0) {
    throw GeometryError("augmentation bounds must be non-negative");
  }
  pc.validate();
  for (const Box3D& b : boxes) {
    if (!b.valid()) throw GeometryError("invalid box: extents must be positive");
  }

  std::mt19937_64 rng(seed);
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double rx = uniform_symmetric(rng, cfg.max_rot_deg) * kDeg;
  const double ry = uniform_symmetric(rng, cfg.max_rot_deg) * kDeg;
  const double rz = uniform_symmetric(rng, cfg.max_rot_deg) * kDeg;
  Vec3 shift;
  for (int k = 0; k < 3; ++k) shift[k] = uniform_symmetric(rng, cfg.max_trans_m);

  Augmented out{pc, {boxes.begin(), boxes.end()}};
  if (rx != 0.0 || ry != 0.0 || rz != 0.0) {
    const Eigen::Matrix3d rot = rotation_zyx(rx, ry, rz);
    const Eigen::RowVector3d centroid = pc.coords.colwise().mean();
    out.cloud.coords = ((pc.coords.rowwise() - centroid) * rot.transpose()).rowwise() + centroid;
    for (Box3D& b : out.boxes) {
      b.center = rot * (b.center - centroid.transpose()) + centroid.transpose();
    }
    if (int off = pc.channel_offset(Channel::kNormal); off >= 0) {
      out.cloud.features.middleCols(off, 3) = pc.features.middleCols(off, 3) * rot.transpose();
    }
  }
  if (!shift.isZero(0.0)) {
    out.cloud.coords.rowwise() += shift.transpose();
    for (Box3D& b : out.boxes) b.center += shift;
  }
  return out;
}

std::vector<int> farthest_point_sample(const Matrix& coords, int m, int start_index) {
  const auto n = static_cast<int>(coords.rows());
  if (m < 1 || m > n) throw GeometryError("farthest_point_sample: need 1 <= m <= N");
  if (start_index < 0 || start_index >= n) throw GeometryError("farthest_point_sample: bad start");

  std::vector<int> picked;
  picked.reserve(m);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  int current = start_index;
  for (int step = 0; step < m; ++step) {
    picked.push_back(current);
    taken[current] = 1;
    const Eigen::RowVector3d c = coords.row(current);
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d = (coords.row(i) - c).squaredNorm();
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

std::vector<std::vector<int>> ball_query(const Matrix& coords, const Matrix& centers, double radius,
                                         int max_k) {
  if (!(radius > 0.0)) throw GeometryError("ball_query: radius must be positive");
  if (max_k < 1) throw GeometryError("ball_query: max_k must be >= 1");
  if (coords.rows() < 1) throw GeometryError("ball_query: empty point set");

  const double r2 = radius * radius;
  std::vector<std::vector<int>> groups(centers.rows());
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    auto& g = groups[c];
    g.reserve(max_k);
    int nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < coords.rows() && static_cast<int>(g.size()) < max_k; ++i) {
      const double d = (coords.row(i) - centers.row(c)).squaredNorm();
      if (d <= r2) g.push_back(static_cast<int>(i));
      if (d < nearest_d) {
        nearest_d = d;
        nearest = static_cast<int>(i);
      }
    }
    if (g.empty()) {
      // the early exit above never triggers with an empty group, so the scan was complete
      g.push_back(nearest);
    }
    const int first = g.front();
    while (static_cast<int>(g.size()) < max_k) g.push_back(first);
  }
  return groups;
}

}  // namespace scanqa
