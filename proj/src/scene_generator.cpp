#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "scanqa/data.hpp"

namespace scanqa {

const std::vector<std::pair<std::string, Vec3>>& color_palette() {
  static const std::vector<std::pair<std::string, Vec3>> palette = {
      {"red", {0.80, 0.12, 0.10}},   {"green", {0.15, 0.60, 0.20}}, {"blue", {0.12, 0.25, 0.80}},
      {"brown", {0.45, 0.28, 0.14}}, {"white", {0.94, 0.94, 0.92}}, {"black", {0.06, 0.06, 0.07}},
      {"yellow", {0.90, 0.80, 0.15}}, {"gray", {0.50, 0.50, 0.52}},
  };
  return palette;
}

namespace {

// Typical extents (x, y, z) per class index, meters.
Vec3 size_prior(int cls) {
  static const std::vector<Vec3> priors = {
      {0.9, 0.5, 1.0},  // cabinet
      {1.6, 2.0, 0.6},  // bed
      {0.5, 0.5, 0.9},  // chair
      {1.8, 0.9, 0.8},  // sofa
      {1.2, 0.8, 0.75}, // table
      {0.9, 0.2, 2.0},  // door
      {1.0, 0.2, 1.2},  // window
      {0.9, 0.4, 1.8},  // bookshelf
      {0.7, 0.1, 0.5},  // picture
      {1.5, 0.6, 0.9},  // counter
      {1.3, 0.7, 0.75}, // desk
      {1.5, 0.2, 2.0},  // curtain
      {0.8, 0.7, 1.8},  // refrigerator
      {1.0, 0.2, 1.9},  // shower curtain
      {0.4, 0.7, 0.8},  // toilet
      {0.6, 0.5, 0.9},  // sink
      {0.8, 1.6, 0.6},  // bathtub
      {0.8, 0.6, 0.7},  // otherfurniture
  };
  return priors.at(static_cast<std::size_t>(cls));
}

// Snap to a dyadic grid so box faces are exact in both float and double.
double snap(double v, double step) { return std::round(v / step) * step; }

Matrix class_signatures() {
  std::mt19937_64 rng(0x5ca9a11dULL);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix sig(kNumClasses + 1, 128);  // last row is the background (floor/walls)
  for (Eigen::Index i = 0; i < sig.size(); ++i) sig.data()[i] = g(rng);
  return sig;
}

struct SurfacePoint {
  Vec3 p;
  Vec3 n;
};

// Uniform point on the five visible faces of a floor-standing box.
SurfacePoint sample_box_surface(const Box3D& b, std::mt19937_64& rng) {
  const Vec3 lo = b.min_corner();
  const Vec3 hi = b.max_corner();
  const Vec3 s = b.size;
  const double areas[5] = {s.y() * s.z(), s.y() * s.z(), s.x() * s.z(), s.x() * s.z(), s.x() * s.y()};
  std::discrete_distribution<int> face(std::begin(areas), std::end(areas));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 r(u(rng), u(rng), u(rng));
  Vec3 p = lo + r.cwiseProduct(s);
  Vec3 n = Vec3::Zero();
  switch (face(rng)) {
    case 0:
      p.x() = lo.x();
      n.x() = -1;
      break;
    case 1:
      p.x() = hi.x();
      n.x() = 1;
      break;
    case 2:
      p.y() = lo.y();
      n.y() = -1;
      break;
    case 3:
      p.y() = hi.y();
      n.y() = 1;
      break;
    default:
      p.z() = hi.z();
      n.z() = 1;
      break;
  }
  return {p, n};
}

bool footprints_clear(const Box3D& a, const Box3D& b, double gap) {
  for (int k = 0; k < 2; ++k) {
    if (a.max_corner()[k] + gap <= b.min_corner()[k] || b.max_corner()[k] + gap <= a.min_corner()[k]) {
      return true;
    }
  }
  return false;
}

float as_float(double v) { return static_cast<float>(v); }

}  // namespace

ScenePackage generate_scene(const SceneConfig& cfg, std::uint64_t seed, const std::string& scene_id) {
  if (cfg.class_names.size() != static_cast<std::size_t>(kNumClasses)) {
    throw DataError("scene config needs exactly 18 class names");
  }
  if (cfg.num_points < 1) throw DataError("scene config needs at least one point");
  if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects) throw DataError("bad object count range");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };

  ScenePackage scene;
  scene.scene_id = scene_id;
  const double width = snap(uniform(cfg.room_min_extent, cfg.room_max_extent), 1.0 / 64);
  const double depth = snap(uniform(cfg.room_min_extent, cfg.room_max_extent), 1.0 / 64);
  const double height = snap(cfg.room_height, 1.0 / 64);
  scene.room.center = Vec3(width / 2, depth / 2, height / 2);
  scene.room.size = Vec3(width, depth, height);

  const int n_objects = std::uniform_int_distribution<int>(cfg.min_objects, cfg.max_objects)(rng);
  const auto& palette = color_palette();
  for (int i = 0; i < n_objects; ++i) {
    int cls;
    if (!scene.gt_classes.empty() && u01(rng) < 0.4) {
      cls = scene.gt_classes[std::uniform_int_distribution<std::size_t>(0, scene.gt_classes.size() - 1)(rng)];
    } else {
      cls = std::uniform_int_distribution<int>(0, kNumClasses - 1)(rng);
    }
    Box3D box;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_placement_retries && !placed; ++attempt) {
      Vec3 size = size_prior(cls) * uniform(0.8, 1.2);
      for (int k = 0; k < 3; ++k) size[k] = std::max(1.0 / 64, snap(size[k], 1.0 / 64));
      if (size.x() > width || size.y() > depth || size.z() > height) continue;
      box.size = size;
      box.center.x() = snap(uniform(size.x() / 2, width - size.x() / 2), 1.0 / 128);
      box.center.y() = snap(uniform(size.y() / 2, depth - size.y() / 2), 1.0 / 128);
      box.center.z() = size.z() / 2;
      box.center.x() = std::clamp(box.center.x(), size.x() / 2, width - size.x() / 2);
      box.center.y() = std::clamp(box.center.y(), size.y() / 2, depth - size.y() / 2);
      placed = std::all_of(scene.gt_boxes.begin(), scene.gt_boxes.end(),
                           [&](const Box3D& other) { return footprints_clear(box, other, 0.1); });
    }
    if (!placed) {
      throw DataError("could not place object " + std::to_string(i) + " in scene " + scene_id);
    }
    scene.gt_boxes.push_back(box);
    scene.gt_classes.push_back(cls);
    scene.gt_object_names.push_back(cfg.class_names[static_cast<std::size_t>(cls)]);
    scene.gt_colors.push_back(palette[std::uniform_int_distribution<std::size_t>(0, palette.size() - 1)(rng)].first);
  }

  // Point budget: every object gets a share proportional to its visible area, at least 4.
  const int total = cfg.num_points;
  std::vector<int> per_object(scene.gt_boxes.size(), 0);
  int object_points = 0;
  if (!scene.gt_boxes.empty()) {
    const int min_each = std::min(4, total / static_cast<int>(scene.gt_boxes.size()));
    if (min_each < 1) throw DataError("too few points for the objects in scene " + scene_id);
    const int budget = std::max(static_cast<int>(std::lround(cfg.object_point_fraction * total)),
                                min_each * static_cast<int>(scene.gt_boxes.size()));
    std::vector<double> area(scene.gt_boxes.size());
    for (std::size_t i = 0; i < area.size(); ++i) {
      const Vec3 s = scene.gt_boxes[i].size;
      area[i] = 2 * s.y() * s.z() + 2 * s.x() * s.z() + s.x() * s.y();
    }
    const double area_sum = std::accumulate(area.begin(), area.end(), 0.0);
    const int spare = budget - min_each * static_cast<int>(area.size());
    for (std::size_t i = 0; i < area.size(); ++i) {
      per_object[i] = min_each + static_cast<int>(std::floor(spare * area[i] / area_sum));
      object_points += per_object[i];
    }
  }
  const int background_points = total - object_points;

  const Matrix signatures = class_signatures();
  std::normal_distribution<double> noise(0.0, 1.0);
  PointCloud& pc = scene.point_cloud;
  pc.manifest = full_manifest();
  pc.coords.resize(total, 3);
  pc.features.resize(total, 135);

  auto emit = [&](int row, const Vec3& p, const Vec3& n, const Vec3& rgb, int signature_row) {
    pc.coords.row(row) = p.transpose();
    pc.features(row, 0) = p.z();
    for (int k = 0; k < 3; ++k) {
      pc.features(row, 1 + k) = std::clamp(rgb[k] + 0.03 * noise(rng), 0.0, 1.0);
      pc.features(row, 4 + k) = n[k];
    }
    for (int k = 0; k < 128; ++k) {
      pc.features(row, 7 + k) = signatures(signature_row, k) + 0.1 * noise(rng);
    }
  };

  int row = 0;
  for (std::size_t i = 0; i < scene.gt_boxes.size(); ++i) {
    const Vec3 rgb = std::find_if(palette.begin(), palette.end(), [&](const auto& c) {
                       return c.first == scene.gt_colors[i];
                     })->second;
    for (int k = 0; k < per_object[i]; ++k) {
      const SurfacePoint sp = sample_box_surface(scene.gt_boxes[i], rng);
      emit(row++, sp.p, sp.n, rgb, scene.gt_classes[i]);
    }
  }

  const double floor_area = width * depth;
  const double wall_area = 2 * (width + depth) * height;
  const Vec3 floor_rgb(0.62, 0.56, 0.48);
  const Vec3 wall_rgb(0.85, 0.83, 0.78);
  for (int k = 0; k < background_points; ++k) {
    Vec3 p, n;
    Vec3 rgb = wall_rgb;
    if (u01(rng) * (floor_area + wall_area) < floor_area) {
      p = Vec3(uniform(0, width), uniform(0, depth), 0.0);
      n = Vec3::UnitZ();
      rgb = floor_rgb;
    } else {
      const double along = u01(rng) * 2 * (width + depth);
      const double z = uniform(0, height);
      if (along < width) {
        p = Vec3(along, 0, z), n = Vec3::UnitY();
      } else if (along < 2 * width) {
        p = Vec3(along - width, depth, z), n = -Vec3::UnitY();
      } else if (along < 2 * width + depth) {
        p = Vec3(0, along - 2 * width, z), n = Vec3::UnitX();
      } else {
        p = Vec3(width, along - 2 * width - depth, z), n = -Vec3::UnitX();
      }
    }
    emit(row++, p.cwiseMax(Vec3::Zero()).cwiseMin(scene.room.size), n, rgb, kNumClasses);
  }

  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Matrix coords(total, 3), feats(total, 135);
  for (int i = 0; i < total; ++i) {
    coords.row(i) = pc.coords.row(order[static_cast<std::size_t>(i)]);
    feats.row(i) = pc.features.row(order[static_cast<std::size_t>(i)]);
  }
  // Point data is stored as 32-bit floats on disk; keep the in-memory copy identical.
  pc.coords = coords.unaryExpr([](double v) { return static_cast<double>(as_float(v)); });
  pc.features = feats.unaryExpr([](double v) { return static_cast<double>(as_float(v)); });

  scene.validate();
  return scene;
}

}  // namespace scanqa
