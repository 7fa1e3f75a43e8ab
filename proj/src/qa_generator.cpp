#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <fmt/format.h>

#include "scanqa/data.hpp"

namespace scanqa {

namespace {

constexpr double kWallGap = 0.5;    // meters between box and wall to count as touching
constexpr double kUniqueRatio = 0.8;  // nearest must be this much closer than the runner-up

std::string plural(const std::string& name) {
  if (name == "bookshelf") return "bookshelves";
  return name + "s";
}

double floor_distance(const Box3D& a, const Box3D& b) { return (a.center - b.center).head<2>().norm(); }

// Walls within kWallGap of the box footprint: bit 0 x-low, 1 x-high, 2 y-low, 3 y-high.
int touching_walls(const Box3D& b, const Box3D& room) {
  const Vec3 lo = b.min_corner();
  const Vec3 hi = b.max_corner();
  const Vec3 rhi = room.max_corner();
  int mask = 0;
  if (lo.x() <= kWallGap) mask |= 1;
  if (rhi.x() - hi.x() <= kWallGap) mask |= 2;
  if (lo.y() <= kWallGap) mask |= 4;
  if (rhi.y() - hi.y() <= kWallGap) mask |= 8;
  return mask;
}

bool in_corner(int walls) { return (walls & 3) != 0 && (walls & 12) != 0; }

class Builder {
 public:
  Builder(const ScenePackage& scene, std::uint64_t seed) : scene_(scene), rng_(seed) {
    for (std::size_t i = 0; i < scene.gt_boxes.size(); ++i) {
      by_name_[scene.gt_object_names[i]].push_back(static_cast<int>(i));
    }
  }

  std::vector<QASample> run() {
    for (const auto& [name, objs] : by_name_) {
      if (name == "otherfurniture") continue;
      color_question(name, objs);
      count_question(name, objs);
      exists_question(name, objs);
      if (objs.size() == 1) {
        neighbor_question(name, objs[0]);
        place_question(name, objs[0]);
      }
    }
    unique_color_question();
    corner_question();
    tallest_question();
    absent_question();
    return std::move(out_);
  }

 private:
  bool coin() { return std::bernoulli_distribution(0.5)(rng_); }

  void emit(std::string question, std::vector<std::string> answers, const std::vector<int>& objs) {
    QASample s;
    s.question_id = fmt::format("{}_q{:03d}", scene_.scene_id, out_.size());
    s.scene_id = scene_.scene_id;
    s.question = std::move(question);
    s.answers = std::move(answers);
    for (int i : objs) {
      s.object_ids.push_back(i);
      s.object_names.push_back(scene_.gt_object_names[static_cast<std::size_t>(i)]);
      s.object_boxes.push_back(scene_.gt_boxes[static_cast<std::size_t>(i)]);
      s.object_classes.push_back(scene_.gt_classes[static_cast<std::size_t>(i)]);
    }
    if (!filter_question(s.question).keep) return;
    s.validate();
    out_.push_back(std::move(s));
  }

  // Nearest other object when it is clearly nearer than the runner-up.
  std::optional<int> unique_neighbor(int obj) const {
    std::vector<std::pair<double, int>> d;
    for (std::size_t j = 0; j < scene_.gt_boxes.size(); ++j) {
      if (static_cast<int>(j) == obj) continue;
      d.emplace_back(floor_distance(scene_.gt_boxes[static_cast<std::size_t>(obj)], scene_.gt_boxes[j]),
                     static_cast<int>(j));
    }
    if (d.empty()) return std::nullopt;
    std::sort(d.begin(), d.end());
    if (d.size() > 1 && d[0].first >= kUniqueRatio * d[1].first) return std::nullopt;
    return d[0].second;
  }

  void color_question(const std::string& name, const std::vector<int>& objs) {
    const std::string& c0 = scene_.gt_colors[static_cast<std::size_t>(objs[0])];
    for (int i : objs) {
      if (scene_.gt_colors[static_cast<std::size_t>(i)] != c0) return;
    }
    if (objs.size() == 1) {
      emit(fmt::format("What color is the {}?", name), {c0}, objs);
      if (coin()) emit(fmt::format("What is the color of the {}?", name), {c0}, objs);
    } else {
      emit(fmt::format("What color are the {}?", plural(name)), {c0}, objs);
    }
  }

  void count_question(const std::string& name, const std::vector<int>& objs) {
    const std::string count = std::to_string(objs.size());
    emit(fmt::format("How many {} are there?", plural(name)), {count}, objs);
    if (coin()) emit(fmt::format("How many {} are in the room?", plural(name)), {count}, objs);
  }

  void exists_question(const std::string& name, const std::vector<int>& objs) {
    emit(fmt::format("Is there a {} in the room?", name), {"yes"}, objs);
  }

  void neighbor_question(const std::string& name, int obj) {
    const auto nb = unique_neighbor(obj);
    if (!nb) return;
    const std::string q = coin() ? fmt::format("What is next to the {}?", name)
                                 : fmt::format("What is placed closest to the {}?", name);
    emit(q, {scene_.gt_object_names[static_cast<std::size_t>(*nb)]}, {*nb});
  }

  void place_question(const std::string& name, int obj) {
    const Box3D& b = scene_.gt_boxes[static_cast<std::size_t>(obj)];
    const int walls = touching_walls(b, scene_.room);
    std::vector<std::string> answers;
    if (in_corner(walls)) {
      answers = {"in the corner of the room", "in the corner"};
    } else if (walls != 0) {
      answers = {"against the wall", "by the wall"};
    } else if (const auto nb = unique_neighbor(obj)) {
      const std::string& other = scene_.gt_object_names[static_cast<std::size_t>(*nb)];
      if (other == name) return;
      answers = {"next to the " + other, "beside the " + other};
    } else {
      return;
    }
    const std::string q = coin() ? fmt::format("Where is the {} located?", name)
                                 : fmt::format("Where is the {} placed?", name);
    emit(q, answers, {obj});
  }

  void unique_color_question() {
    std::map<std::string, std::vector<int>> by_color;
    for (std::size_t i = 0; i < scene_.gt_colors.size(); ++i) by_color[scene_.gt_colors[i]].push_back(static_cast<int>(i));
    for (const auto& [color, objs] : by_color) {
      if (objs.size() != 1) continue;
      emit(fmt::format("What kind of object is {}?", color), {scene_.gt_object_names[static_cast<std::size_t>(objs[0])]},
           objs);
    }
  }

  void corner_question() {
    std::vector<int> corner;
    for (std::size_t i = 0; i < scene_.gt_boxes.size(); ++i) {
      if (in_corner(touching_walls(scene_.gt_boxes[i], scene_.room))) corner.push_back(static_cast<int>(i));
    }
    if (corner.size() != 1) return;
    emit("What kind of furniture is in the corner of the room?",
         {scene_.gt_object_names[static_cast<std::size_t>(corner[0])]}, corner);
  }

  void tallest_question() {
    if (scene_.gt_boxes.size() < 2) return;
    std::vector<std::pair<double, int>> h;
    for (std::size_t i = 0; i < scene_.gt_boxes.size(); ++i) h.emplace_back(scene_.gt_boxes[i].size.z(), static_cast<int>(i));
    std::sort(h.rbegin(), h.rend());
    if (h[1].first >= kUniqueRatio * h[0].first) return;
    emit("Which object is the tallest in the room?", {scene_.gt_object_names[static_cast<std::size_t>(h[0].second)]},
         {h[0].second});
  }

  void absent_question() {
    std::vector<std::string> absent;
    for (const std::string& n : default_class_names()) {
      if (n != "otherfurniture" && !by_name_.contains(n)) absent.push_back(n);
    }
    if (absent.empty()) return;
    const auto& pick = absent[std::uniform_int_distribution<std::size_t>(0, absent.size() - 1)(rng_)];
    emit(fmt::format("Is there a {} in the room?", pick), {"no"}, {});
  }

  const ScenePackage& scene_;
  std::mt19937_64 rng_;
  std::map<std::string, std::vector<int>> by_name_;
  std::vector<QASample> out_;
};

}  // namespace

std::vector<QASample> generate_qa(const ScenePackage& scene, std::uint64_t seed) {
  return Builder(scene, seed).run();
}

}  // namespace scanqa
