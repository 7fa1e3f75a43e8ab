#include <bit>
#include <cstring>
#include <fstream>
#include <optional>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "scanqa/data.hpp"

namespace scanqa {

using nlohmann::json;

namespace {

json box_to_json(const Box3D& b) {
  return {{"center", {b.center.x(), b.center.y(), b.center.z()}}, {"size", {b.size.x(), b.size.y(), b.size.z()}}};
}

Box3D box_from_json(const json& j) {
  Box3D b;
  for (int k = 0; k < 3; ++k) {
    b.center[k] = j.at("center").at(k).get<double>();
    b.size[k] = j.at("size").at(k).get<double>();
  }
  if (!b.valid()) throw DataError("invalid box in file");
  return b;
}

std::ifstream open_in(const std::filesystem::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(p, mode);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, mode | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

template <typename F>
void for_each_line(const std::filesystem::path& file, F&& fn) {
  auto in = open_in(file);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(fmt::format("{}:{}: {}", file.string(), lineno, e.what()));
    }
  }
}

}  // namespace

void write_scene(const ScenePackage& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const PointCloud& pc = scene.point_cloud;
  json meta;
  meta["scene_id"] = scene.scene_id;
  json manifest = json::array();
  for (Channel c : pc.manifest) manifest.push_back(channel_name(c));
  meta["channel_manifest"] = manifest;
  meta["N"] = pc.size();
  json boxes = json::array();
  for (const Box3D& b : scene.gt_boxes) boxes.push_back(box_to_json(b));
  meta["gt_boxes"] = boxes;
  meta["gt_classes"] = scene.gt_classes;
  meta["gt_object_names"] = scene.gt_object_names;
  meta["gt_colors"] = scene.gt_colors;
  meta["room"] = box_to_json(scene.room);
  open_out(dir / "scene.json") << meta.dump(2) << '\n';

  auto out = open_out(dir / "points.f32le", std::ios::binary);
  const Eigen::Index cols = 3 + pc.features.cols();
  std::vector<std::uint32_t> row(static_cast<std::size_t>(cols));
  for (Eigen::Index i = 0; i < pc.size(); ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const float v = static_cast<float>(c < 3 ? pc.coords(i, c) : pc.features(i, c - 3));
      row[static_cast<std::size_t>(c)] = to_little(std::bit_cast<std::uint32_t>(v));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
  }
  if (!out) throw DataError("failed writing points for " + scene.scene_id);
}

ScenePackage read_scene(const std::filesystem::path& dir) {
  json meta;
  try {
    meta = json::parse(open_in(dir / "scene.json"));
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/scene.json: " + e.what());
  }
  ScenePackage scene;
  try {
    scene.scene_id = meta.at("scene_id").get<std::string>();
    for (const auto& c : meta.at("channel_manifest")) scene.point_cloud.manifest.push_back(parse_channel(c.get<std::string>()));
    for (const auto& b : meta.at("gt_boxes")) scene.gt_boxes.push_back(box_from_json(b));
    scene.gt_classes = meta.at("gt_classes").get<std::vector<int>>();
    scene.gt_object_names = meta.at("gt_object_names").get<std::vector<std::string>>();
    if (meta.contains("gt_colors")) scene.gt_colors = meta["gt_colors"].get<std::vector<std::string>>();
    if (meta.contains("room")) scene.room = box_from_json(meta["room"]);
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/scene.json: " + e.what());
  }
  const auto n = meta.at("N").get<Eigen::Index>();
  int width = 0;
  for (Channel c : scene.point_cloud.manifest) width += channel_width(c);
  const Eigen::Index cols = 3 + width;

  auto in = open_in(dir / "points.f32le", std::ios::binary);
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(n * cols));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(raw.size() * 4) || in.peek() != std::char_traits<char>::eof()) {
    throw DataError(dir.string() + "/points.f32le: size does not match N x (3 + C)");
  }
  scene.point_cloud.coords.resize(n, 3);
  scene.point_cloud.features.resize(n, width);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const float v = std::bit_cast<float>(to_little(raw[static_cast<std::size_t>(i * cols + c)]));
      if (c < 3) {
        scene.point_cloud.coords(i, c) = v;
      } else {
        scene.point_cloud.features(i, c - 3) = v;
      }
    }
  }
  return scene;
}

namespace {

json sample_to_json(const QASample& s) {
  json boxes = json::array();
  for (const Box3D& b : s.object_boxes) boxes.push_back(box_to_json(b));
  return {{"question_id", s.question_id}, {"scene_id", s.scene_id},         {"question", s.question},
          {"answers", s.answers},         {"object_ids", s.object_ids},     {"object_names", s.object_names},
          {"object_boxes", boxes},        {"object_classes", s.object_classes}};
}

QASample sample_from_json(const json& j) {
  QASample s;
  s.question_id = j.at("question_id").get<std::string>();
  s.scene_id = j.at("scene_id").get<std::string>();
  s.question = j.at("question").get<std::string>();
  s.answers = j.at("answers").get<std::vector<std::string>>();
  s.object_ids = j.at("object_ids").get<std::vector<int>>();
  s.object_names = j.at("object_names").get<std::vector<std::string>>();
  for (const auto& b : j.at("object_boxes")) s.object_boxes.push_back(box_from_json(b));
  s.object_classes = j.at("object_classes").get<std::vector<int>>();
  s.validate();
  return s;
}

}  // namespace

void write_qa_jsonl(const std::vector<QASample>& samples, const std::filesystem::path& file) {
  auto out = open_out(file);
  for (const QASample& s : samples) out << sample_to_json(s).dump() << '\n';
}

std::vector<QASample> read_qa_jsonl(const std::filesystem::path& file) {
  std::vector<QASample> out;
  for_each_line(file, [&](const json& j) { out.push_back(sample_from_json(j)); });
  return out;
}

void write_predictions_jsonl(const std::vector<Prediction>& preds, const std::filesystem::path& file) {
  auto out = open_out(file);
  for (const Prediction& p : preds) {
    json j = {{"question_id", p.question_id}, {"answer_ranked", p.answer_ranked}};
    if (p.box) j["box"] = box_to_json(*p.box);
    if (!p.boxes_top10.empty()) {
      json boxes = json::array();
      for (const Box3D& b : p.boxes_top10) boxes.push_back(box_to_json(b));
      j["boxes_top10"] = boxes;
    }
    out << j.dump() << '\n';
  }
}

std::vector<Prediction> read_predictions_jsonl(const std::filesystem::path& file) {
  std::vector<Prediction> out;
  for_each_line(file, [&](const json& j) {
    Prediction p;
    p.question_id = j.at("question_id").get<std::string>();
    p.answer_ranked = j.at("answer_ranked").get<std::vector<std::string>>();
    if (p.answer_ranked.empty()) throw DataError("prediction " + p.question_id + " has no answers");
    if (j.contains("box") && !j["box"].is_null()) p.box = box_from_json(j["box"]);
    if (j.contains("boxes_top10")) {
      for (const auto& b : j["boxes_top10"]) p.boxes_top10.push_back(box_from_json(b));
    }
    out.push_back(std::move(p));
  });
  return out;
}

void synthesize_dataset(const std::filesystem::path& out, const SynthOptions& opts) {
  if (opts.scenes < 1) throw DataError("need at least one scene");
  SceneConfig cfg;
  cfg.num_points = opts.points;
  std::vector<QASample> train, val;
  const int n_val = opts.scenes > 1 ? std::max(1, static_cast<int>(opts.scenes * opts.val_fraction)) : 0;
  for (int i = 0; i < opts.scenes; ++i) {
    const std::string id = fmt::format("scene{:04d}_00", i);
    std::uint64_t scene_seed = opts.seed * 1000003ULL + static_cast<std::uint64_t>(i);
    // a crowded draw can fail placement; redraw a few times before giving up
    std::optional<ScenePackage> drawn;
    for (int attempt = 0; !drawn; ++attempt) {
      try {
        drawn = generate_scene(cfg, scene_seed, id);
      } catch (const DataError&) {
        if (attempt == 7) throw;
        scene_seed = scene_seed * 6364136223846793005ULL + 1442695040888963407ULL;
      }
    }
    ScenePackage scene = std::move(*drawn);
    write_scene(scene, out / "scenes" / id);
    auto qa = generate_qa(scene, scene_seed ^ 0x9e3779b97f4a7c15ULL);
    auto& dst = i < opts.scenes - n_val ? train : val;
    dst.insert(dst.end(), qa.begin(), qa.end());
  }
  write_qa_jsonl(train, out / "qa" / "train.jsonl");
  write_qa_jsonl(val, out / "qa" / "val.jsonl");
}

}  // namespace scanqa
