#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scanqa/geometry.hpp"

namespace scanqa {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kNumClasses = 18;

/// ScanNet benchmark class names, index order used for class labels.
const std::vector<std::string>& default_class_names();

struct QASample {
  std::string question_id;
  std::string scene_id;
  std::string question;
  std::vector<std::string> answers;
  std::vector<int> object_ids;
  std::vector<std::string> object_names;
  std::vector<Box3D> object_boxes;
  std::vector<int> object_classes;

  void validate() const;
  bool operator==(const QASample&) const = default;
};

struct ScenePackage {
  std::string scene_id;
  PointCloud point_cloud;
  std::vector<Box3D> gt_boxes;
  std::vector<int> gt_classes;
  std::vector<std::string> gt_object_names;
  // Not part of the scene file's required fields but kept for QA generation.
  std::vector<std::string> gt_colors;
  Box3D room;

  void validate() const;
  bool operator==(const ScenePackage&) const = default;
};

enum class QuestionType { kObject, kColor, kObjectNature, kPlace, kNumber, kOther };

inline constexpr int kNumQuestionTypes = 6;
std::string question_type_name(QuestionType t);
QuestionType classify_question_type(std::string_view question);

struct FilterResult {
  bool keep = true;
  std::string reason;  // empty when kept
};

/// Rule-based rejection of underspecified or noisy questions.
class QuestionFilter {
 public:
  QuestionFilter();
  FilterResult operator()(std::string_view question) const;

  void add_banned_token(std::string token, std::string reason);
  void add_banned_prefix(std::string prefix, std::string reason);

 private:
  std::vector<std::pair<std::string, std::string>> tokens_;
  std::vector<std::pair<std::string, std::string>> prefixes_;
};

FilterResult filter_question(std::string_view question);

/// Lowercase, trim, collapse internal whitespace.
std::string normalize_answer(std::string_view s);

class AnswerVocab {
 public:
  AnswerVocab() = default;
  AnswerVocab(std::vector<std::string> answers, std::vector<int> counts);

  int size() const { return static_cast<int>(answers_.size()); }
  const std::string& answer(int i) const { return answers_.at(i); }
  const std::vector<std::string>& answers() const { return answers_; }
  const std::vector<int>& counts() const { return counts_; }
  /// Index of a (normalized) answer, or nullopt.
  std::optional<int> index(std::string_view answer) const;

  bool operator==(const AnswerVocab& o) const { return answers_ == o.answers_ && counts_ == o.counts_; }

 private:
  std::vector<std::string> answers_;
  std::vector<int> counts_;
  std::map<std::string, int, std::less<>> index_;
};

/// One entry per distinct normalized answer, most frequent first, ties lexicographic.
AnswerVocab build_answer_vocab(const std::vector<QASample>& train);

struct SplitStats {
  std::string split;
  int questions = 0;
  int unique_questions = 0;
  int scenes = 0;
};

std::vector<SplitStats> split_stats(const std::vector<std::pair<std::string, std::vector<QASample>>>& splits);
std::string render_split_stats(const std::vector<SplitStats>& stats);

struct SceneConfig {
  double room_min_extent = 4.0;  // meters, x and y
  double room_max_extent = 7.0;
  double room_height = 2.75;
  int min_objects = 3;
  int max_objects = 8;
  int num_points = 2048;
  double object_point_fraction = 0.75;
  int max_placement_retries = 200;
  std::vector<std::string> class_names = default_class_names();
};

ScenePackage generate_scene(const SceneConfig& cfg, std::uint64_t seed, const std::string& scene_id);

std::vector<QASample> generate_qa(const ScenePackage& scene, std::uint64_t seed);

/// Named colors used by the generator, with their RGB values.
const std::vector<std::pair<std::string, Vec3>>& color_palette();

// File formats.
void write_scene(const ScenePackage& scene, const std::filesystem::path& dir);
ScenePackage read_scene(const std::filesystem::path& dir);

void write_qa_jsonl(const std::vector<QASample>& samples, const std::filesystem::path& file);
std::vector<QASample> read_qa_jsonl(const std::filesystem::path& file);

struct Prediction {
  std::string question_id;
  std::vector<std::string> answer_ranked;
  std::optional<Box3D> box;
  std::vector<Box3D> boxes_top10;

  bool operator==(const Prediction&) const = default;
};

void write_predictions_jsonl(const std::vector<Prediction>& preds, const std::filesystem::path& file);
std::vector<Prediction> read_predictions_jsonl(const std::filesystem::path& file);

/// A dataset directory: scenes/<id>/{scene.json,points.f32le} and qa/<split>.jsonl.
struct Dataset {
  std::filesystem::path root;

  std::filesystem::path scene_dir(const std::string& scene_id) const { return root / "scenes" / scene_id; }
  std::filesystem::path qa_file(const std::string& split) const { return root / "qa" / (split + ".jsonl"); }
  std::vector<QASample> load_split(const std::string& split) const { return read_qa_jsonl(qa_file(split)); }
  ScenePackage load_scene(const std::string& scene_id) const { return read_scene(scene_dir(scene_id)); }
};

struct SynthOptions {
  int scenes = 10;
  int points = 2048;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
};

/// Generates scenes and QA files under `out`; scenes are split between
/// train and val by scene.
void synthesize_dataset(const std::filesystem::path& out, const SynthOptions& opts);

}  // namespace scanqa
