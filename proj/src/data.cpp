#include "scanqa/data.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace scanqa {

const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {
      "cabinet", "bed",     "chair",          "sofa",   "table",        "door",
      "window",  "bookshelf", "picture",      "counter", "desk",        "curtain",
      "refrigerator", "shower curtain", "toilet", "sink", "bathtub", "otherfurniture"};
  return names;
}

void QASample::validate() const {
  if (answers.empty()) throw DataError("sample " + question_id + " has no answers");
  const std::size_t n = object_ids.size();
  if (object_names.size() != n || object_boxes.size() != n || object_classes.size() != n) {
    throw DataError("sample " + question_id + " has object lists of different lengths");
  }
  for (int c : object_classes) {
    if (c < 0 || c >= kNumClasses) throw DataError("sample " + question_id + " has an invalid class");
  }
  for (const Box3D& b : object_boxes) {
    if (!b.valid()) throw DataError("sample " + question_id + " has an invalid box");
  }
}

void ScenePackage::validate() const {
  point_cloud.validate();
  if (gt_classes.size() != gt_boxes.size() || gt_object_names.size() != gt_boxes.size()) {
    throw DataError("scene " + scene_id + " has ground-truth lists of different lengths");
  }
  for (int c : gt_classes) {
    if (c < 0 || c >= kNumClasses) throw DataError("scene " + scene_id + " has an invalid class");
  }
  const Vec3 lo = room.min_corner();
  const Vec3 hi = room.max_corner();
  for (const Box3D& b : gt_boxes) {
    if (!b.valid()) throw DataError("scene " + scene_id + " has an invalid box");
    if ((b.min_corner().array() < lo.array()).any() || (b.max_corner().array() > hi.array()).any()) {
      throw DataError("scene " + scene_id + " has a box outside the room");
    }
  }
}

std::string question_type_name(QuestionType t) {
  switch (t) {
    case QuestionType::kObject:
      return "object";
    case QuestionType::kColor:
      return "color";
    case QuestionType::kObjectNature:
      return "object_nature";
    case QuestionType::kPlace:
      return "place";
    case QuestionType::kNumber:
      return "number";
    case QuestionType::kOther:
      return "other";
  }
  return "other";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> word_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// True when the token sequence of `text` starts with the tokens of `prefix`.
bool starts_with_tokens(const std::vector<std::string>& text, const std::vector<std::string>& prefix) {
  if (prefix.size() > text.size()) return false;
  return std::equal(prefix.begin(), prefix.end(), text.begin());
}

}  // namespace

QuestionType classify_question_type(std::string_view question) {
  const auto tokens = word_tokens(question);
  auto starts = [&](std::string_view p) { return starts_with_tokens(tokens, word_tokens(p)); };
  if (starts("what color") || starts("what is the color")) return QuestionType::kColor;
  if (starts("what type") || starts("what shape") || starts("what kind")) return QuestionType::kObjectNature;
  if (starts("where is")) return QuestionType::kPlace;
  if (starts("how many")) return QuestionType::kNumber;
  if (starts("what is")) return QuestionType::kObject;
  return QuestionType::kOther;
}

QuestionFilter::QuestionFilter() {
  add_banned_token("this", "banned-token");
  add_banned_token("image", "banned-token");
  for (const char* d : {"north", "west", "south", "east"}) add_banned_token(d, "direction-word");
  add_banned_prefix("what is the name of", "name-pattern");
}

void QuestionFilter::add_banned_token(std::string token, std::string reason) {
  tokens_.emplace_back(lower(token), std::move(reason));
}

void QuestionFilter::add_banned_prefix(std::string prefix, std::string reason) {
  prefixes_.emplace_back(lower(prefix), std::move(reason));
}

FilterResult QuestionFilter::operator()(std::string_view question) const {
  const auto tokens = word_tokens(question);
  for (const auto& [token, reason] : tokens_) {
    if (std::find(tokens.begin(), tokens.end(), token) != tokens.end()) return {false, reason};
  }
  for (const auto& [prefix, reason] : prefixes_) {
    if (starts_with_tokens(tokens, word_tokens(prefix))) return {false, reason};
  }
  return {};
}

FilterResult filter_question(std::string_view question) {
  static const QuestionFilter filter;
  return filter(question);
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

AnswerVocab::AnswerVocab(std::vector<std::string> answers, std::vector<int> counts)
    : answers_(std::move(answers)), counts_(std::move(counts)) {
  if (counts_.size() != answers_.size()) throw DataError("answer vocab: counts do not match answers");
  for (std::size_t i = 0; i < answers_.size(); ++i) {
    if (!index_.emplace(answers_[i], static_cast<int>(i)).second) {
      throw DataError("answer vocab: duplicate entry " + answers_[i]);
    }
  }
}

std::optional<int> AnswerVocab::index(std::string_view answer) const {
  auto it = index_.find(normalize_answer(answer));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

AnswerVocab build_answer_vocab(const std::vector<QASample>& train) {
  if (train.empty()) throw DataError("cannot build an answer vocabulary from an empty training set");
  std::map<std::string, int> freq;
  for (const QASample& s : train) {
    for (const std::string& a : s.answers) {
      std::string n = normalize_answer(a);
      if (!n.empty()) ++freq[n];
    }
  }
  std::vector<std::pair<std::string, int>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> answers;
  std::vector<int> counts;
  for (auto& [a, c] : entries) {
    answers.push_back(a);
    counts.push_back(c);
  }
  return AnswerVocab(std::move(answers), std::move(counts));
}

std::vector<SplitStats> split_stats(const std::vector<std::pair<std::string, std::vector<QASample>>>& splits) {
  std::vector<SplitStats> out;
  SplitStats total{"Total"};
  std::set<std::string> all_questions;
  std::set<std::string> all_scenes;
  for (const auto& [name, samples] : splits) {
    std::set<std::string> questions;
    std::set<std::string> scenes;
    for (const QASample& s : samples) {
      questions.insert(s.question);
      scenes.insert(s.scene_id);
    }
    all_questions.insert(questions.begin(), questions.end());
    all_scenes.insert(scenes.begin(), scenes.end());
    out.push_back({name, static_cast<int>(samples.size()), static_cast<int>(questions.size()),
                   static_cast<int>(scenes.size())});
    total.questions += static_cast<int>(samples.size());
  }
  total.unique_questions = static_cast<int>(all_questions.size());
  total.scenes = static_cast<int>(all_scenes.size());
  out.push_back(total);
  return out;
}

std::string render_split_stats(const std::vector<SplitStats>& stats) {
  std::ostringstream os;
  os << fmt::format("{:<12} {:>12} {:>18} {:>8}\n", "Split", "# questions", "# unique questions", "# scenes");
  for (const SplitStats& s : stats) {
    os << fmt::format("{:<12} {:>12} {:>18} {:>8}\n", s.split, s.questions, s.unique_questions, s.scenes);
  }
  return os.str();
}

}  // namespace scanqa
