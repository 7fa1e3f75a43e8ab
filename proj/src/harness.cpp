#include "scanqa/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace scanqa {

namespace {

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) { return mix(mix(mix(a) ^ b) ^ c); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, v));
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  int x = 0;
  try {
    x = std::stoi(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(fmt::format("{}: expected an integer, got '{}'", key, v));
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  std::uint64_t x = 0;
  try {
    if (!v.empty() && v[0] != '-') x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(fmt::format("{}: expected an unsigned integer, got '{}'", key, v));
  return x;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
  return x;
}

std::string fmt_double(double x) { return fmt::format("{}", x); }

}  // namespace

std::vector<Channel> parse_features(const std::string& csv) {
  std::vector<Channel> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(parse_channel(item));
    } catch (const GeometryError& e) {
      throw ConfigError(e.what());
    }
  }
  if (out.empty()) throw ConfigError("features: at least one channel is required");
  return out;
}

std::string features_to_string(const std::vector<Channel>& channels) {
  std::vector<std::string> names;
  for (Channel c : channels) names.push_back(c == Channel::kHeight ? "xyz" : channel_name(c));
  return fmt::format("{}", fmt::join(names, ","));
}

double TrainConfig::lr_at(int epoch) const { return epoch > lr_decay_epoch ? lr * lr_decay_factor : lr; }

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be positive");
  if (lr_decay_epoch < 0) throw ConfigError("lr_decay_epoch must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (eval_seeds < 1) throw ConfigError("eval_seeds must be positive");
  if (augment_cfg.max_rot_deg < 0.0 || augment_cfg.max_trans_m < 0.0) throw ConfigError("augmentation ranges must be >= 0");
  if (max_train < 0 || max_val < 0) throw ConfigError("max_train/max_val must be >= 0");
  try {
    model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "batch_size", "lr", "epochs", "lr_decay_factor", "lr_decay_epoch", "weight_decay", "seed", "d", "layers",
      "attn_heads", "ffn_mult", "dropout", "max_question_len", "n_v", "points", "det_width", "features", "mode", "obj",
      "loc", "augment", "rot_deg", "trans_m", "eval_seeds", "train_split", "val_split", "max_train", "max_val",
      "val_every_epoch", "embeddings"};
  return keys;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  ModelConfig& m = model;
  if (key == "batch_size") batch_size = parse_int(key, v);
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "epochs") epochs = parse_int(key, v);
  else if (key == "lr_decay_factor") lr_decay_factor = parse_double(key, v);
  else if (key == "lr_decay_epoch") lr_decay_epoch = parse_int(key, v);
  else if (key == "weight_decay") weight_decay = parse_double(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "d") m.d = parse_int(key, v);
  else if (key == "layers") m.layers = parse_int(key, v);
  else if (key == "attn_heads") m.attn_heads = parse_int(key, v);
  else if (key == "ffn_mult") m.ffn_mult = parse_int(key, v);
  else if (key == "dropout") m.dropout = parse_double(key, v);
  else if (key == "max_question_len") m.max_question_len = parse_int(key, v);
  else if (key == "n_v") m.num_proposals = parse_int(key, v);
  else if (key == "points") m.points = parse_int(key, v);
  else if (key == "det_width") m.det_width = parse_int(key, v);
  else if (key == "features") m.features = parse_features(v);
  else if (key == "mode") {
    try {
      m.mode = parse_head_mode(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "obj") m.use_obj = parse_bool(key, v);
  else if (key == "loc") m.use_loc = parse_bool(key, v);
  else if (key == "augment") augment = parse_bool(key, v);
  else if (key == "rot_deg") augment_cfg.max_rot_deg = parse_double(key, v);
  else if (key == "trans_m") augment_cfg.max_trans_m = parse_double(key, v);
  else if (key == "eval_seeds") eval_seeds = parse_int(key, v);
  else if (key == "train_split") train_split = v;
  else if (key == "val_split") val_split = v;
  else if (key == "max_train") max_train = parse_int(key, v);
  else if (key == "max_val") max_val = parse_int(key, v);
  else if (key == "val_every_epoch") val_every_epoch = parse_bool(key, v);
  else if (key == "embeddings") embeddings = v;
  else throw ConfigError("unknown config key: " + key);
}

std::string TrainConfig::to_text() const {
  const ModelConfig& m = model;
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  kv("batch_size", std::to_string(batch_size));
  kv("lr", fmt_double(lr));
  kv("epochs", std::to_string(epochs));
  kv("lr_decay_factor", fmt_double(lr_decay_factor));
  kv("lr_decay_epoch", std::to_string(lr_decay_epoch));
  kv("weight_decay", fmt_double(weight_decay));
  kv("seed", std::to_string(seed));
  kv("d", std::to_string(m.d));
  kv("layers", std::to_string(m.layers));
  kv("attn_heads", std::to_string(m.attn_heads));
  kv("ffn_mult", std::to_string(m.ffn_mult));
  kv("dropout", fmt_double(m.dropout));
  kv("max_question_len", std::to_string(m.max_question_len));
  kv("n_v", std::to_string(m.num_proposals));
  kv("points", std::to_string(m.points));
  kv("det_width", std::to_string(m.det_width));
  kv("features", features_to_string(m.features));
  kv("mode", head_mode_name(m.mode));
  kv("obj", m.use_obj ? "true" : "false");
  kv("loc", m.use_loc ? "true" : "false");
  kv("augment", augment ? "true" : "false");
  kv("rot_deg", fmt_double(augment_cfg.max_rot_deg));
  kv("trans_m", fmt_double(augment_cfg.max_trans_m));
  kv("eval_seeds", std::to_string(eval_seeds));
  kv("train_split", train_split);
  kv("val_split", val_split);
  kv("max_train", std::to_string(max_train));
  kv("max_val", std::to_string(max_val));
  kv("val_every_epoch", val_every_epoch ? "true" : "false");
  kv("embeddings", embeddings);
  return s;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", lineno));
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", lineno, e.what()));
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch}, {"lr", e.lr},       {"total", e.total},   {"ans", e.ans},
                      {"obj", e.obj},     {"loc", e.loc},     {"det", e.det},       {"vote", e.vote},
                      {"objectness", e.objectness}, {"box", e.box}, {"semcls", e.semcls}, {"samples", e.samples},
                      {"skipped_ans", e.skipped_ans}};
  j["val_em1"] = e.val_em1 ? nlohmann::json(*e.val_em1) : nlohmann::json(nullptr);
  return j;
}

EpochLog epoch_log_from_json(const nlohmann::json& j) {
  EpochLog e;
  e.epoch = j.at("epoch").get<int>();
  e.lr = j.at("lr").get<double>();
  e.total = j.at("total").get<double>();
  e.ans = j.at("ans").get<double>();
  e.obj = j.at("obj").get<double>();
  e.loc = j.at("loc").get<double>();
  e.det = j.at("det").get<double>();
  e.vote = j.at("vote").get<double>();
  e.objectness = j.at("objectness").get<double>();
  e.box = j.at("box").get<double>();
  e.semcls = j.at("semcls").get<double>();
  e.samples = j.at("samples").get<int>();
  e.skipped_ans = j.at("skipped_ans").get<int>();
  if (j.contains("val_em1") && !j.at("val_em1").is_null()) e.val_em1 = j.at("val_em1").get<double>();
  return e;
}

SplitData load_split_data(const Dataset& data, const std::string& split, int max_samples) {
  SplitData out;
  out.samples = data.load_split(split);
  if (max_samples > 0 && out.samples.size() > static_cast<std::size_t>(max_samples)) {
    out.samples.resize(static_cast<std::size_t>(max_samples));
  }
  for (const QASample& s : out.samples) {
    if (!out.scenes.contains(s.scene_id)) out.scenes.emplace(s.scene_id, data.load_scene(s.scene_id));
  }
  return out;
}

TrainState init_training(const TrainConfig& cfg, const SplitData& train) {
  cfg.validate();
  if (train.samples.empty()) throw ConfigError("training split is empty");
  AnswerVocab vocab = build_answer_vocab(train.samples);
  std::vector<std::string> questions;
  for (const auto& s : train.samples) questions.push_back(s.question);
  const auto words = question_vocabulary(questions);
  EmbeddingTable table = cfg.embeddings.empty() ? EmbeddingTable::random(words, mix(cfg.seed, 0x70c5))
                                                : EmbeddingTable::load_text(cfg.embeddings, words);
  TrainState st;
  st.config = cfg;
  st.model = std::make_unique<Model>(cfg.model, std::move(vocab), std::move(table), mix(cfg.seed, 0x1417));
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  st.optimizer = std::make_unique<nn::Adam>(st.model->store(), ac);
  return st;
}

EpochLog train_epoch(TrainState& st, const SplitData& train, const SplitData* val) {
  const TrainConfig& cfg = st.config;
  Model& model = *st.model;
  const int epoch = st.epoch + 1;
  EpochLog log;
  log.epoch = epoch;
  log.lr = cfg.lr_at(epoch);
  st.optimizer->set_lr(log.lr);

  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Rng shuffle_rng(mix(cfg.seed, 0x5f1e, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
    const double inv_b = 1.0 / static_cast<double>(end - start);
    model.store().zero_grad();
    for (std::size_t b = start; b < end; ++b) {
      const QASample& s = train.samples[order[b]];
      const ScenePackage& scene = train.scenes.at(s.scene_id);
      const std::uint64_t sample_seed = mix(cfg.seed, static_cast<std::uint64_t>(epoch), order[b]);

      std::vector<Box3D> boxes = scene.gt_boxes;
      boxes.insert(boxes.end(), s.object_boxes.begin(), s.object_boxes.end());
      Augmented aug = cfg.augment ? augment(scene.point_cloud, boxes, cfg.augment_cfg, sample_seed)
                                  : Augmented{scene.point_cloud, boxes};
      const std::vector<Box3D> scene_boxes(aug.boxes.begin(),
                                           aug.boxes.begin() + static_cast<std::ptrdiff_t>(scene.gt_boxes.size()));
      const std::vector<Box3D> sample_boxes(aug.boxes.begin() + static_cast<std::ptrdiff_t>(scene.gt_boxes.size()),
                                            aug.boxes.end());

      ag::Tape tape(true, mix(sample_seed, 0xd40));
      const ModelOutput out = model.forward(tape, aug.cloud, s.question, 0);
      const LossParts parts = model.loss(tape, out, s, scene_boxes, scene.gt_classes, sample_boxes);
      const double total = parts.total.scalar();
      if (!std::isfinite(total)) {
        throw DivergenceError(fmt::format("non-finite loss at epoch {} on {} (ans={}, obj={}, loc={}, det={})", epoch,
                                          s.question_id, parts.ans.scalar(), parts.obj.scalar(), parts.loc.scalar(),
                                          parts.det.total.scalar()));
      }
      tape.backward(parts.total, inv_b);
      tape.flush_param_grads();

      if (answer_targets(model.vocab(), s).empty()) ++log.skipped_ans;
      log.ans += parts.ans.scalar();
      log.obj += parts.obj.scalar();
      log.loc += parts.loc.scalar();
      log.det += parts.det.total.scalar();
      log.vote += parts.det.vote.scalar();
      log.objectness += parts.det.objectness.scalar();
      log.box += parts.det.box.scalar();
      log.semcls += parts.det.semcls.scalar();
      ++log.samples;
    }
    st.optimizer->step();
  }

  const double n = static_cast<double>(std::max(log.samples, 1));
  for (double* f : {&log.ans, &log.obj, &log.loc, &log.det, &log.vote, &log.objectness, &log.box, &log.semcls}) *f /= n;
  log.total = log.ans + log.obj + log.loc + log.det;

  if (val && cfg.val_every_epoch && !val->samples.empty()) {
    const auto preds = predict_split(model, *val, 0);
    log.val_em1 = report(preds, val->samples).overall.em1;
  }
  st.epoch = epoch;
  st.log.push_back(log);
  return log;
}

TrainState train(const TrainConfig& cfg, const SplitData& train_data, const SplitData* val,
                 const EpochCallback& on_epoch) {
  TrainState st = init_training(cfg, train_data);
  for (int e = 0; e < cfg.epochs; ++e) {
    const EpochLog log = train_epoch(st, train_data, val);
    if (on_epoch) on_epoch(log);
  }
  return st;
}

int sampling_start(int seed, int num_points) {
  if (seed <= 0 || num_points <= 0) return 0;
  return static_cast<int>(mix(0xe7a1, static_cast<std::uint64_t>(seed)) % static_cast<std::uint64_t>(num_points));
}

std::vector<Prediction> predict_split(const Model& model, const SplitData& split, int sampling_seed) {
  std::vector<Prediction> preds;
  preds.reserve(split.samples.size());
  for (const QASample& s : split.samples) {
    const ScenePackage& scene = split.scenes.at(s.scene_id);
    ag::Tape tape(false);
    const int start = sampling_start(sampling_seed, static_cast<int>(scene.point_cloud.coords.rows()));
    preds.push_back(model.predict(model.forward(tape, scene.point_cloud, s.question, start), s.question_id));
  }
  return preds;
}

EvalResult evaluate(const Model& model, const SplitData& split, int n_seeds) {
  if (n_seeds < 1) throw ConfigError("evaluation needs at least one seed");
  if (split.samples.empty()) throw ConfigError("evaluation split is empty");
  EvalResult r;
  for (int k = 0; k < n_seeds; ++k) {
    r.predictions.push_back(predict_split(model, split, k));
    r.per_seed.push_back(report(r.predictions.back(), split.samples));
  }
  r.mean = mean_report(r.per_seed);
  return r;
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& rep : r.per_seed) seeds.push_back(to_json(rep));
  return {{"n_seeds", r.per_seed.size()}, {"mean", to_json(r.mean)}, {"per_seed", seeds}};
}

MetricReport majority_baseline(const AnswerVocab& vocab, const std::vector<QASample>& split) {
  std::vector<std::string> ranked;
  for (int i = 0; i < std::min(vocab.size(), 10); ++i) ranked.push_back(vocab.answer(i));
  std::vector<Prediction> preds;
  for (const QASample& s : split) preds.push_back({s.question_id, ranked, std::nullopt, {}});
  return report(preds, split);
}

// Checkpoint: "SQACKPT1", u64 header length, JSON header, then raw little-endian
// f64 blocks in header order: embedding rows, parameters, Adam first moments,
// Adam second moments.
namespace {

constexpr char kMagic[8] = {'S', 'Q', 'A', 'C', 'K', 'P', 'T', '1'};
static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

void write_block(std::ostream& out, const Matrix& m) {
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void read_block(std::istream& in, Matrix& m, const std::string& what) {
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw DataError("checkpoint truncated while reading " + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const TrainState& st) {
  const Model& model = *st.model;
  nlohmann::json h;
  h["config"] = st.config.to_text();
  h["epoch"] = st.epoch;
  h["vocab"] = {{"answers", model.vocab().answers()}, {"counts", model.vocab().counts()}};
  std::vector<std::string> words(model.table().words().begin() + 1, model.table().words().end());
  h["embedding_words"] = words;
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter* p : model.store().all()) params.push_back({p->name, p->value.rows(), p->value.cols()});
  h["params"] = params;
  const bool has_opt = st.optimizer && !st.optimizer->first_moments().empty();
  h["optimizer"] = has_opt ? nlohmann::json{{"steps", st.optimizer->steps()}} : nlohmann::json(nullptr);
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : st.log) log.push_back(to_json(e));
  h["log"] = log;

  const std::string header = h.dump();
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + file.string());
  out.write(kMagic, 8);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_block(out, model.table().matrix().bottomRows(model.table().size() - 1).eval());
  for (const Parameter* p : model.store().all()) write_block(out, p->value);
  if (has_opt) {
    for (const Matrix& m : st.optimizer->first_moments()) write_block(out, m);
    for (const Matrix& v : st.optimizer->second_moments()) write_block(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint " + file.string());
}

TrainState load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + file.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw DataError("not a checkpoint: " + file.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 32)) throw DataError("corrupt checkpoint header");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint truncated in header");
  const nlohmann::json h = nlohmann::json::parse(header);

  TrainState st;
  st.config = parse_config(h.at("config").get<std::string>());
  st.epoch = h.at("epoch").get<int>();
  AnswerVocab vocab(h.at("vocab").at("answers").get<std::vector<std::string>>(),
                    h.at("vocab").at("counts").get<std::vector<int>>());
  auto words = h.at("embedding_words").get<std::vector<std::string>>();
  Matrix rows(static_cast<Eigen::Index>(words.size()), kWordDim);
  read_block(in, rows, "embeddings");
  EmbeddingTable table = EmbeddingTable::from_rows(std::move(words), std::move(rows));
  st.model = std::make_unique<Model>(st.config.model, std::move(vocab), std::move(table), 0);

  const auto& params = h.at("params");
  auto all = st.model->store().all();
  if (params.size() != all.size()) throw DataError("checkpoint parameter count does not match its config");
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& e = params[i];
    if (e.at(0).get<std::string>() != all[i]->name || e.at(1).get<Eigen::Index>() != all[i]->value.rows() ||
        e.at(2).get<Eigen::Index>() != all[i]->value.cols()) {
      throw DataError("checkpoint parameter mismatch at " + all[i]->name);
    }
    read_block(in, all[i]->value, all[i]->name);
  }
  nn::AdamConfig ac;
  ac.lr = st.config.lr_at(st.epoch);
  ac.weight_decay = st.config.weight_decay;
  st.optimizer = std::make_unique<nn::Adam>(st.model->store(), ac);
  if (!h.at("optimizer").is_null()) {
    auto& m = st.optimizer->first_moments();
    auto& v = st.optimizer->second_moments();
    m.clear();
    v.clear();
    for (const Parameter* p : all) m.push_back(Matrix(p->value.rows(), p->value.cols()));
    for (const Parameter* p : all) v.push_back(Matrix(p->value.rows(), p->value.cols()));
    for (auto& x : m) read_block(in, x, "optimizer state");
    for (auto& x : v) read_block(in, x, "optimizer state");
    st.optimizer->set_steps(h.at("optimizer").at("steps").get<std::int64_t>());
  }
  for (const auto& e : h.at("log")) st.log.push_back(epoch_log_from_json(e));
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after checkpoint data");
  return st;
}

std::vector<AblationCell> parse_grid(const nlohmann::json& j) {
  if (!j.contains("cells") || !j.at("cells").is_array()) throw ConfigError("grid: expected {\"cells\": [...]}");
  std::vector<AblationCell> cells;
  for (const auto& c : j.at("cells")) {
    AblationCell cell;
    cell.label = c.value("label", fmt::format("cell{}", cells.size()));
    if (c.contains("overrides")) {
      for (const auto& [k, v] : c.at("overrides").items()) {
        cell.overrides[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    cells.push_back(std::move(cell));
  }
  if (cells.empty()) throw ConfigError("grid has no cells");
  return cells;
}

std::vector<AblationCell> load_grid(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open grid " + file.string());
  try {
    return parse_grid(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("grid {}: {}", file.string(), e.what()));
  }
}

std::vector<AblationCell> toggle_grid() {
  return {{"ANS", {{"obj", "false"}, {"loc", "false"}}},
          {"ANS+OBJ", {{"obj", "true"}, {"loc", "false"}}},
          {"ANS+LOC", {{"obj", "false"}, {"loc", "true"}}},
          {"ANS+OBJ+LOC", {{"obj", "true"}, {"loc", "true"}}}};
}

std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<AblationCell>& grid, const SplitData& train_data,
                                const SplitData& val, const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (const AblationCell& cell : grid) {
    AblationRow row;
    row.label = cell.label;
    row.overrides = cell.overrides;
    TrainConfig cfg = base;
    try {
      for (const auto& [k, v] : cell.overrides) cfg.set(k, v);
      cfg.validate();
    } catch (const ConfigError& e) {
      row.skipped = true;
      row.skip_reason = e.what();
    }
    row.obj = cfg.model.use_obj;
    row.loc = cfg.model.use_loc;
    if (!row.skipped) {
      TrainState st = train(cfg, train_data, nullptr);
      row.params = st.model->store().count();
      row.head_params = st.model->store().count("heads.");
      row.last_epoch = st.log.back();
      row.report = evaluate(*st.model, val, cfg.eval_seeds).mean;
    }
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const AblationRow& r) {
  return {{"label", r.label},
          {"overrides", r.overrides},
          {"skipped", r.skipped},
          {"skip_reason", r.skip_reason},
          {"ans", r.ans},
          {"obj", r.obj},
          {"loc", r.loc},
          {"params", r.params},
          {"head_params", r.head_params},
          {"last_epoch", to_json(r.last_epoch)},
          {"report", to_json(r.report)}};
}

AblationRow ablation_row_from_json(const nlohmann::json& j) {
  AblationRow r;
  r.label = j.at("label").get<std::string>();
  r.overrides = j.at("overrides").get<std::map<std::string, std::string>>();
  r.skipped = j.at("skipped").get<bool>();
  r.skip_reason = j.at("skip_reason").get<std::string>();
  r.ans = j.at("ans").get<bool>();
  r.obj = j.at("obj").get<bool>();
  r.loc = j.at("loc").get<bool>();
  r.params = j.at("params").get<std::size_t>();
  r.head_params = j.at("head_params").get<std::size_t>();
  r.last_epoch = epoch_log_from_json(j.at("last_epoch"));
  r.report = report_from_json(j.at("report"));
  return r;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "| Config | ANS | OBJ | LOC | Params |";
  std::string sep = "|---|:-:|:-:|:-:|--:|";
  for (const auto& c : metric_columns()) {
    out += " " + c + " |";
    sep += "--:|";
  }
  out += "\n" + sep + "\n";
  auto mark = [](bool b) { return std::string(b ? "x" : ""); };
  for (const AblationRow& r : rows) {
    out += fmt::format("| {} | {} | {} | {} | ", r.label, mark(r.ans), mark(r.obj), mark(r.loc));
    if (r.skipped) {
      out += fmt::format("skipped: {} |\n", r.skip_reason);
      continue;
    }
    out += fmt::format("{} |", r.params);
    for (double v : metric_row(r.report.overall)) out += fmt::format(" {:.2f} |", v);
    out += "\n";
  }
  return out;
}

}  // namespace scanqa
