#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scanqa/metrics.hpp"
#include "scanqa/model.hpp"

namespace scanqa {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite loss during training.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  ModelConfig model;
  int batch_size = 16;
  double lr = 5e-4;
  int epochs = 30;
  double lr_decay_factor = 0.2;
  int lr_decay_epoch = 15;  // the factor applies from the epoch after this one
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augment_cfg;
  int eval_seeds = 3;
  std::string train_split = "train";
  std::string val_split = "val";
  int max_train = 0;  // 0 = all samples
  int max_val = 0;
  bool val_every_epoch = true;
  std::string embeddings;  // optional word-vector text file; seeded random vectors otherwise

  double lr_at(int epoch) const;  // 1-based epoch
  void validate() const;
  /// Flat `key = value` lines, `#` comments.
  std::string to_text() const;
  void set(const std::string& key, const std::string& value);
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& file);
const std::vector<std::string>& config_keys();

std::vector<Channel> parse_features(const std::string& csv);
std::string features_to_string(const std::vector<Channel>& channels);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double ans = 0.0;
  double obj = 0.0;
  double loc = 0.0;
  double det = 0.0;
  double vote = 0.0;
  double objectness = 0.0;
  double box = 0.0;
  double semcls = 0.0;
  int samples = 0;
  int skipped_ans = 0;  // samples without an in-vocabulary answer
  std::optional<double> val_em1;

  bool operator==(const EpochLog&) const = default;
};

nlohmann::json to_json(const EpochLog& e);
EpochLog epoch_log_from_json(const nlohmann::json& j);

/// Samples joined with their scenes.
struct SplitData {
  std::vector<QASample> samples;
  std::map<std::string, ScenePackage> scenes;
};

SplitData load_split_data(const Dataset& data, const std::string& split, int max_samples = 0);

struct TrainState {
  TrainConfig config;
  std::unique_ptr<Model> model;
  std::unique_ptr<nn::Adam> optimizer;
  int epoch = 0;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Builds the answer vocabulary and word table from `train`, then trains.
TrainState train(const TrainConfig& cfg, const SplitData& train, const SplitData* val,
                 const EpochCallback& on_epoch = {});
/// Creates the model and optimizer without training.
TrainState init_training(const TrainConfig& cfg, const SplitData& train);
/// Runs one epoch on an initialized state.
EpochLog train_epoch(TrainState& state, const SplitData& train, const SplitData* val);

/// FPS anchor used by an evaluation sampling seed; seed 0 is the training anchor.
int sampling_start(int seed, int num_points);

std::vector<Prediction> predict_split(const Model& model, const SplitData& split, int sampling_seed);

struct EvalResult {
  std::vector<std::vector<Prediction>> predictions;  // per seed
  std::vector<MetricReport> per_seed;
  MetricReport mean;
};

EvalResult evaluate(const Model& model, const SplitData& split, int n_seeds);
nlohmann::json to_json(const EvalResult& r);

/// Every sample gets the training-set answer ranking by frequency and no box.
MetricReport majority_baseline(const AnswerVocab& vocab, const std::vector<QASample>& split);

void save_checkpoint(const std::filesystem::path& file, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& file);

struct AblationCell {
  std::string label;
  std::map<std::string, std::string> overrides;
};

struct AblationRow {
  std::string label;
  std::map<std::string, std::string> overrides;
  bool skipped = false;
  std::string skip_reason;
  bool ans = true;
  bool obj = false;
  bool loc = false;
  std::size_t params = 0;
  std::size_t head_params = 0;
  EpochLog last_epoch;
  MetricReport report;

  bool operator==(const AblationRow&) const = default;
};

std::vector<AblationCell> parse_grid(const nlohmann::json& j);
std::vector<AblationCell> load_grid(const std::filesystem::path& file);
/// ANS / ANS+OBJ / ANS+LOC / ANS+OBJ+LOC.
std::vector<AblationCell> toggle_grid();

std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<AblationCell>& grid, const SplitData& train,
                                const SplitData& val, const std::function<void(const AblationRow&)>& on_row = {});

nlohmann::json to_json(const AblationRow& r);
AblationRow ablation_row_from_json(const nlohmann::json& j);
std::string render_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace scanqa
