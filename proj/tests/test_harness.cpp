#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

#include "scanqa/harness.hpp"

using namespace scanqa;
namespace fs = std::filesystem;

namespace {

// One small synthetic dataset shared by every test in this binary.
const fs::path& dataset_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "scanqa_harness_ds";
    fs::remove_all(d);
    SynthOptions o;
    o.scenes = 6;
    o.points = 256;
    o.seed = 3;
    synthesize_dataset(d, o);
    return d;
  }();
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.d = 16;
  c.model.layers = 1;
  c.model.attn_heads = 2;
  c.model.num_proposals = 8;
  c.model.points = 256;
  c.model.det_width = 16;
  c.model.max_question_len = 16;
  c.batch_size = 4;
  c.epochs = 2;
  c.max_train = 12;
  c.max_val = 6;
  c.eval_seeds = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Config, DefaultsAndSchedule) {
  const TrainConfig c;
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_DOUBLE_EQ(c.lr, 5e-4);
  EXPECT_EQ(c.epochs, 30);
  EXPECT_DOUBLE_EQ(c.weight_decay, 1e-5);
  EXPECT_DOUBLE_EQ(c.lr_at(1), 5e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(15), 5e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(16), 1e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(30), 1e-4);
  EXPECT_EQ(c.model.num_proposals, 256);
  EXPECT_EQ(c.model.d, 256);
  EXPECT_EQ(c.model.layers, 2);
}

TEST(Config, ParseAndRoundTrip) {
  const TrainConfig c = parse_config("# comment\nbatch_size = 8\nlr=0.001\nmode = multiple\nobj = false\n"
                                     "features = xyz,rgb,normal\n\nn_v = 64  # proposals\n");
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.model.mode, HeadMode::kMultiple);
  EXPECT_FALSE(c.model.use_obj);
  EXPECT_EQ(c.model.num_proposals, 64);
  EXPECT_EQ(c.model.features.size(), 3u);
  EXPECT_EQ(parse_config(c.to_text()).to_text(), c.to_text());
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("batch_size = many\n"), ConfigError);
  EXPECT_THROW(parse_config("batch_size\n"), ConfigError);
  EXPECT_THROW(parse_config("n_v = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("d = 30\nattn_heads = 8\n"), ConfigError);
  EXPECT_THROW(parse_features("xyz,colour"), ConfigError);
}

TEST(Harness, SamplingStartAndBaseline) {
  EXPECT_EQ(sampling_start(0, 100), 0);
  for (int s = 1; s < 5; ++s) {
    EXPECT_GE(sampling_start(s, 100), 0);
    EXPECT_LT(sampling_start(s, 100), 100);
  }
  const Dataset ds{dataset_dir()};
  const auto train = ds.load_split("train");
  const AnswerVocab vocab = build_answer_vocab(train);
  const MetricReport base = majority_baseline(vocab, train);
  EXPECT_GT(base.overall.em1, 0.0);
  EXPECT_EQ(base.overall.acc_025, 0.0);
  EXPECT_GE(base.overall.em10, base.overall.em1);
}

TEST(Harness, TrainingIsDeterministicAndCheckpointsReload) {
  const Dataset ds{dataset_dir()};
  const TrainConfig cfg = tiny_config();
  const SplitData tr = load_split_data(ds, "train", cfg.max_train);
  const SplitData va = load_split_data(ds, "val", cfg.max_val);
  ASSERT_EQ(tr.samples.size(), 12u);

  std::vector<EpochLog> seen;
  const TrainState a = train(cfg, tr, &va, [&](const EpochLog& e) { seen.push_back(e); });
  const TrainState b = train(cfg, tr, &va);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(seen, a.log);
  EXPECT_EQ(a.log, b.log);
  for (const EpochLog& e : a.log) {
    EXPECT_TRUE(std::isfinite(e.total));
    EXPECT_NEAR(e.total, e.ans + e.obj + e.loc + e.det, 1e-9);
    EXPECT_TRUE(e.val_em1.has_value());
    EXPECT_EQ(e.samples, 12);
  }
  // parameters must have moved
  EXPECT_NE(a.optimizer->steps(), 0);

  const fs::path ckpt = fs::temp_directory_path() / "scanqa_harness.ckpt";
  save_checkpoint(ckpt, a);
  const TrainState c = load_checkpoint(ckpt);
  EXPECT_EQ(c.epoch, a.epoch);
  EXPECT_EQ(c.log, a.log);
  EXPECT_EQ(c.config.to_text(), a.config.to_text());
  EXPECT_EQ(c.model->vocab().answers(), a.model->vocab().answers());
  const EvalResult ea = evaluate(*a.model, va, 2);
  const EvalResult ec = evaluate(*c.model, va, 2);
  EXPECT_EQ(ea.predictions, ec.predictions);
  EXPECT_EQ(ea.mean, ec.mean);
  ASSERT_EQ(ea.per_seed.size(), 2u);
  EXPECT_NEAR(ea.mean.overall.em1, (ea.per_seed[0].overall.em1 + ea.per_seed[1].overall.em1) / 2, 1e-15);
  EXPECT_EQ(to_json(ea).at("n_seeds").get<int>(), 2);

  // resuming one more epoch from the checkpoint matches continuing in memory
  TrainState resumed = load_checkpoint(ckpt);
  TrainState cont = load_checkpoint(ckpt);
  const EpochLog r1 = train_epoch(resumed, tr, nullptr);
  const EpochLog r2 = train_epoch(cont, tr, nullptr);
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(r1.epoch, 3);

  std::ofstream(ckpt, std::ios::binary | std::ios::app) << "junk";
  EXPECT_THROW(load_checkpoint(ckpt), std::exception);
}

TEST(Harness, EpochLogJson) {
  EpochLog e;
  e.epoch = 3;
  e.lr = 1e-4;
  e.total = 1.5;
  e.val_em1 = 0.25;
  EXPECT_EQ(epoch_log_from_json(to_json(e)), e);
  e.val_em1.reset();
  EXPECT_EQ(epoch_log_from_json(to_json(e)), e);
}

TEST(Ablation, GridParsing) {
  const auto g = parse_grid(nlohmann::json::parse(R"({"cells": [{"label": "a", "overrides": {"obj": "false"}},
                                                                {"label": "b", "overrides": {}}]})"));
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].overrides.at("obj"), "false");
  EXPECT_THROW(parse_grid(nlohmann::json::parse(R"({"rows": []})")), ConfigError);
  EXPECT_EQ(toggle_grid().size(), 4u);
}

TEST(Ablation, ToggleRowsDifferByHeadParameters) {
  const Dataset ds{dataset_dir()};
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.max_train = 8;
  cfg.eval_seeds = 1;
  const SplitData tr = load_split_data(ds, "train", cfg.max_train);
  const SplitData va = load_split_data(ds, "val", cfg.max_val);
  auto grid = toggle_grid();
  grid.push_back({"broken", {{"n_v", "0"}}});
  const auto rows = ablate(cfg, grid, tr, va);
  ASSERT_EQ(rows.size(), 5u);
  const std::size_t d = 16;
  const std::size_t obj_params = d * d + d + d * 18 + 18;
  const std::size_t loc_params = d * d + d + d + 1;
  EXPECT_EQ(rows[1].params - rows[0].params, obj_params);
  EXPECT_EQ(rows[2].params - rows[0].params, loc_params);
  EXPECT_EQ(rows[3].params - rows[0].params, obj_params + loc_params);
  EXPECT_EQ(rows[3].head_params - rows[0].head_params, obj_params + loc_params);
  EXPECT_EQ(rows[0].last_epoch.obj, 0.0);
  EXPECT_EQ(rows[0].last_epoch.loc, 0.0);
  EXPECT_GT(rows[3].last_epoch.obj, 0.0);
  EXPECT_TRUE(rows[4].skipped);
  EXPECT_FALSE(rows[4].skip_reason.empty());
  for (const auto& r : rows) EXPECT_EQ(ablation_row_from_json(to_json(r)), r);
  const std::string table = render_ablation_table(rows);
  EXPECT_NE(table.find("ANS+OBJ+LOC"), std::string::npos);
  EXPECT_NE(table.find("skipped"), std::string::npos);
}
