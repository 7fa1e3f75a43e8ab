// scanqa: dataset synthesis, training, evaluation, scoring and ablation.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "scanqa/harness.hpp"

namespace fs = std::filesystem;
using namespace scanqa;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << text;
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", file.string(), e.what()));
  }
}

std::string epoch_line(const EpochLog& e) {
  std::string s = fmt::format("epoch {:3d} lr {:.2e} loss {:.4f} (ans {:.4f} obj {:.4f} loc {:.4f} det {:.4f})", e.epoch,
                              e.lr, e.total, e.ans, e.obj, e.loc, e.det);
  if (e.skipped_ans > 0) s += fmt::format(" skipped_ans {}", e.skipped_ans);
  if (e.val_em1) s += fmt::format(" val_em1 {:.4f}", *e.val_em1);
  return s;
}

int cmd_synth(const fs::path& out, int scenes, int points, std::uint64_t seed) {
  SynthOptions o;
  o.scenes = scenes;
  o.points = points;
  o.seed = seed;
  synthesize_dataset(out, o);
  const Dataset ds{out};
  std::vector<std::pair<std::string, std::vector<QASample>>> splits = {{"train", ds.load_split("train")},
                                                                       {"val", ds.load_split("val")}};
  std::cout << render_split_stats(split_stats(splits));
  return kOk;
}

struct TrainArgs {
  fs::path config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode, features;
  bool no_obj = false, no_loc = false;
  std::optional<int> d, layers;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.mode) cfg.set("mode", *a.mode);
  if (a.features) cfg.set("features", *a.features);
  if (a.no_obj) cfg.model.use_obj = false;
  if (a.no_loc) cfg.model.use_loc = false;
  if (a.d) cfg.model.d = *a.d;
  if (a.layers) cfg.model.layers = *a.layers;
  cfg.validate();

  const Dataset ds{a.data};
  const SplitData train_data = load_split_data(ds, cfg.train_split, cfg.max_train);
  std::optional<SplitData> val;
  if (fs::exists(ds.qa_file(cfg.val_split))) val = load_split_data(ds, cfg.val_split, cfg.max_val);

  fs::create_directories(a.out);
  write_text(a.out / "config.txt", cfg.to_text());
  std::ofstream log(a.out / "train_log.jsonl");
  TrainState st = train(cfg, train_data, val ? &*val : nullptr, [&](const EpochLog& e) {
    log << to_json(e).dump() << "\n";
    log.flush();
    std::cout << epoch_line(e) << std::endl;
  });
  save_checkpoint(a.out / "checkpoint.bin", st);
  fmt::print("params {} | answers {} | checkpoint {}\n", st.model->store().count(), st.model->vocab().size(),
             (a.out / "checkpoint.bin").string());
  return kOk;
}

int cmd_evaluate(const fs::path& ckpt, const fs::path& data, const std::string& split, int seeds, const fs::path& out) {
  const TrainState st = load_checkpoint(ckpt);
  const Dataset ds{data};
  // The answer space is fixed by the training split the checkpoint was built from.
  if (fs::exists(ds.qa_file(st.config.train_split))) {
    auto train_samples = ds.load_split(st.config.train_split);
    if (st.config.max_train > 0 && train_samples.size() > static_cast<std::size_t>(st.config.max_train)) {
      train_samples.resize(static_cast<std::size_t>(st.config.max_train));
    }
    if (!(build_answer_vocab(train_samples) == st.model->vocab())) {
      throw ConfigError("answer vocabulary of " + data.string() + " does not match the checkpoint");
    }
  }
  const SplitData sd = load_split_data(ds, split);
  const EvalResult r = evaluate(*st.model, sd, seeds);
  for (std::size_t k = 0; k < r.predictions.size(); ++k) {
    write_predictions_jsonl(r.predictions[k], fs::path(out.string() + fmt::format(".seed{}.pred.jsonl", k)));
  }
  write_text(out, to_json(r).dump(2) + "\n");
  std::cout << render_report(r.mean);
  return kOk;
}

int cmd_score(const fs::path& pred, const fs::path& gold, const fs::path& out) {
  const MetricReport r = report(read_predictions_jsonl(pred), read_qa_jsonl(gold));
  write_text(out, to_json(r).dump(2) + "\n");
  std::cout << render_report(r);
  return kOk;
}

int cmd_ablate(const fs::path& config, const fs::path& grid_file, const fs::path& out, const fs::path& data_override) {
  TrainConfig cfg = load_config(config);
  const auto grid = load_grid(grid_file);
  const nlohmann::json grid_json = read_json(grid_file);
  fs::path data = data_override;
  if (data.empty()) {
    if (!grid_json.contains("data")) throw ConfigError("ablate: no dataset (set \"data\" in the grid or pass --data)");
    data = grid_json.at("data").get<std::string>();
    if (data.is_relative()) data = grid_file.parent_path() / data;
  }
  cfg.validate();
  const Dataset ds{data};
  const SplitData train_data = load_split_data(ds, cfg.train_split, cfg.max_train);
  const SplitData val = load_split_data(ds, cfg.val_split, cfg.max_val);
  fs::create_directories(out);
  const auto rows = ablate(cfg, grid, train_data, val, [](const AblationRow& r) {
    if (r.skipped) {
      fmt::print("{}: skipped ({})\n", r.label, r.skip_reason);
    } else {
      fmt::print("{}: params {} em1 {:.4f}\n", r.label, r.params, r.report.overall.em1);
    }
  });
  nlohmann::json j = {{"config", cfg.to_text()}, {"rows", nlohmann::json::array()}};
  for (const auto& r : rows) j["rows"].push_back(to_json(r));
  write_text(out / "table.json", j.dump(2) + "\n");
  const std::string table = render_ablation_table(rows);
  write_text(out / "table.md", table);
  std::cout << table;
  return kOk;
}

int cmd_report(const fs::path& in) {
  const nlohmann::json j = read_json(in);
  if (j.contains("rows")) {
    std::vector<AblationRow> rows;
    for (const auto& r : j.at("rows")) rows.push_back(ablation_row_from_json(r));
    std::cout << render_ablation_table(rows);
  } else if (j.contains("mean")) {
    fmt::print("mean over {} seed(s)\n", j.at("n_seeds").get<int>());
    std::cout << render_report(report_from_json(j.at("mean")));
  } else {
    std::cout << render_report(report_from_json(j));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D question answering on point-cloud scenes"};
  app.require_subcommand(1);

  fs::path synth_out;
  int synth_scenes = 0, synth_points = 2048;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--scenes", synth_scenes, "number of scenes")->required()->check(CLI::PositiveNumber);
  synth->add_option("--points", synth_points, "points per scene")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "generator seed")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", ta.config, "key = value config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", ta.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", ta.out, "output directory")->required();
  train_cmd->add_option("--seed", ta.seed, "overrides seed");
  train_cmd->add_option("--mode", ta.mode, "single|multiple");
  train_cmd->add_option("--features", ta.features, "comma list of xyz,rgb,normal,multiview");
  train_cmd->add_flag("--no-obj", ta.no_obj, "disable the object-class head");
  train_cmd->add_flag("--no-loc", ta.no_loc, "disable the localization head");
  train_cmd->add_option("--d", ta.d, "hidden size");
  train_cmd->add_option("--layers", ta.layers, "transformer layers");

  fs::path ev_ckpt, ev_data, ev_out;
  std::string ev_split;
  int ev_seeds = 3;
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev_data)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", ev_split)->required();
  eval_cmd->add_option("--seeds", ev_seeds)->required()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", ev_out, "report file; predictions go next to it")->required();

  fs::path sc_pred, sc_gold, sc_out;
  auto* score_cmd = app.add_subcommand("score", "score a prediction file");
  score_cmd->add_option("--pred", sc_pred)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--gold", sc_gold)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--out", sc_out)->required();

  fs::path ab_config, ab_grid, ab_out, ab_data;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate a grid of configurations");
  ablate_cmd->add_option("--config", ab_config)->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--grid", ab_grid, "JSON {\"data\": DIR, \"cells\": [{label, overrides}]}")
      ->required()
      ->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", ab_out)->required();
  ablate_cmd->add_option("--data", ab_data, "dataset directory (overrides the grid's \"data\")");

  fs::path rep_in;
  auto* report_cmd = app.add_subcommand("report", "render a report as a table");
  report_cmd->add_option("--in", rep_in)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_scenes, synth_points, synth_seed);
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_evaluate(ev_ckpt, ev_data, ev_split, ev_seeds, ev_out);
    if (*score_cmd) return cmd_score(sc_pred, sc_gold, sc_out);
    if (*ablate_cmd) return cmd_ablate(ab_config, ab_grid, ab_out, ab_data);
    if (*report_cmd) return cmd_report(rep_in);
  } catch (const DivergenceError& e) {
    fmt::print(stderr, "diverged: {}\n", e.what());
    return kRuntime;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kValidation;
  } catch (const DataError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kValidation;
  } catch (const MetricsError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kValidation;
  } catch (const std::exception& e) {
    fmt::print(stderr, "runtime error: {}\n", e.what());
    return kRuntime;
  }
  return kOk;
}
