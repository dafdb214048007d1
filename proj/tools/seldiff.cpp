// seldiff: train, detect, eval, synth and ablate from a plain-text config.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "seldiff/ablation.hpp"
#include "seldiff/artifacts.hpp"
#include "seldiff/checkpoint.hpp"
#include "seldiff/config.hpp"
#include "seldiff/pipeline.hpp"
#include "seldiff/plot.hpp"
#include "seldiff/report.hpp"
#include "seldiff/runtime.hpp"

namespace fs = std::filesystem;
using namespace seldiff;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitInternal = 70;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kShape: return 3;
    case ErrorKind::kRange: return 4;
    case ErrorKind::kNumeric: return 5;
    case ErrorKind::kData: return 6;
    case ErrorKind::kIo: return 7;
    case ErrorKind::kMismatch: return 8;
  }
  return kExitInternal;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
};

config::RunConfig load(const Common& c) {
  if (c.config_path.empty()) fail(ErrorKind::kConfig, "missing --config");
  auto cfg = config::load_config(c.config_path);
  if (c.seed) cfg.run.seed = *c.seed;
  return cfg;
}

fs::path out_dir(const Common& c, const config::RunConfig* cfg) {
  std::string dir = c.out;
  if (dir.empty() && cfg) dir = cfg->run.out;
  if (dir.empty()) {
    if (const char* env = std::getenv("SELDIFF_OUT"); env && *env) dir = env;
  }
  if (dir.empty()) dir = "seldiff-out";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create output directory '", dir, "': ", ec.message());
  return dir;
}

std::string hash_of(const config::RunConfig& cfg) { return config::hash_hex(config::config_hash(cfg)); }

void note(const std::string& msg) { std::cerr << "seldiff: " << msg << "\n"; }

std::string with_header(const artifacts::Provenance& prov, const data::TimeSeries& ts) {
  std::ostringstream o;
  o << artifacts::provenance_line(prov);
  data::write_csv(o, ts);
  return o.str();
}

// ---------------------------------------------------------------------------

void cmd_train(const Common& c) {
  const auto cfg = load(c);
  const fs::path dir = out_dir(c, &cfg);
  const auto ds = pipeline::load_dataset(cfg);
  const auto prep = pipeline::prepare(ds, cfg);
  const auto plan = plan_method(cfg.run.method, cfg.diffusion);
  const auto seed = cfg.run.seed;

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = pipeline::train_model(prep.train_windows, prep.model, cfg, plan, seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Checkpoint ck{result.params, plan.diffusion, plan.method, prep.norm,
                config::model_hash(prep.model, plan.diffusion), hash_of(cfg), seed};
  save_checkpoint((dir / "checkpoint.sdck").string(), ck);

  const artifacts::Provenance prov{{"config_hash", ck.config_hash},
                                   {"seed", std::to_string(seed)},
                                   {"method", std::string(to_string(plan.method))}};
  artifacts::write_text((dir / "train_log.csv").string(), artifacts::training_log_csv(result, prov));
  artifacts::write_text((dir / "config.resolved.ini").string(),
                        artifacts::provenance_line(prov) + config::canonical_text(cfg));

  Json s;
  s["config_hash"] = ck.config_hash;
  s["seed"] = seed;
  s["method"] = std::string(to_string(plan.method));
  s["model_hash"] = config::hash_hex(ck.model_hash);
  s["train_windows"] = result.train_windows;
  s["val_windows"] = result.val_windows;
  s["epochs_run"] = result.log.size();
  s["best_epoch"] = result.best_epoch;
  s["stopped_epoch"] = result.stopped_epoch;
  if (!result.log.empty()) {
    s["final_train_loss"] = result.log.back().train_loss;
    s["best_val_loss"] = result.log.at(result.best_epoch - 1).val_loss;
  }
  write_json((dir / "train_summary.json").string(), s);
  std::ostringstream msg;
  msg << "trained " << to_string(plan.method) << " for " << result.log.size() << " epochs (best " << result.best_epoch
      << ") in " << secs << " s -> " << (dir / "checkpoint.sdck").string();
  note(msg.str());
}

void cmd_detect(const Common& c, const std::string& checkpoint_arg, const std::string& test_arg) {
  auto cfg = load(c);
  const fs::path dir = out_dir(c, &cfg);
  const std::string ck_path = checkpoint_arg.empty() ? (dir / "checkpoint.sdck").string() : checkpoint_arg;
  const auto ck = load_checkpoint(ck_path);

  data::TimeSeries test;
  if (!test_arg.empty()) {
    test = data::load_csv(test_arg, {cfg.data.header, cfg.data.label_column, false});
  } else if (!cfg.data.test_path.empty()) {
    test = data::load_csv(cfg.data.test_path, {cfg.data.header, cfg.data.label_column, false});
  } else {
    test = pipeline::load_dataset(cfg).test;
  }
  test.validate();
  if (test.n_features() != ck.norm.mean.size()) {
    fail(ErrorKind::kMismatch, "test data has ", test.n_features(), " features, checkpoint was trained on ",
         ck.norm.mean.size());
  }

  const auto plan = plan_method(cfg.run.method, cfg.diffusion);
  const auto model = cfg.denoiser(test.n_features());
  const auto expected = config::model_hash(model, plan.diffusion);
  if (expected != ck.model_hash) {
    fail(ErrorKind::kMismatch, "checkpoint '", ck_path, "' has model hash ", config::hash_hex(ck.model_hash),
         " but the config describes ", config::hash_hex(expected),
         " (architecture, window or schedule changed since training)");
  }
  if ((plan.objective == diffusion::Objective::kDenoisingAutoencoder) !=
      (ck.method == Method::kDae)) {
    fail(ErrorKind::kMismatch, "checkpoint was trained as ", to_string(ck.method), ", config asks for ",
         to_string(plan.method));
  }

  const auto normed = data::apply_normalization(test, ck.norm);
  const auto ws = pipeline::test_windows(normed, cfg);
  const auto recon = pipeline::reconstruct(ck.params, ws, plan, cfg.train.batch_size, cfg.run.seed);
  auto s = pipeline::score(ws, recon, normed.length(), cfg.score);
  s.config_hash = config::config_hash(cfg);

  const artifacts::Provenance prov{{"config_hash", hash_of(cfg)},
                                   {"seed", std::to_string(cfg.run.seed)},
                                   {"method", std::string(to_string(plan.method))},
                                   {"model_hash", config::hash_hex(ck.model_hash)},
                                   {"smoothing", std::to_string(s.smoothing_window)},
                                   {"smoothing_mode", std::string(scoring::to_string(s.smoothing_mode))}};
  const auto path = dir / "scores.csv";
  artifacts::write_text(path.string(), artifacts::score_csv(s, test.labels, prov));
  note("wrote " + std::to_string(s.scores.size()) + " scores -> " + path.string());
}

void cmd_eval(const Common& c, const std::string& scores_path, const std::string& labels_path, bool plot) {
  if (scores_path.empty()) fail(ErrorKind::kConfig, "missing --scores");
  std::optional<config::RunConfig> cfg;
  if (!c.config_path.empty()) cfg = load(c);
  const fs::path dir = out_dir(c, cfg ? &*cfg : nullptr);
  const config::MetricsConfig mc = cfg ? cfg->metrics : config::MetricsConfig{};

  auto table = artifacts::read_score_csv(scores_path);
  std::vector<int> labels;
  if (!labels_path.empty()) {
    const auto ts = data::load_csv(labels_path, {data::HeaderMode::kAuto,
                                                 cfg ? cfg->data.label_column : std::string("label"), true});
    labels = *ts.labels;
  } else {
    if (!table.labels) fail(ErrorKind::kData, scores_path, ": no 'label' column and no --labels file");
    labels = *table.labels;
  }
  if (labels.size() != table.scores.size()) {
    fail(ErrorKind::kShape, "score series has ", table.scores.size(), " rows, labels have ", labels.size());
  }

  const std::vector<double> raw = table.raw ? *table.raw : std::vector<double>{};
  MetricsReport r = evaluate(table.scores, raw, labels, mc);
  auto prov = [&](const char* key) {
    const auto it = table.provenance.find(key);
    return it == table.provenance.end() ? std::string() : it->second;
  };
  r.config_hash = prov("config_hash");
  if (const auto seed = prov("seed"); !seed.empty()) r.seed = std::stoull(seed);
  r.method = prov("method");
  if (const auto w = prov("smoothing"); !w.empty()) r.smoothing_window = std::stoul(w);
  r.smoothing_mode = prov("smoothing_mode");

  const auto path = dir / "metrics.json";
  write_json(path.string(), to_json(r));
  if (plot) {
    std::vector<plot::Line> lines{{"score", table.scores, "#1f77b4"}};
    if (table.raw) lines.push_back({"mse", *table.raw, "#aaaaaa"});
    plot::save_svg((dir / "scores.svg").string(),
                   plot::svg_lines(lines, labels, "scores (" + (r.method.empty() ? "?" : r.method) + ")"));
  }
  note("wrote " + path.string());
}

void cmd_synth(const Common& c) {
  auto cfg = load(c);
  if (!cfg.synthetic) fail(ErrorKind::kConfig, "missing section [synthetic]");
  if (c.seed) cfg.synthetic->seed = *c.seed;
  const fs::path dir = out_dir(c, &cfg);
  const auto syn = data::synth_generate(*cfg.synthetic);
  const artifacts::Provenance prov{{"config_hash", hash_of(cfg)}, {"seed", std::to_string(cfg.synthetic->seed)}};
  artifacts::write_text((dir / "train.csv").string(), with_header(prov, syn.train));
  artifacts::write_text((dir / "test.csv").string(), with_header(prov, syn.test));
  note("wrote train.csv (" + std::to_string(syn.train.length()) + ") and test.csv (" +
       std::to_string(syn.test.length()) + ") -> " + dir.string());
}

void cmd_ablate(const Common& c) {
  auto cfg = load(c);
  if (c.seed) cfg.run.seeds = {*c.seed};
  const fs::path dir = out_dir(c, &cfg);
  if (!cfg.ablation.axis) fail(ErrorKind::kConfig, "missing key 'ablation.axis'");
  const auto ds = pipeline::load_dataset(cfg);
  const auto prep = pipeline::prepare(ds, cfg);
  ablation::ModelCache cache;
  const auto result = ablation::sweep(prep, cfg, c.jobs, cache);

  const std::string stem = "ablation_" + std::string(config::to_string(result.axis));
  const artifacts::Provenance prov{{"config_hash", hash_of(cfg)}, {"seeds", [&] {
                                     std::string s;
                                     for (auto x : cfg.run.seeds) s += (s.empty() ? "" : " ") + std::to_string(x);
                                     return s;
                                   }()}};
  artifacts::write_text((dir / (stem + ".csv")).string(),
                        artifacts::provenance_line(prov) + ablation::sweep_csv(result));
  write_json((dir / (stem + ".json")).string(), ablation::sweep_manifest(result, cfg, stem + ".csv"));
  for (const auto& cell : result.cells) {
    const auto st = cell.aggregate();
    for (const auto& m : st) {
      if (m.metric == "vus_pr" && m.mean) {
        std::ostringstream o;
        o << result.cells.size() << " cells; " << config::to_string(result.axis) << "=" << cell.axis_value
          << " vus_pr mean " << *m.mean;
        note(o.str());
      }
    }
  }
  note("wrote " + (dir / (stem + ".csv")).string());
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Selective-filter diffusion anomaly detection for time series"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "seldiff 1.0");

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Run configuration (INI)");
    sub->add_option("--seed", common.seed, "Override run.seed");
    sub->add_option("--out", common.out, "Output directory (else run.out, $SELDIFF_OUT, ./seldiff-out)");
  };

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train);

  std::string checkpoint, test;
  auto* detect = app.add_subcommand("detect", "Score a test series with a checkpoint");
  add_common(detect);
  detect->add_option("--checkpoint", checkpoint, "Checkpoint file (default OUT/checkpoint.sdck)");
  detect->add_option("--test", test, "Test CSV (default data.test or the synthetic test split)");

  std::string scores, labels;
  bool plot = false;
  auto* eval = app.add_subcommand("eval", "Compute metrics for a score CSV");
  add_common(eval);
  eval->add_option("--scores", scores, "Score CSV from detect")->required();
  eval->add_option("--labels", labels, "CSV with a label column (default: the score CSV's own)");
  eval->add_flag("--plot", plot, "Also write scores.svg");

  auto* synth = app.add_subcommand("synth", "Write synthetic train/test CSVs");
  add_common(synth);

  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep over seeds");
  add_common(ablate);
  ablate->add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "seldiff: error[usage]: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) cmd_train(common);
    else if (detect->parsed()) cmd_detect(common, checkpoint, test);
    else if (eval->parsed()) cmd_eval(common, scores, labels, plot);
    else if (synth->parsed()) cmd_synth(common);
    else if (ablate->parsed()) cmd_ablate(common);
  } catch (const Error& e) {
    std::cerr << "seldiff: error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "seldiff: error[internal]: " << e.what() << "\n";
    return kExitInternal;
  }
  return 0;
}
