#pragma once

// End-to-end steps shared by the CLI, the ablation runner and the tests:
// load -> normalize -> window -> train -> reconstruct -> score -> evaluate.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "seldiff/config.hpp"
#include "seldiff/data.hpp"
#include "seldiff/denoiser.hpp"
#include "seldiff/diffusion.hpp"
#include "seldiff/method.hpp"
#include "seldiff/report.hpp"
#include "seldiff/rng.hpp"
#include "seldiff/scoring.hpp"
#include "seldiff/synth.hpp"

namespace seldiff::pipeline {

struct Dataset {
  data::TimeSeries train;
  data::TimeSeries test;
};

/// Synthetic data when the config has a [synthetic] section and no train
/// path; CSV files otherwise.
inline Dataset load_dataset(const config::RunConfig& cfg) {
  if (cfg.data.train_path.empty()) {
    if (!cfg.synthetic) fail(ErrorKind::kConfig, "missing key 'data.train' (or a [synthetic] section)");
    auto syn = data::synth_generate(*cfg.synthetic);
    return {std::move(syn.train), std::move(syn.test)};
  }
  if (cfg.data.test_path.empty()) fail(ErrorKind::kConfig, "missing key 'data.test'");
  data::CsvSchema schema{cfg.data.header, cfg.data.label_column, false};
  Dataset ds;
  ds.train = data::load_csv(cfg.data.train_path, schema);
  ds.test = data::load_csv(cfg.data.test_path, schema);
  return ds;
}

struct Prepared {
  data::NormStats norm;
  data::TimeSeries test;  // normalized
  std::vector<NdArray> train_windows;
  data::WindowSet test_windows;
  nn::DenoiserConfig model;
};

inline data::WindowSet test_windows(const data::TimeSeries& test, const config::RunConfig& cfg) {
  return data::make_windows(test, cfg.data.window, cfg.data.inference_stride(),
                            data::WindowMode::kInference);
}

inline Prepared prepare(const Dataset& ds, const config::RunConfig& cfg) {
  ds.train.validate();
  ds.test.validate();
  if (ds.train.n_features() != ds.test.n_features()) {
    fail(ErrorKind::kData, "train has ", ds.train.n_features(), " features, test has ",
         ds.test.n_features());
  }
  Prepared p;
  auto norm = data::normalize(ds.train, {ds.test});
  p.norm = norm.stats;
  p.test = std::move(norm.others[0]);
  p.train_windows = data::make_windows(norm.train, cfg.data.window, cfg.data.train_stride,
                                       data::WindowMode::kTraining)
                        .windows;
  p.test_windows = test_windows(p.test, cfg);
  p.model = cfg.denoiser(ds.train.n_features());
  p.model.validate();
  return p;
}

// Stream ids beyond the training ones in diffusion.hpp.
inline constexpr std::uint64_t kStreamInfer = 4;

inline diffusion::TrainResult train_model(const std::vector<NdArray>& windows,
                                          const nn::DenoiserConfig& model,
                                          const config::RunConfig& cfg, const MethodPlan& plan,
                                          std::uint64_t seed) {
  Rng init_rng = make_rng(seed, diffusion::detail::kStreamInit);
  const auto init = nn::DenoiserParams::init(model, init_rng);
  diffusion::TrainingRunConfig run = cfg.train;
  run.seed = seed;
  return diffusion::train(init, windows, run, plan.diffusion, plan.objective);
}

/// Reconstructs every window, in chunks of the training batch size.
inline std::vector<NdArray> reconstruct(const nn::DenoiserParams& params, const data::WindowSet& ws,
                                        const MethodPlan& plan, std::size_t batch,
                                        std::uint64_t seed) {
  const auto sched = plan.diffusion.schedule();
  Rng rng = make_rng(seed, kStreamInfer);
  std::vector<NdArray> out;
  out.reserve(ws.windows.size());
  const Shape& w = ws.windows.at(0).shape();
  const std::size_t per = w[0] * w[1];
  for (std::size_t start = 0; start < ws.windows.size(); start += batch) {
    const std::size_t len = std::min(batch, ws.windows.size() - start);
    NdArray x({len, w[0], w[1]});
    for (std::size_t i = 0; i < len; ++i)
      std::copy(ws.windows[start + i].data().begin(), ws.windows[start + i].data().end(),
                x.data().begin() + i * per);
    const NdArray rec =
        plan.objective == diffusion::Objective::kDenoisingAutoencoder
            ? diffusion::dae_reconstruct(params, x)
            : diffusion::reverse_process(params, x, sched, plan.diffusion.reverse_steps,
                                         plan.diffusion.inference_noise, plan.diffusion.scale_mode,
                                         &rng);
    for (std::size_t i = 0; i < len; ++i) {
      NdArray r(w);
      std::copy_n(rec.data().begin() + i * per, per, r.data().begin());
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline scoring::ScoreSeries score(const data::WindowSet& ws, const std::vector<NdArray>& recon,
                                  std::size_t n, const config::ScoreConfig& sc) {
  std::vector<std::vector<double>> per_window;
  per_window.reserve(ws.windows.size());
  for (std::size_t i = 0; i < ws.windows.size(); ++i)
    per_window.push_back(scoring::pointwise_mse(ws.windows[i], recon.at(i)));
  scoring::ScoreSeries s;
  s.raw = scoring::assemble_scores(per_window, ws.origins, n);
  s.scores = scoring::smooth(s.raw, sc.smoothing, sc.mode);
  s.smoothing_window = sc.smoothing;
  s.smoothing_mode = sc.mode;
  return s;
}

inline MetricsReport evaluate_scores(const scoring::ScoreSeries& s, const std::vector<int>& labels,
                                     const config::RunConfig& cfg, Method method,
                                     std::uint64_t seed) {
  MetricsReport r = evaluate(s.scores, s.raw, labels, cfg.metrics);
  r.seed = seed;
  r.config_hash = config::hash_hex(config::config_hash(cfg));
  r.smoothing_window = s.smoothing_window;
  r.smoothing_mode = std::string(scoring::to_string(s.smoothing_mode));
  r.method = std::string(to_string(method));
  return r;
}

/// Scores a labelled test split with trained parameters.
inline MetricsReport detect_and_evaluate(const nn::DenoiserParams& params, const Prepared& p,
                                         const config::RunConfig& cfg, const MethodPlan& plan,
                                         std::uint64_t seed, scoring::ScoreSeries* scores_out = nullptr) {
  if (!p.test.labels) fail(ErrorKind::kData, "test split has no labels");
  const auto recon = reconstruct(params, p.test_windows, plan, cfg.train.batch_size, seed);
  auto s = score(p.test_windows, recon, p.test.length(), cfg.score);
  auto report = evaluate_scores(s, *p.test.labels, cfg, plan.method, seed);
  if (scores_out) *scores_out = std::move(s);
  return report;
}

}  // namespace seldiff::pipeline
