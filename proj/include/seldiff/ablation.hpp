#pragma once

// Method comparisons and one-axis hyperparameter sweeps over several seeds.
// Cells that differ only in inference settings (omega, S, or methods sharing
// a training objective) reuse the same trained model through ModelCache.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "seldiff/config.hpp"
#include "seldiff/method.hpp"
#include "seldiff/pipeline.hpp"
#include "seldiff/report.hpp"

namespace seldiff::ablation {

struct Overrides {
  std::optional<double> mask_ratio;
  std::optional<double> loss_weight;
  std::optional<double> omega;
  std::optional<double> beta_end;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> reverse_steps;
};

struct VariantSpec {
  Method method = Method::kAnomalyFilter;
  Overrides overrides;
};

/// Method mapping first, then the explicit overrides on top.
inline MethodPlan plan_variant(const VariantSpec& v, const diffusion::DiffusionConfig& base) {
  MethodPlan plan = plan_method(v.method, base);
  auto& d = plan.diffusion;
  const auto& o = v.overrides;
  if (o.mask_ratio) d.mask_ratio = *o.mask_ratio;
  if (o.loss_weight) d.loss_weight = *o.loss_weight;
  if (o.omega) d.inference_noise = *o.omega;
  if (o.beta_end) d.beta_end = *o.beta_end;
  if (o.steps) {
    d.steps = *o.steps;
    // keep S <= T when only T moves
    if (!o.reverse_steps) d.reverse_steps = std::min(d.reverse_steps, d.steps);
  }
  if (o.reverse_steps) d.reverse_steps = *o.reverse_steps;
  d.validate();
  return plan;
}

// ---------------------------------------------------------------------------
// Trained-model cache

struct TrainedModel {
  nn::DenoiserParams params;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  double seconds = 0.0;
};

/// Everything that determines the trained weights.
inline std::string training_key(const nn::DenoiserConfig& m, const config::RunConfig& cfg,
                                const MethodPlan& plan, std::uint64_t seed) {
  const auto& d = plan.diffusion;
  std::ostringstream o;
  o << config::hash_hex(config::model_hash(m, d)) << "|obj=" << static_cast<int>(plan.objective)
    << "|seed=" << seed << "|stride=" << cfg.data.train_stride << "|lr=" << config::format_double(cfg.train.lr)
    << "|wd=" << config::format_double(cfg.train.weight_decay) << "|batch=" << cfg.train.batch_size
    << "|epochs=" << cfg.train.max_epochs << "|val=" << config::format_double(cfg.train.val_fraction)
    << "|patience=" << cfg.train.patience;
  if (plan.objective == diffusion::Objective::kMaskedNoise) {
    o << "|p=" << config::format_double(d.mask_ratio) << "|c=" << config::format_double(d.loss_weight);
  }
  return o.str();
}

/// Thread-safe memo of trained models. The first caller for a key trains;
/// concurrent callers for the same key wait for that result.
class ModelCache {
 public:
  using Ptr = std::shared_ptr<const TrainedModel>;

  template <typename TrainFn>
  Ptr get(const std::string& key, TrainFn&& train) {
    std::promise<Ptr> promise;
    std::shared_future<Ptr> fut;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        fut = promise.get_future().share();
        entries_.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(std::make_shared<const TrainedModel>(train()));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return fut.get();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_future<Ptr>> entries_;
};

inline ModelCache::Ptr trained_model(ModelCache& cache, const pipeline::Prepared& p,
                                     const config::RunConfig& cfg, const MethodPlan& plan,
                                     std::uint64_t seed) {
  nn::DenoiserConfig model = p.model;
  model.max_step = plan.diffusion.steps;
  return cache.get(training_key(model, cfg, plan, seed), [&] {
    const auto t0 = std::chrono::steady_clock::now();
    auto res = pipeline::train_model(p.train_windows, model, cfg, plan, seed);
    TrainedModel tm{std::move(res.params), res.best_epoch, res.stopped_epoch, 0.0};
    tm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return tm;
  });
}

// ---------------------------------------------------------------------------
// Results

struct MetricStat {
  std::string metric;
  std::optional<double> mean;
  std::optional<double> std;  // sample standard deviation; 0 for one seed
  std::size_t count = 0;      // seeds where the metric was defined
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "f1_best", "auc_roc", "auc_pr",       "range_auc_roc", "range_auc_pr", "vus_roc",   "vus_pr",
      "range_f", "ucr_accuracy", "mse_a", "mse_n",         "mse_ratio"};
  return names;
}

inline std::optional<double> metric_value(const MetricsReport& r, const std::string& name) {
  if (name == "f1_best") return r.f1_best;
  if (name == "auc_roc") return r.auc_roc;
  if (name == "auc_pr") return r.auc_pr;
  if (name == "range_auc_roc") return r.range_auc_roc;
  if (name == "range_auc_pr") return r.range_auc_pr;
  if (name == "vus_roc") return r.vus_roc;
  if (name == "vus_pr") return r.vus_pr;
  if (name == "range_f") return r.range_f;
  if (name == "ucr_accuracy") {
    return r.ucr_accuracy ? std::optional<double>(*r.ucr_accuracy) : std::nullopt;
  }
  if (name == "mse_a") return r.mse_a;
  if (name == "mse_n") return r.mse_n;
  if (name == "mse_ratio") return r.mse_ratio;
  fail(ErrorKind::kConfig, "unknown metric '", name, "'");
}

struct AblationResult {
  VariantSpec spec;
  std::string axis_value;  // label of the cell
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> reports;  // parallel to seeds
  std::vector<double> train_seconds;   // parallel to seeds; shared models repeat their time

  std::vector<MetricStat> aggregate() const {
    std::vector<MetricStat> out;
    for (const auto& name : metric_names()) {
      MetricStat st{name, std::nullopt, std::nullopt, 0};
      std::vector<double> xs;
      for (const auto& r : reports)
        if (auto v = metric_value(r, name)) xs.push_back(*v);
      st.count = xs.size();
      if (!xs.empty()) {
        double sum = 0.0;
        for (double x : xs) sum += x;
        const double mean = sum / static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        st.mean = mean;
        st.std = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
      }
      out.push_back(st);
    }
    return out;
  }

  std::vector<double> values(const std::string& metric) const {
    std::vector<double> xs;
    for (const auto& r : reports)
      if (auto v = metric_value(r, metric)) xs.push_back(*v);
    return xs;
  }
};

inline double median(std::vector<double> xs) {
  if (xs.empty()) fail(ErrorKind::kData, "median of an empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// ---------------------------------------------------------------------------
// Execution

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
/// failure after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      while (!stop) {
        const std::size_t i = next++;
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
          stop = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

/// Evaluates several variants on one dataset for every seed.
inline std::vector<AblationResult> run_cells(const std::vector<VariantSpec>& specs,
                                             const std::vector<std::string>& labels,
                                             const pipeline::Prepared& p,
                                             const config::RunConfig& cfg,
                                             const std::vector<std::uint64_t>& seeds,
                                             std::size_t jobs, ModelCache& cache) {
  if (!p.test.labels) fail(ErrorKind::kData, "ablation needs a labelled test split");
  // Validate every cell before any training starts.
  std::vector<MethodPlan> plans;
  for (const auto& s : specs) plans.push_back(plan_variant(s, cfg.diffusion));

  std::vector<AblationResult> results(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    results[i].spec = specs[i];
    results[i].axis_value = labels[i];
    results[i].seeds = seeds;
    results[i].reports.resize(seeds.size());
    results[i].train_seconds.assign(seeds.size(), 0.0);
  }
  const std::size_t n = specs.size() * seeds.size();
  parallel_for(n, jobs, [&](std::size_t job) {
    const std::size_t cell = job / seeds.size(), k = job % seeds.size();
    const auto& plan = plans[cell];
    auto model = trained_model(cache, p, cfg, plan, seeds[k]);
    results[cell].reports[k] = pipeline::detect_and_evaluate(model->params, p, cfg, plan, seeds[k]);
    results[cell].train_seconds[k] = model->seconds;
  });
  return results;
}

inline AblationResult run_variant(const VariantSpec& spec, const pipeline::Prepared& p,
                                  const config::RunConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds, std::size_t jobs,
                                  ModelCache& cache) {
  return run_cells({spec}, {std::string(to_string(spec.method))}, p, cfg, seeds, jobs, cache)[0];
}

struct SweepResult {
  config::SweepAxis axis = config::SweepAxis::kMethod;
  Method base_method = Method::kAnomalyFilter;
  std::vector<AblationResult> cells;
};

inline VariantSpec sweep_cell(config::SweepAxis axis, Method base, double v) {
  VariantSpec s{base, {}};
  auto as_count = [&](const char* what) {
    if (!(v >= 1.0) || v != std::floor(v)) {
      fail(ErrorKind::kConfig, "ablation grid: ", what, " = ", v, " must be a positive integer");
    }
    return static_cast<std::size_t>(v);
  };
  auto unit = [&](const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::kConfig, "ablation grid: ", what, " = ", v, " outside [0, 1]");
    return v;
  };
  switch (axis) {
    case config::SweepAxis::kMaskRatio: s.overrides.mask_ratio = unit("p"); break;
    case config::SweepAxis::kLossWeight: s.overrides.loss_weight = unit("c"); break;
    case config::SweepAxis::kOmega: s.overrides.omega = unit("omega"); break;
    case config::SweepAxis::kBetaEnd:
      if (!(v > 0.0 && v < 1.0)) fail(ErrorKind::kConfig, "ablation grid: beta_end = ", v, " outside (0, 1)");
      s.overrides.beta_end = v;
      break;
    case config::SweepAxis::kSteps: s.overrides.steps = as_count("T"); break;
    case config::SweepAxis::kReverseSteps: s.overrides.reverse_steps = as_count("S"); break;
    case config::SweepAxis::kMethod: fail(ErrorKind::kConfig, "method axis takes methods, not numbers");
  }
  return s;
}

/// The sweep described by cfg.ablation, over cfg.run.seeds.
inline SweepResult sweep(const pipeline::Prepared& p, const config::RunConfig& cfg, std::size_t jobs,
                         ModelCache& cache) {
  if (!cfg.ablation.axis) fail(ErrorKind::kConfig, "missing key 'ablation.axis'");
  SweepResult out;
  out.axis = *cfg.ablation.axis;
  out.base_method = cfg.run.method;
  std::vector<VariantSpec> specs;
  std::vector<std::string> labels;
  if (out.axis == config::SweepAxis::kMethod) {
    for (Method m : cfg.ablation.methods) {
      specs.push_back({m, {}});
      labels.emplace_back(to_string(m));
    }
  } else {
    for (double v : cfg.ablation.grid) {
      specs.push_back(sweep_cell(out.axis, cfg.run.method, v));
      labels.push_back(config::format_double(v));
    }
  }
  out.cells = run_cells(specs, labels, p, cfg, cfg.run.seeds, jobs, cache);
  return out;
}

// ---------------------------------------------------------------------------
// Output

/// `axis_value,metric,mean,std`, one row per cell and metric; undefined
/// values are empty cells.
inline std::string sweep_csv(const SweepResult& r) {
  std::ostringstream o;
  o << "axis_value,metric,mean,std\n";
  auto cell = [](const std::optional<double>& v) { return v ? config::format_double(*v) : std::string(); };
  for (const auto& c : r.cells)
    for (const auto& st : c.aggregate())
      o << c.axis_value << "," << st.metric << "," << cell(st.mean) << "," << cell(st.std) << "\n";
  return o.str();
}

inline Json sweep_manifest(const SweepResult& r, const config::RunConfig& cfg, const std::string& csv_name) {
  Json j;
  j["axis"] = std::string(config::to_string(r.axis));
  j["base_method"] = std::string(to_string(r.base_method));
  j["seeds"] = cfg.run.seeds;
  j["config_hash"] = config::hash_hex(config::config_hash(cfg));
  j["table"] = csv_name;
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    Json jc;
    jc["axis_value"] = c.axis_value;
    jc["method"] = std::string(to_string(c.spec.method));
    Json reports = Json::array();
    for (const auto& rep : c.reports) reports.push_back(to_json(rep));
    jc["reports"] = reports;
    Json agg = Json::object();
    for (const auto& st : c.aggregate()) {
      agg[st.metric] = {{"mean", detail::opt(st.mean)}, {"std", detail::opt(st.std)}, {"count", st.count}};
    }
    jc["aggregate"] = agg;
    cells.push_back(jc);
  }
  j["cells"] = cells;
  j["config"] = config::canonical_text(cfg, true);
  return j;
}

}  // namespace seldiff::ablation
