#pragma once

// Plain-text run configuration:
//
//   # comment
//   [section]
//   key = value
//
// Unknown sections and keys are rejected. Every problem found in a file is
// collected and reported in one error. [anomaly] may repeat; each occurrence
// adds one injected anomaly to the synthetic spec.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "seldiff/data.hpp"
#include "seldiff/denoiser.hpp"
#include "seldiff/diffusion.hpp"
#include "seldiff/error.hpp"
#include "seldiff/method.hpp"
#include "seldiff/metrics.hpp"
#include "seldiff/scoring.hpp"
#include "seldiff/synth.hpp"

namespace seldiff::config {

// ---------------------------------------------------------------------------
// Formatting and hashing helpers

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kDigits[h & 0xf];
  return out;
}

// ---------------------------------------------------------------------------
// Raw INI structure

struct IniEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct IniSection {
  std::string name;
  std::size_t line = 0;
  std::vector<IniEntry> entries;
};

inline std::vector<IniSection> parse_ini(std::istream& in, const std::string& source,
                                         std::vector<std::string>& errors) {
  std::vector<IniSection> sections;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = data::detail::trim(line);
    if (v.empty() || v.front() == '#' || v.front() == ';') continue;
    if (v.front() == '[') {
      if (v.back() != ']') {
        errors.push_back(source + ":" + std::to_string(line_no) + ": malformed section header");
        continue;
      }
      sections.push_back({std::string(data::detail::trim(v.substr(1, v.size() - 2))), line_no, {}});
      continue;
    }
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    if (sections.empty()) {
      errors.push_back(source + ":" + std::to_string(line_no) + ": key outside any section");
      continue;
    }
    std::string_view value = data::detail::trim(v.substr(eq + 1));
    // trailing comment
    if (const auto hash = value.find(" #"); hash != std::string_view::npos) {
      value = data::detail::trim(value.substr(0, hash));
    }
    sections.back().entries.push_back(
        {std::string(data::detail::trim(v.substr(0, eq))), std::string(value), line_no});
  }
  return sections;
}

// ---------------------------------------------------------------------------
// Typed configuration

struct DataConfig {
  std::string train_path;
  std::string test_path;
  std::string label_column = "label";
  data::HeaderMode header = data::HeaderMode::kAuto;
  std::size_t window = 100;
  std::size_t train_stride = 1;
  std::size_t infer_stride = 0;  // 0: same as window

  std::size_t inference_stride() const { return infer_stride ? infer_stride : window; }
};

/// Block count and latent width stay unset unless given, so the high-dim
/// fallback can apply once the feature count is known.
struct ModelConfig {
  std::optional<std::size_t> blocks;
  std::optional<std::size_t> latent;
  std::size_t heads = 8;
  std::size_t ff_dim = 64;
  std::size_t step_embed = nn::kStepEmbedDim;

  static constexpr std::size_t kHighDimFeatures = 32;

  nn::DenoiserConfig resolve(std::size_t n_features, std::size_t window, std::size_t max_step) const {
    const bool high = n_features >= kHighDimFeatures;
    nn::DenoiserConfig c;
    c.n_blocks = blocks.value_or(high ? 4 : 8);
    c.latent_dim = latent.value_or(high ? 32 : 64);
    c.n_heads = heads;
    c.ff_dim = ff_dim;
    c.step_embed_dim = step_embed;
    c.n_features = n_features;
    c.window_len = window;
    c.max_step = max_step;
    return c;
  }
};

struct ScoreConfig {
  std::size_t smoothing = 50;
  scoring::SmoothMode mode = scoring::SmoothMode::kCentered;
};

struct MetricsConfig {
  std::size_t buffer = 50;          // Range-AUC soft-label width
  std::size_t vus_max_buffer = 50;  // VUS averages buffers 0..this
  std::size_t grid = metrics::kDefaultGrid;
};

struct RunSection {
  std::uint64_t seed = 0;
  Method method = Method::kAnomalyFilter;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out;
  bool plots = false;
};

enum class SweepAxis { kMaskRatio, kLossWeight, kOmega, kBetaEnd, kSteps, kReverseSteps, kMethod };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kMaskRatio: return "p";
    case SweepAxis::kLossWeight: return "c";
    case SweepAxis::kOmega: return "omega";
    case SweepAxis::kBetaEnd: return "beta_end";
    case SweepAxis::kSteps: return "T";
    case SweepAxis::kReverseSteps: return "S";
    case SweepAxis::kMethod: return "method";
  }
  return "?";
}

inline SweepAxis parse_axis(std::string_view s) {
  for (SweepAxis a : {SweepAxis::kMaskRatio, SweepAxis::kLossWeight, SweepAxis::kOmega,
                      SweepAxis::kBetaEnd, SweepAxis::kSteps, SweepAxis::kReverseSteps,
                      SweepAxis::kMethod})
    if (s == to_string(a)) return a;
  fail(ErrorKind::kConfig, "unknown ablation axis '", s, "' (p | c | omega | beta_end | T | S | method)");
}

struct AblationConfig {
  std::optional<SweepAxis> axis;
  std::vector<double> grid;
  std::vector<Method> methods;  // axis = method
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  diffusion::DiffusionConfig diffusion;
  diffusion::TrainingRunConfig train;
  ScoreConfig score;
  MetricsConfig metrics;
  RunSection run;
  std::optional<data::SyntheticSpec> synthetic;
  AblationConfig ablation;

  nn::DenoiserConfig denoiser(std::size_t n_features) const {
    return model.resolve(n_features, data.window, diffusion.steps);
  }

  /// Cross-field checks, one message per violated constraint.
  std::vector<std::string> problems() const;

  /// Throws one kConfig error listing every problem.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Reader {
 public:
  Reader(std::string source, std::vector<std::string>& errors)
      : source_(std::move(source)), errors_(errors) {}

  void error(std::size_t line, const std::string& msg) {
    errors_.push_back(source_ + ":" + std::to_string(line) + ": " + msg);
  }

  template <typename T>
  void number(const IniEntry& e, T& out) {
    T v{};
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    if (!e.value.empty() && e.value.front() == '+') ++b;
    const auto r = std::from_chars(b, end, v);
    if (r.ec != std::errc() || r.ptr != end || e.value.empty()) {
      error(e.line, "'" + e.key + "' expects a number, got '" + e.value + "'");
      return;
    }
    out = v;
  }

  void size(const IniEntry& e, std::size_t& out) { number(e, out); }

  void opt_size(const IniEntry& e, std::optional<std::size_t>& out) {
    std::size_t v = 0;
    const std::size_t before = errors_.size();
    number(e, v);
    if (errors_.size() == before) out = v;
  }

  void boolean(const IniEntry& e, bool& out) {
    if (e.value == "true" || e.value == "yes" || e.value == "1") out = true;
    else if (e.value == "false" || e.value == "no" || e.value == "0") out = false;
    else error(e.line, "'" + e.key + "' expects true/false, got '" + e.value + "'");
  }

  template <typename Fn>
  void parsed(const IniEntry& e, Fn&& fn) {
    try {
      fn(e.value);
    } catch (const Error& err) {
      error(e.line, err.what());
    }
  }

  template <typename T>
  void list(const IniEntry& e, std::vector<T>& out) {
    out.clear();
    std::string_view rest = e.value;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view cell = data::detail::trim(rest.substr(0, comma));
      IniEntry tmp{e.key, std::string(cell), e.line};
      T v{};
      const std::size_t before = errors_.size();
      number(tmp, v);
      if (errors_.size() == before) out.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }

 private:
  std::string source_;
  std::vector<std::string>& errors_;
};

using Handler = std::function<void(const IniEntry&)>;

}  // namespace detail

namespace detail {

[[noreturn]] inline void fail_all(const std::vector<std::string>& problems) {
  std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                    (problems.size() > 1 ? "s" : "") + "):";
  for (const auto& p : problems) msg += "\n  " + p;
  fail(ErrorKind::kConfig, msg);
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  std::vector<std::string> errors;
  const auto sections = parse_ini(in, source, errors);
  detail::Reader rd(source, errors);
  RunConfig cfg;

  for (const auto& sec : sections) {
    std::map<std::string, detail::Handler> keys;
    data::AnomalySpec anomaly;
    bool anomaly_has_type = false, anomaly_has_position = false;

    if (sec.name == "data") {
      auto& d = cfg.data;
      keys["train"] = [&](const IniEntry& e) { d.train_path = e.value; };
      keys["test"] = [&](const IniEntry& e) { d.test_path = e.value; };
      keys["label_column"] = [&](const IniEntry& e) { d.label_column = e.value; };
      keys["header"] = [&](const IniEntry& e) {
        if (e.value == "auto") d.header = data::HeaderMode::kAuto;
        else if (e.value == "yes") d.header = data::HeaderMode::kPresent;
        else if (e.value == "no") d.header = data::HeaderMode::kAbsent;
        else rd.error(e.line, "'header' expects auto | yes | no");
      };
      keys["window"] = [&](const IniEntry& e) { rd.size(e, d.window); };
      keys["train_stride"] = [&](const IniEntry& e) { rd.size(e, d.train_stride); };
      keys["infer_stride"] = [&](const IniEntry& e) { rd.size(e, d.infer_stride); };
    } else if (sec.name == "model") {
      auto& m = cfg.model;
      keys["blocks"] = [&](const IniEntry& e) { rd.opt_size(e, m.blocks); };
      keys["latent"] = [&](const IniEntry& e) { rd.opt_size(e, m.latent); };
      keys["heads"] = [&](const IniEntry& e) { rd.size(e, m.heads); };
      keys["ff_dim"] = [&](const IniEntry& e) { rd.size(e, m.ff_dim); };
      keys["step_embed"] = [&](const IniEntry& e) { rd.size(e, m.step_embed); };
    } else if (sec.name == "diffusion") {
      auto& f = cfg.diffusion;
      keys["T"] = [&](const IniEntry& e) { rd.size(e, f.steps); };
      keys["S"] = [&](const IniEntry& e) { rd.size(e, f.reverse_steps); };
      keys["beta_start"] = [&](const IniEntry& e) { rd.number(e, f.beta_start); };
      keys["beta_end"] = [&](const IniEntry& e) { rd.number(e, f.beta_end); };
      keys["scale_mode"] = [&](const IniEntry& e) {
        rd.parsed(e, [&](const std::string& v) { f.scale_mode = diffusion::parse_scale_mode(v); });
      };
      keys["p"] = [&](const IniEntry& e) { rd.number(e, f.mask_ratio); };
      keys["c"] = [&](const IniEntry& e) { rd.number(e, f.loss_weight); };
      keys["omega"] = [&](const IniEntry& e) { rd.number(e, f.inference_noise); };
    } else if (sec.name == "train") {
      auto& t = cfg.train;
      keys["lr"] = [&](const IniEntry& e) { rd.number(e, t.lr); };
      keys["weight_decay"] = [&](const IniEntry& e) { rd.number(e, t.weight_decay); };
      keys["batch"] = [&](const IniEntry& e) { rd.size(e, t.batch_size); };
      keys["max_epochs"] = [&](const IniEntry& e) { rd.size(e, t.max_epochs); };
      keys["val_fraction"] = [&](const IniEntry& e) { rd.number(e, t.val_fraction); };
      keys["patience"] = [&](const IniEntry& e) {
        if (e.value == "none") {
          t.patience = diffusion::TrainingRunConfig::kNoPatience;
        } else {
          rd.size(e, t.patience);
        }
      };
    } else if (sec.name == "score") {
      keys["smoothing"] = [&](const IniEntry& e) { rd.size(e, cfg.score.smoothing); };
      keys["smoothing_mode"] = [&](const IniEntry& e) {
        rd.parsed(e, [&](const std::string& v) { cfg.score.mode = scoring::parse_smooth_mode(v); });
      };
    } else if (sec.name == "metrics") {
      keys["buffer"] = [&](const IniEntry& e) { rd.size(e, cfg.metrics.buffer); };
      keys["vus_max_buffer"] = [&](const IniEntry& e) { rd.size(e, cfg.metrics.vus_max_buffer); };
      keys["grid"] = [&](const IniEntry& e) { rd.size(e, cfg.metrics.grid); };
    } else if (sec.name == "run") {
      auto& r = cfg.run;
      keys["seed"] = [&](const IniEntry& e) { rd.number(e, r.seed); };
      keys["method"] = [&](const IniEntry& e) {
        rd.parsed(e, [&](const std::string& v) { r.method = parse_method(v); });
      };
      keys["seeds"] = [&](const IniEntry& e) { rd.list(e, r.seeds); };
      keys["out"] = [&](const IniEntry& e) { r.out = e.value; };
      keys["plots"] = [&](const IniEntry& e) { rd.boolean(e, r.plots); };
    } else if (sec.name == "synthetic") {
      if (!cfg.synthetic) cfg.synthetic.emplace();
      auto& s = *cfg.synthetic;
      keys["family"] = [&](const IniEntry& e) {
        rd.parsed(e, [&](const std::string& v) { s.family = data::parse_family(v); });
      };
      keys["train_length"] = [&](const IniEntry& e) { rd.size(e, s.train_length); };
      keys["test_length"] = [&](const IniEntry& e) { rd.size(e, s.test_length); };
      keys["features"] = [&](const IniEntry& e) { rd.size(e, s.n_features); };
      keys["period"] = [&](const IniEntry& e) { rd.number(e, s.period); };
      keys["amplitude"] = [&](const IniEntry& e) { rd.number(e, s.amplitude); };
      keys["noise"] = [&](const IniEntry& e) { rd.number(e, s.noise); };
      keys["trend"] = [&](const IniEntry& e) { rd.number(e, s.trend); };
      keys["seed"] = [&](const IniEntry& e) { rd.number(e, s.seed); };
    } else if (sec.name == "anomaly") {
      keys["type"] = [&](const IniEntry& e) {
        rd.parsed(e, [&](const std::string& v) {
          anomaly.type = data::parse_anomaly_type(v);
          anomaly_has_type = true;
        });
      };
      keys["position"] = [&](const IniEntry& e) {
        rd.size(e, anomaly.position);
        anomaly_has_position = true;
      };
      keys["length"] = [&](const IniEntry& e) { rd.size(e, anomaly.length); };
      keys["magnitude"] = [&](const IniEntry& e) { rd.number(e, anomaly.magnitude); };
    } else if (sec.name == "ablation") {
      auto& a = cfg.ablation;
      keys["axis"] = [&](const IniEntry& e) {
        rd.parsed(e, [&](const std::string& v) { a.axis = parse_axis(v); });
      };
      keys["grid"] = [&](const IniEntry& e) { rd.list(e, a.grid); };
      keys["methods"] = [&](const IniEntry& e) {
        a.methods.clear();
        std::string_view rest = e.value;
        while (true) {
          const auto comma = rest.find(',');
          const std::string cell(data::detail::trim(rest.substr(0, comma)));
          rd.parsed(e, [&](const std::string&) { a.methods.push_back(parse_method(cell)); });
          if (comma == std::string_view::npos) break;
          rest.remove_prefix(comma + 1);
        }
      };
    } else {
      rd.error(sec.line, "unknown section [" + sec.name + "]");
      continue;
    }

    std::map<std::string, std::size_t> seen;
    for (const auto& e : sec.entries) {
      auto it = keys.find(e.key);
      if (it == keys.end()) {
        rd.error(e.line, "unknown key '" + e.key + "' in [" + sec.name + "]");
        continue;
      }
      if (auto [pos, fresh] = seen.emplace(e.key, e.line); !fresh) {
        rd.error(e.line, "duplicate key '" + e.key + "' (first at line " + std::to_string(pos->second) + ")");
        continue;
      }
      it->second(e);
    }

    if (sec.name == "anomaly") {
      if (!anomaly_has_type) rd.error(sec.line, "[anomaly] needs 'type'");
      if (!anomaly_has_position) rd.error(sec.line, "[anomaly] needs 'position'");
      if (!seen.count("length") && anomaly.type != data::AnomalyType::kPointSpike) {
        rd.error(sec.line, "[anomaly] of type " + std::string(data::to_string(anomaly.type)) +
                               " needs 'length'");
      }
      if (!cfg.synthetic) cfg.synthetic.emplace();
      cfg.synthetic->anomalies.push_back(anomaly);
    }
  }

  for (auto& p : cfg.problems()) errors.push_back(source + ": " + p);
  if (!errors.empty()) detail::fail_all(errors);
  return cfg;
}

inline RunConfig parse_config_string(const std::string& text, const std::string& source = "<string>") {
  std::istringstream in(text);
  return parse_config(in, source);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config '", path, "'");
  return parse_config(in, path);
}

inline std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> problems;
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };
  need(data.window >= 1, "data.window must be >= 1");
  need(data.train_stride >= 1, "data.train_stride must be >= 1");
  need(model.heads >= 1, "model.heads must be >= 1");
  need(model.ff_dim >= 1, "model.ff_dim must be >= 1");
  need(model.step_embed == nn::kStepEmbedDim, "model.step_embed must be 128");
  need(!model.blocks || *model.blocks >= 1, "model.blocks must be >= 1");
  if (model.latent) {
    need(*model.latent >= 1 && *model.latent % model.heads == 0,
         "model.latent must be a positive multiple of model.heads");
  } else {
    need(64 % model.heads == 0, "model.heads must divide the default latent width 64");
  }
  need(diffusion.steps >= 1, "diffusion.T must be >= 1");
  need(diffusion.reverse_steps >= 1 && diffusion.reverse_steps <= diffusion.steps,
       "diffusion.S must satisfy 1 <= S <= T");
  need(diffusion.beta_start > 0.0 && diffusion.beta_start < diffusion.beta_end &&
           diffusion.beta_end < 1.0,
       "diffusion needs 0 < beta_start < beta_end < 1");
  need(diffusion.mask_ratio >= 0.0 && diffusion.mask_ratio <= 1.0, "diffusion.p must lie in [0, 1]");
  need(diffusion.loss_weight >= 0.0 && diffusion.loss_weight <= 1.0, "diffusion.c must lie in [0, 1]");
  need(diffusion.inference_noise >= 0.0 && diffusion.inference_noise <= 1.0,
       "diffusion.omega must lie in [0, 1]");
  need(train.lr > 0.0, "train.lr must be positive");
  need(train.weight_decay >= 0.0, "train.weight_decay must be >= 0");
  need(train.batch_size >= 1, "train.batch must be >= 1");
  need(train.max_epochs >= 1, "train.max_epochs must be >= 1");
  need(train.val_fraction > 0.0 && train.val_fraction < 1.0, "train.val_fraction must lie in (0, 1)");
  need(train.patience >= 1, "train.patience must be >= 1 or none");
  need(score.smoothing >= 1, "score.smoothing must be >= 1");
  need(metrics.grid >= 2, "metrics.grid must be >= 2");
  need(!run.seeds.empty(), "run.seeds must not be empty");
  if (synthetic) {
    try {
      synthetic->validate();
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }
  if (ablation.axis == SweepAxis::kMethod) {
    need(!ablation.methods.empty(), "ablation.methods must list methods when axis = method");
  } else if (ablation.axis) {
    need(!ablation.grid.empty(), "ablation.grid must not be empty");
  }
  return problems;
}

inline void RunConfig::validate() const {
  if (auto p = problems(); !p.empty()) detail::fail_all(p);
}

// ---------------------------------------------------------------------------
// Canonical text and hashes

/// Every setting in a fixed order, one `key = value` per line. Parsing the
/// result gives back an equal configuration. Unset optional model widths are
/// written as comments.
inline std::string canonical_text(const RunConfig& c, bool for_hash = false) {
  std::ostringstream o;
  auto kv = [&](std::string_view k, const std::string& v) { o << k << " = " << v << "\n"; };
  auto num = [&](std::string_view k, double v) { kv(k, format_double(v)); };
  auto uint = [&](std::string_view k, std::uint64_t v) { kv(k, std::to_string(v)); };
  auto join = [](const auto& xs, auto fmt) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + fmt(xs[i]);
    return s;
  };

  o << "[data]\n";
  if (!c.data.train_path.empty()) kv("train", c.data.train_path);
  if (!c.data.test_path.empty()) kv("test", c.data.test_path);
  kv("label_column", c.data.label_column);
  kv("header", c.data.header == data::HeaderMode::kAuto      ? "auto"
               : c.data.header == data::HeaderMode::kPresent ? "yes"
                                                             : "no");
  uint("window", c.data.window);
  uint("train_stride", c.data.train_stride);
  uint("infer_stride", c.data.infer_stride);

  o << "\n[model]\n";
  if (c.model.blocks) uint("blocks", *c.model.blocks);
  else o << "# blocks = auto\n";
  if (c.model.latent) uint("latent", *c.model.latent);
  else o << "# latent = auto\n";
  uint("heads", c.model.heads);
  uint("ff_dim", c.model.ff_dim);
  uint("step_embed", c.model.step_embed);

  o << "\n[diffusion]\n";
  uint("T", c.diffusion.steps);
  uint("S", c.diffusion.reverse_steps);
  num("beta_start", c.diffusion.beta_start);
  num("beta_end", c.diffusion.beta_end);
  kv("scale_mode", std::string(diffusion::to_string(c.diffusion.scale_mode)));
  num("p", c.diffusion.mask_ratio);
  num("c", c.diffusion.loss_weight);
  num("omega", c.diffusion.inference_noise);

  o << "\n[train]\n";
  num("lr", c.train.lr);
  num("weight_decay", c.train.weight_decay);
  uint("batch", c.train.batch_size);
  uint("max_epochs", c.train.max_epochs);
  num("val_fraction", c.train.val_fraction);
  if (c.train.patience == diffusion::TrainingRunConfig::kNoPatience) kv("patience", "none");
  else uint("patience", c.train.patience);

  o << "\n[score]\n";
  uint("smoothing", c.score.smoothing);
  kv("smoothing_mode", std::string(scoring::to_string(c.score.mode)));

  o << "\n[metrics]\n";
  uint("buffer", c.metrics.buffer);
  uint("vus_max_buffer", c.metrics.vus_max_buffer);
  uint("grid", c.metrics.grid);

  o << "\n[run]\n";
  if (!for_hash) uint("seed", c.run.seed);
  kv("method", std::string(to_string(c.run.method)));
  kv("seeds", join(c.run.seeds, [](std::uint64_t s) { return std::to_string(s); }));
  if (!for_hash) {
    if (!c.run.out.empty()) kv("out", c.run.out);
    kv("plots", c.run.plots ? "true" : "false");
  }

  if (c.synthetic) {
    const auto& s = *c.synthetic;
    o << "\n[synthetic]\n";
    kv("family", std::string(data::to_string(s.family)));
    uint("train_length", s.train_length);
    uint("test_length", s.test_length);
    uint("features", s.n_features);
    num("period", s.period);
    num("amplitude", s.amplitude);
    num("noise", s.noise);
    num("trend", s.trend);
    uint("seed", s.seed);
    for (const auto& a : s.anomalies) {
      o << "\n[anomaly]\n";
      kv("type", std::string(data::to_string(a.type)));
      uint("position", a.position);
      uint("length", a.length);
      num("magnitude", a.magnitude);
    }
  }

  if (c.ablation.axis) {
    o << "\n[ablation]\n";
    kv("axis", std::string(to_string(*c.ablation.axis)));
    if (!c.ablation.grid.empty()) kv("grid", join(c.ablation.grid, format_double));
    if (!c.ablation.methods.empty()) {
      kv("methods", join(c.ablation.methods, [](Method m) { return std::string(to_string(m)); }));
    }
  }
  return o.str();
}

/// Hash of everything that affects results, excluding the seed and the
/// output location (reported separately).
inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(canonical_text(c, true)); }

/// Hash of what a checkpoint must agree on to be reused: architecture,
/// schedule, scaling convention and window geometry.
inline std::uint64_t model_hash(const nn::DenoiserConfig& m, const diffusion::DiffusionConfig& d) {
  std::ostringstream o;
  o << "blocks=" << m.n_blocks << ";latent=" << m.latent_dim << ";heads=" << m.n_heads
    << ";ff=" << m.ff_dim << ";embed=" << m.step_embed_dim << ";D=" << m.n_features
    << ";L=" << m.window_len << ";max_step=" << m.max_step << ";T=" << d.steps
    << ";beta_start=" << format_double(d.beta_start) << ";beta_end=" << format_double(d.beta_end)
    << ";scale=" << diffusion::to_string(d.scale_mode);
  return fnv1a64(o.str());
}

}  // namespace seldiff::config
