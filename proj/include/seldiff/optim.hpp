#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "seldiff/autodiff.hpp"
#include "seldiff/error.hpp"

namespace seldiff::ad {

struct NamedParam {
  std::string name;
  Var var;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// Adam with decoupled weight decay: the decay multiplies the parameter
/// directly and never enters the moment estimates.
class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, AdamWConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.var.shape(), 0.0);
      v_.emplace_back(p.var.shape(), 0.0);
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }
  const std::vector<NdArray>& first_moments() const { return m_; }
  const std::vector<NdArray>& second_moments() const { return v_; }

  /// Applies one update with explicitly supplied gradients.
  void step(const std::vector<NdArray>& grads) {
    if (grads.size() != params_.size()) {
      fail(ErrorKind::kShape, "AdamW::step: ", grads.size(), " gradients for ",
           params_.size(), " parameters");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (grads[i].shape() != params_[i].var.shape()) {
        fail(ErrorKind::kShape, "AdamW::step: gradient ", shape_str(grads[i].shape()),
             " for parameter '", params_[i].name, "' of shape ",
             shape_str(params_[i].var.shape()));
      }
      if (!grads[i].all_finite()) {
        fail(ErrorKind::kNumeric, "AdamW::step: non-finite gradient for parameter '",
             params_[i].name, "'");
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      double* p = params_[i].var.mutable_value().data().data();
      double* m = m_[i].data().data();
      double* v = v_[i].data().data();
      const double* g = grads[i].data().data();
      for (std::size_t j = 0; j < grads[i].size(); ++j) {
        p[j] *= decay;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  /// Uses the gradients accumulated on the parameter nodes, then clears them.
  void step() {
    std::vector<NdArray> grads;
    grads.reserve(params_.size());
    for (const auto& p : params_) grads.push_back(p.var.grad());
    step(grads);
    zero_grad();
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

 private:
  std::vector<NamedParam> params_;
  AdamWConfig cfg_;
  std::vector<NdArray> m_;
  std::vector<NdArray> v_;
  std::size_t step_ = 0;
};

}  // namespace seldiff::ad
