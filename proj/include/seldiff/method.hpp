#pragma once

// Detection methods and how each one maps onto a training objective and an
// inference procedure.

#include <string_view>

#include "seldiff/diffusion.hpp"
#include "seldiff/error.hpp"

namespace seldiff {

enum class Method { kAnomalyFilter, kDdpm, kDdpmMask, kDdpmNoiseless, kDae };

inline constexpr Method kAllMethods[] = {Method::kAnomalyFilter, Method::kDdpm, Method::kDdpmMask,
                                         Method::kDdpmNoiseless, Method::kDae};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::kAnomalyFilter: return "AnomalyFilter";
    case Method::kDdpm: return "DDPM";
    case Method::kDdpmMask: return "DDPM+mask";
    case Method::kDdpmNoiseless: return "DDPM+noiseless";
    case Method::kDae: return "DAE";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (s == to_string(m)) return m;
  fail(ErrorKind::kConfig, "unknown method '", s,
       "' (AnomalyFilter | DDPM | DDPM+mask | DDPM+noiseless | DAE)");
}

struct MethodPlan {
  Method method = Method::kAnomalyFilter;
  diffusion::Objective objective = diffusion::Objective::kMaskedNoise;
  diffusion::DiffusionConfig diffusion;  // p and c as used for training, omega for inference
};

/// Fixes the fields that define each method and leaves the rest of `base`
/// alone:
///   AnomalyFilter   masked training (p, c from base), inference with base omega
///   DDPM            p = 1, c = 1, omega = 1
///   DDPM+mask       masked training (p, c from base), omega = 1
///   DDPM+noiseless  p = 1, c = 1, omega = 0
///   DAE             direct reconstruction objective, single forward pass
inline MethodPlan plan_method(Method m, const diffusion::DiffusionConfig& base) {
  MethodPlan plan{m, diffusion::Objective::kMaskedNoise, base};
  switch (m) {
    case Method::kAnomalyFilter:
      break;
    case Method::kDdpm:
      plan.diffusion.mask_ratio = 1.0;
      plan.diffusion.loss_weight = 1.0;
      plan.diffusion.inference_noise = 1.0;
      break;
    case Method::kDdpmMask:
      plan.diffusion.inference_noise = 1.0;
      break;
    case Method::kDdpmNoiseless:
      plan.diffusion.mask_ratio = 1.0;
      plan.diffusion.loss_weight = 1.0;
      plan.diffusion.inference_noise = 0.0;
      break;
    case Method::kDae:
      plan.objective = diffusion::Objective::kDenoisingAutoencoder;
      break;
  }
  return plan;
}

}  // namespace seldiff
