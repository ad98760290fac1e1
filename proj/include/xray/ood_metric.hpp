#pragma once

#include <array>
#include <string>

#include "xray/error.hpp"

namespace xray {

enum class OodMetricKind { latent_l2, recon_l1, recon_l2, ssim };

inline constexpr std::array<OodMetricKind, 4> all_ood_metrics = {OodMetricKind::latent_l2, OodMetricKind::recon_l1,
                                                                 OodMetricKind::recon_l2, OodMetricKind::ssim};

/// SSIM grows with similarity; the distances shrink.
inline constexpr bool higher_is_in_distribution(OodMetricKind k) { return k == OodMetricKind::ssim; }

inline std::string to_string(OodMetricKind k) {
  switch (k) {
    case OodMetricKind::latent_l2: return "latent_l2";
    case OodMetricKind::recon_l1: return "recon_l1";
    case OodMetricKind::recon_l2: return "recon_l2";
    case OodMetricKind::ssim: return "ssim";
  }
  return "?";
}

inline OodMetricKind ood_metric_from_string(const std::string& s) {
  for (OodMetricKind k : all_ood_metrics)
    if (to_string(k) == s) return k;
  fail(ErrorCode::InvalidConfig, "unknown OOD metric '" + s + "'");
}

}  // namespace xray
