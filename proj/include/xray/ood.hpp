#pragma once

// Out-of-distribution scoring: autoencoder reconstruction, SSIM / L1 / L2
// reconstruction scores, latent distance, threshold calibration and the
// admit/reject decision.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <json.hpp>

#include "xray/bundle.hpp"
#include "xray/engine.hpp"
#include "xray/error.hpp"
#include "xray/image.hpp"
#include "xray/ood_metric.hpp"
#include "xray/stats.hpp"

namespace xray {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

struct SsimResult {
  double ssim = 0.0;               // mean local SSIM
  double contrast_structure = 0.0; // mean local (2 cov + C2) / (var_a + var_b + C2)
};

namespace detail {

// Local weighted moments over every window position that fits entirely
// inside the image (valid mode). The Gaussian is truncated to the image
// when the image is smaller than the window.
struct LocalMoments {
  int width = 0, height = 0;
  std::vector<double> mean_a, mean_b, aa, bb, ab;
};

inline std::vector<double> gaussian_kernel(int radius, double sigma) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

inline std::vector<double> filter_valid(const std::vector<double>& img, int w, int h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  const int ow = w - 2 * r, oh = h - 2 * r;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < static_cast<int>(k.size()); ++i) acc += k[i] * img[y * w + x + i];
      tmp[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < static_cast<int>(k.size()); ++i) acc += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

inline LocalMoments local_moments(const Image& a, const Image& b, const SsimParams& p) {
  const int radius = std::max(0, std::min({p.window / 2, (a.width - 1) / 2, (a.height - 1) / 2}));
  const auto k = gaussian_kernel(radius, p.sigma);
  std::vector<double> aa(a.data.size()), bb(a.data.size()), ab(a.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    aa[i] = a.data[i] * a.data[i];
    bb[i] = b.data[i] * b.data[i];
    ab[i] = a.data[i] * b.data[i];
  }
  LocalMoments m;
  m.width = a.width - 2 * radius;
  m.height = a.height - 2 * radius;
  m.mean_a = filter_valid(a.data, a.width, a.height, k);
  m.mean_b = filter_valid(b.data, a.width, a.height, k);
  m.aa = filter_valid(aa, a.width, a.height, k);
  m.bb = filter_valid(bb, a.width, a.height, k);
  m.ab = filter_valid(ab, a.width, a.height, k);
  return m;
}

}  // namespace detail

inline SsimResult ssim_detail(const Image& a, const Image& b, const SsimParams& p = {}) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels || a.channels != 1)
    fail(ErrorCode::ShapeMismatch, "ssim needs two grayscale images of equal size");
  const auto m = detail::local_moments(a, b, p);
  const double c1 = p.c1(), c2 = p.c2();
  double total = 0.0, total_cs = 0.0;
  const std::size_t n = m.mean_a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double mu_a = m.mean_a[i], mu_b = m.mean_b[i];
    const double var_a = m.aa[i] - mu_a * mu_a;
    const double var_b = m.bb[i] - mu_b * mu_b;
    const double cov = m.ab[i] - mu_a * mu_b;
    const double cs = (2.0 * cov + c2) / (var_a + var_b + c2);
    const double lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
    total += lum * cs;
    total_cs += cs;
  }
  return {total / static_cast<double>(n), total_cs / static_cast<double>(n)};
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, L 1).
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) { return ssim_detail(a, b, p).ssim; }

struct ReconstructionResult {
  Image reconstruction;
  Image error_map;  // |x - x_hat| per pixel
  std::vector<double> latent;
  std::array<double, 4> scores{};  // indexed by OodMetricKind

  double score(OodMetricKind k) const { return scores[static_cast<std::size_t>(k)]; }

  nlohmann::json scores_json() const {
    nlohmann::json j;
    for (OodMetricKind k : all_ood_metrics) j[to_string(k)] = score(k);
    return j;
  }
};

/// Euclidean distance of a latent vector from `reference` (the prior mean 0
/// when empty).
inline double latent_distance(std::span<const double> latent, std::span<const double> reference = {}) {
  if (!reference.empty() && reference.size() != latent.size())
    fail(ErrorCode::ShapeMismatch, "latent reference has the wrong size");
  double s = 0.0;
  for (std::size_t i = 0; i < latent.size(); ++i) {
    const double d = latent[i] - (reference.empty() ? 0.0 : reference[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

/// Pixel-wise scores of a reconstruction; fills everything except latent_l2.
inline ReconstructionResult score_reconstruction(const Image& x, const Image& x_hat) {
  if (x.width != x_hat.width || x.height != x_hat.height || x.channels != x_hat.channels)
    fail(ErrorCode::ShapeMismatch, "reconstruction shape differs from input");
  ReconstructionResult r;
  r.reconstruction = x_hat;
  r.error_map = Image(x.width, x.height, x.channels);
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double d = x.data[i] - x_hat.data[i];
    r.error_map.data[i] = std::abs(d);
    l1 += std::abs(d);
    l2 += d * d;
  }
  const double n = static_cast<double>(x.data.size());
  r.scores[static_cast<std::size_t>(OodMetricKind::recon_l1)] = l1 / n;
  r.scores[static_cast<std::size_t>(OodMetricKind::recon_l2)] = l2 / n;
  r.scores[static_cast<std::size_t>(OodMetricKind::ssim)] = ssim(x, x_hat);
  return r;
}

/// Autoencoder pair with its weights; the decoder emits intensities.
struct Autoencoder {
  Network encoder;
  Network decoder;
  std::span<const double> encoder_weights;
  std::span<const double> decoder_weights;
  PreprocessSpec preprocess{64, 0.0, 1.0, true};

  static Autoencoder from(const OodModel& m) {
    return {Network(m.encoder), Network(m.decoder), m.encoder_weights, m.decoder_weights, m.preprocess};
  }

  std::vector<double> encode(const Image& img) const {
    return forward(encoder, encoder_weights, normalize(img, preprocess)).output().data;
  }

  Image decode(std::span<const double> latent) const {
    Tensor z(decoder.spec().image_input().shape, std::vector<double>(latent.begin(), latent.end()));
    return tensor_image(forward(decoder, decoder_weights, std::move(z)).output());
  }
};

/// Reconstructs an AE-sized grayscale image and computes all four scores.
inline ReconstructionResult reconstruct(const Autoencoder& ae, const Image& img,
                                        std::span<const double> latent_reference = {}) {
  if (img.width != ae.preprocess.target_size || img.height != ae.preprocess.target_size || img.channels != 1)
    fail(ErrorCode::ShapeMismatch, "reconstruct expects a grayscale image at the autoencoder input size");
  std::vector<double> z = ae.encode(img);
  ReconstructionResult r = score_reconstruction(img, ae.decode(z));
  r.scores[static_cast<std::size_t>(OodMetricKind::latent_l2)] = latent_distance(z, latent_reference);
  r.latent = std::move(z);
  return r;
}

inline double score_latent_distance(const Autoencoder& ae, const Image& img,
                                    std::span<const double> latent_reference = {}) {
  return latent_distance(ae.encode(img), latent_reference);
}

/// Percentile (default 95th) of in-distribution scores, mirrored for
/// higher-is-in metrics so that `percentile` percent of them are admitted.
inline double calibrate_threshold(std::span<const double> in_distribution_scores, OodMetricKind kind,
                                  double percentile = 95.0) {
  if (in_distribution_scores.empty()) fail(ErrorCode::EmptyScores, "no scores to calibrate on");
  const double q = percentile / 100.0;
  return quantile_ecdf(in_distribution_scores, higher_is_in_distribution(kind) ? 1.0 - q : q);
}

struct OodVerdict {
  bool admitted = false;
  OodMetricKind metric = OodMetricKind::ssim;
  double score = 0.0;
  double threshold = 0.0;

  nlohmann::json to_json() const {
    return {{"admitted", admitted}, {"metric", to_string(metric)}, {"score", score}, {"threshold", threshold}};
  }
};

/// Ties admit.
inline OodVerdict decide(double score, double threshold, OodMetricKind kind) {
  const bool admitted = higher_is_in_distribution(kind) ? score >= threshold : score <= threshold;
  return {admitted, kind, score, threshold};
}

}  // namespace xray
