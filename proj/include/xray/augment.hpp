#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "xray/error.hpp"
#include "xray/image.hpp"

namespace xray {

/// Random rotation / translation / scaling ranges.
struct AugmentationPolicy {
  double max_rotation_deg = 0.0;
  double max_translation_frac = 0.0;
  double max_scale_frac = 0.0;

  void validate() const {
    if (!(max_rotation_deg >= 0.0)) fail(ErrorCode::InvalidConfig, "max_rotation_deg must be >= 0");
    if (!(max_translation_frac >= 0.0 && max_translation_frac < 1.0))
      fail(ErrorCode::InvalidConfig, "max_translation_frac must lie in [0,1)");
    if (!(max_scale_frac >= 0.0 && max_scale_frac < 1.0))
      fail(ErrorCode::InvalidConfig, "max_scale_frac must lie in [0,1)");
  }

  bool is_identity() const { return max_rotation_deg == 0.0 && max_translation_frac == 0.0 && max_scale_frac == 0.0; }

  /// `level` times the 45 deg / 15% / 15% policy.
  static AugmentationPolicy scaled(double level) { return {45.0 * level, 0.15 * level, 0.15 * level}; }

  std::string label() const {
    return std::to_string(static_cast<int>(std::lround(max_rotation_deg))) + "d/" +
           std::to_string(static_cast<int>(std::lround(100 * max_translation_frac))) + "%t/" +
           std::to_string(static_cast<int>(std::lround(100 * max_scale_frac))) + "%s";
  }
};

/// One concrete transform. Positive angles rotate content counterclockwise
/// as displayed; translation is in pixels; scale > 1 magnifies.
struct AffineParams {
  double angle_deg = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double scale = 1.0;
};

inline AffineParams sample_affine(const AugmentationPolicy& p, std::mt19937_64& rng, int width, int height) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  AffineParams a;
  a.angle_deg = p.max_rotation_deg * u(rng);
  a.tx = p.max_translation_frac * width * u(rng);
  a.ty = p.max_translation_frac * height * u(rng);
  a.scale = 1.0 + p.max_scale_frac * u(rng);
  return a;
}

/// Inverse-maps every output pixel into the source around the image center;
/// bilinear sampling, zero outside the frame.
inline Image apply_affine(const Image& img, const AffineParams& a) {
  Image out(img.width, img.height, img.channels, 0.0);
  const double theta = a.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = img.width / 2.0, cy = img.height / 2.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double px = x + 0.5 - cx - a.tx, py = y + 0.5 - cy - a.ty;
      const double sx = (cs * px - sn * py) / a.scale + cx - 0.5;
      const double sy = (sn * px + cs * py) / a.scale + cy - 0.5;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < img.channels; ++c) {
        auto sample = [&](int xx, int yy) {
          return (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) ? 0.0 : img.at(xx, yy, c);
        };
        const double top = (1 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0);
        const double bottom = (1 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1);
        out.at(x, y, c) = (1 - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

inline Image augment(const Image& img, const AugmentationPolicy& policy, std::mt19937_64& rng) {
  policy.validate();
  if (policy.is_identity()) return img;
  return apply_affine(img, sample_affine(policy, rng, img.width, img.height));
}

}  // namespace xray
