#pragma once

// Synthetic chest-film phantoms (in-distribution) and out-of-distribution
// image families, plus the JSON dataset manifest they are regenerated from.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xray/error.hpp"
#include "xray/image.hpp"

namespace xray {

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {
      "Atelectasis", "Cardiomegaly", "Effusion",  "Infiltration", "Mass",     "Nodule",   "Pneumonia",
      "Pneumothorax", "Consolidation", "Edema", "Emphysema",    "Fibrosis", "Pleural_Thickening", "Hernia"};
  return names;
}

struct SyntheticSample {
  Image image;
  std::vector<int> labels;
  std::string generator;
  std::uint64_t seed = 0;
};

struct PhantomOptions {
  int size = 64;
  double noise_sigma = 0.01;
};

/// Center and spread (pixels) of the lesion blob for `cls` in a phantom.
struct BlobSite {
  double x, y, sigma;
};

/// Lesion sites sit on a regular grid over the central half of the frame.
inline BlobSite nominal_blob_site(int cls, int num_classes, int size) {
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_classes))));
  const int gx = cls % grid, gy = cls / grid;
  const double cell = 0.5 / grid;
  return {(0.25 + (gx + 0.5) * cell) * size, (0.25 + (gy + 0.5) * cell) * size, 0.035 * size};
}

/// Dark background, smooth bright thorax ellipse with two darker lung
/// fields, and one Gaussian bright blob per flagged class. The random
/// draws do not depend on the flags, so toggling a flag only adds or
/// removes its blob.
inline SyntheticSample gen_phantom(std::uint64_t seed, const std::vector<int>& lesion_flags,
                                   const PhantomOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const int S = opt.size;
  const double background = uni(0.02, 0.08);
  const double cx = S / 2.0 + uni(-0.03, 0.03) * S, cy = S / 2.0 + uni(-0.03, 0.03) * S;
  const double rx = uni(0.36, 0.42) * S, ry = uni(0.40, 0.46) * S;
  const double body = uni(0.50, 0.60);
  const double lung_drop = uni(0.18, 0.28);
  const double lung_dx = uni(0.17, 0.21) * S, lung_rx = uni(0.11, 0.14) * S, lung_ry = uni(0.25, 0.30) * S;

  const int K = static_cast<int>(lesion_flags.size());
  std::vector<BlobSite> blobs(K);
  std::vector<double> amplitude(K);
  for (int c = 0; c < K; ++c) {
    BlobSite s = nominal_blob_site(c, K, S);
    s.x += uni(-0.02, 0.02) * S;
    s.y += uni(-0.02, 0.02) * S;
    blobs[c] = s;
    amplitude[c] = uni(0.30, 0.40);
  }

  std::normal_distribution<double> noise(0.0, opt.noise_sigma);
  auto edge = [](double r) { return 1.0 / (1.0 + std::exp((r - 1.0) * 12.0)); };
  SyntheticSample sample;
  sample.image = Image(S, S, 1);
  sample.labels = lesion_flags;
  sample.generator = "phantom";
  sample.seed = seed;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double r = std::hypot((px - cx) / rx, (py - cy) / ry);
      double v = background + (body - background) * edge(r);
      for (double side : {-1.0, 1.0}) {
        const double lr = std::hypot((px - cx - side * lung_dx) / lung_rx, (py - cy + 0.05 * S) / lung_ry);
        v -= lung_drop * edge(lr);
      }
      for (int c = 0; c < K; ++c) {
        if (!lesion_flags[c]) continue;
        const double d2 = (px - blobs[c].x) * (px - blobs[c].x) + (py - blobs[c].y) * (py - blobs[c].y);
        v += amplitude[c] * std::exp(-d2 / (2.0 * blobs[c].sigma * blobs[c].sigma));
      }
      sample.image.at(x, y) = std::clamp(v + noise(rng), 0.0, 1.0);
    }
  }
  return sample;
}

enum class OodFamily { noise, stripes, inverted, blank };

inline std::string to_string(OodFamily f) {
  switch (f) {
    case OodFamily::noise: return "noise";
    case OodFamily::stripes: return "stripes";
    case OodFamily::inverted: return "inverted";
    case OodFamily::blank: return "blank";
  }
  return "?";
}

inline OodFamily ood_family_from_string(const std::string& s) {
  for (OodFamily f : {OodFamily::noise, OodFamily::stripes, OodFamily::inverted, OodFamily::blank})
    if (to_string(f) == s) return f;
  fail(ErrorCode::InvalidConfig, "unknown OOD family '" + s + "'");
}

inline Image gen_ood(std::uint64_t seed, OodFamily family, int size = 64) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(size, size, 1);
  switch (family) {
    case OodFamily::noise:
      for (double& v : img.data) v = u(rng);
      break;
    case OodFamily::stripes: {
      const double freq = 3.0 + 5.0 * u(rng), theta = std::numbers::pi * u(rng), phase = 2 * std::numbers::pi * u(rng);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double t = (x * std::cos(theta) + y * std::sin(theta)) / size;
          img.at(x, y) = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * freq * t + phase);
        }
      break;
    }
    case OodFamily::inverted: {
      std::vector<int> flags(4);
      for (int& f : flags) f = u(rng) < 0.5;
      PhantomOptions opt;
      opt.size = size;
      img = gen_phantom(rng(), flags, opt).image;
      for (double& v : img.data) v = 1.0 - v;
      break;
    }
    case OodFamily::blank:
      break;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Dataset manifests

struct SampleRecord {
  std::uint64_t seed = 0;
  std::vector<int> flags;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int image_size = 64;
  std::vector<std::string> class_names;
  std::vector<SampleRecord> samples;

  std::size_t size() const { return samples.size(); }

  SyntheticSample sample(std::size_t i) const {
    PhantomOptions opt;
    opt.size = image_size;
    return gen_phantom(samples.at(i).seed, samples.at(i).flags, opt);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["generator"] = "phantom";
    j["version"] = 1;
    j["seed"] = seed;
    j["image_size"] = image_size;
    j["class_names"] = class_names;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : samples) j["samples"].push_back({{"seed", s.seed}, {"flags", s.flags}});
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
      m.seed = j.at("seed");
      m.image_size = j.at("image_size");
      m.class_names = j.at("class_names").get<std::vector<std::string>>();
      for (const auto& s : j.at("samples")) {
        SampleRecord r{s.at("seed"), s.at("flags").get<std::vector<int>>()};
        if (r.flags.size() != m.class_names.size()) fail(ErrorCode::InvalidConfig, "sample flag count mismatch");
        m.samples.push_back(std::move(r));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::InvalidConfig, std::string("dataset manifest: ") + e.what());
    }
    return m;
  }
};

/// n phantoms with independent per-class flags at `positive_rate`.
inline DatasetManifest make_dataset(std::uint64_t seed, std::size_t n,
                                    std::vector<std::string> class_names = default_class_names(),
                                    int image_size = 64, double positive_rate = 0.5) {
  DatasetManifest m;
  m.seed = seed;
  m.image_size = image_size;
  m.class_names = std::move(class_names);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    r.seed = rng();
    for (std::size_t c = 0; c < m.class_names.size(); ++c) r.flags.push_back(u(rng) < positive_rate ? 1 : 0);
    m.samples.push_back(std::move(r));
  }
  return m;
}

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;
};

/// Shuffled 70/10/20 (by default) partition of [0, n).
inline DatasetSplit split_dataset(std::size_t n, std::uint64_t seed, double train_frac = 0.7, double val_frac = 0.1) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(train_frac * n));
  const auto n_val = static_cast<std::size_t>(std::floor(val_frac * n));
  DatasetSplit s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

}  // namespace xray
