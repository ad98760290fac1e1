#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "xray/builders.hpp"
#include "xray/bundle.hpp"
#include "xray/error.hpp"
#include "xray/pipeline.hpp"

namespace testutil {

using namespace xray;

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an xray::Error";
  return ErrorCode::InvalidConfig;
}

inline Image random_image(std::mt19937_64& rng, int w, int h, int c = 1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h, c);
  for (double& v : img.data) v = u(rng);
  return img;
}

inline std::vector<Image> phantoms(std::uint64_t seed, int n, int classes, int size = 64) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> flags(classes, 0);
    if (classes) flags[i % classes] = 1;
    out.push_back(gen_phantom(seed + i, flags, {size}).image);
  }
  return out;
}

/// Small untrained classifier (plus an optional 16x16 autoencoder gate)
/// packaged with three fixtures.
inline ModelBundle tiny_bundle(int classes = 3, bool with_ood = false, std::uint64_t seed = 7) {
  ClassifierConfig cfg;
  cfg.input_size = 16;
  cfg.num_classes = classes;
  cfg.stem_channels = 4;
  cfg.growth_rate = 2;
  cfg.block_layers = {1, 1};
  ModelBundle b;
  b.graph = build_classifier(cfg);
  const Network net(b.graph);
  b.weights = init_weights(net, seed);
  b.preprocess = {16, 0.5, 0.25, true};
  for (int c = 0; c < classes; ++c) b.class_names.push_back("class_" + std::to_string(c));
  b.operating_points.assign(classes, 0.5);
  if (with_ood) {
    AutoencoderConfig ac;
    ac.input_size = 16;
    ac.latent_dim = 64;
    ac.channels = {2, 2};
    const auto g = build_autoencoder(ac);
    OodModel m;
    m.encoder = g.encoder;
    m.decoder = g.decoder;
    m.encoder_weights = init_weights(Network(g.encoder), seed + 1);
    m.decoder_weights = init_weights(Network(g.decoder), seed + 2);
    m.preprocess = {16, 0.0, 1.0, true};
    m.metric = OodMetricKind::recon_l2;
    m.threshold = 0.05;
    b.ood = std::move(m);
  }
  b.fixtures = make_fixtures(b.graph, b.weights, b.preprocess, phantoms(seed, 3, classes, 24));
  return b;
}

/// A fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("xray_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testutil
