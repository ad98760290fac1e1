#pragma once

// Graph builders for the toy DenseNet-style classifier, the convolutional
// autoencoder and the (image, latent) discriminator, plus weight init.

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "xray/error.hpp"
#include "xray/graph.hpp"

namespace xray {

struct ClassifierConfig {
  int input_size = 32;
  int num_classes = 14;
  int stem_channels = 8;
  int growth_rate = 4;
  std::vector<int> block_layers = {2, 2};
  double compression = 0.5;

  void validate() const {
    if (input_size < 8) fail(ErrorCode::InvalidConfig, "classifier input_size must be >= 8");
    if (num_classes < 1) fail(ErrorCode::InvalidConfig, "num_classes must be >= 1");
    if (stem_channels < 1 || growth_rate < 1 || block_layers.empty())
      fail(ErrorCode::InvalidConfig, "bad dense-block configuration");
    for (int n : block_layers)
      if (n < 1) fail(ErrorCode::InvalidConfig, "dense blocks need at least one layer");
    if (!(compression > 0.0 && compression <= 1.0)) fail(ErrorCode::InvalidConfig, "compression must be in (0,1]");
    if ((input_size >> (block_layers.size() - 1)) < 2)
      fail(ErrorCode::InvalidConfig, "too many transitions for the input size");
  }
};

struct AutoencoderConfig {
  int input_size = 64;
  int latent_dim = 128;
  std::vector<int> channels = {8, 16, 16};  // per stride-2 stage

  void validate() const {
    if (latent_dim != 64 && latent_dim != 128 && latent_dim != 256 && latent_dim != 512)
      fail(ErrorCode::InvalidConfig, "latent_dim must be 64, 128, 256 or 512");
    if (channels.empty()) fail(ErrorCode::InvalidConfig, "need at least one encoder stage");
    if (input_size % (1 << channels.size()) != 0 || (input_size >> channels.size()) < 1)
      fail(ErrorCode::InvalidConfig, "input_size must be divisible by 2^stages");
    for (int c : channels)
      if (c < 1) fail(ErrorCode::InvalidConfig, "channel counts must be positive");
  }
};

struct DiscriminatorConfig {
  int input_size = 64;
  int latent_dim = 128;
  std::vector<int> channels = {8, 16};
  int hidden = 64;
};

/// stem conv -> dense blocks (BN-ReLU-conv3x3, concatenated) separated by
/// transitions (BN-ReLU-conv1x1-avgpool2) -> BN-ReLU "features" -> GAP ->
/// dense "logits" -> sigmoid "probs". The GAP->dense head makes CAM exact.
inline GraphSpec build_classifier(const ClassifierConfig& cfg) {
  cfg.validate();
  using namespace layers;
  GraphSpec g;
  const auto s = static_cast<std::size_t>(cfg.input_size);
  g.inputs.push_back({"image", {1, s, s}});
  g.layers.push_back(conv2d("stem", cfg.stem_channels, 3, 1, 1));
  std::string current = "stem";
  int channels = cfg.stem_channels;
  for (std::size_t b = 0; b < cfg.block_layers.size(); ++b) {
    const std::string pfx = "block" + std::to_string(b + 1);
    for (int i = 0; i < cfg.block_layers[b]; ++i) {
      const std::string lp = pfx + "_l" + std::to_string(i + 1);
      g.layers.push_back(simple(lp + "_bn", LayerKind::batchnorm, {current}));
      g.layers.push_back(simple(lp + "_relu", LayerKind::relu));
      g.layers.push_back(conv2d(lp + "_conv", cfg.growth_rate, 3, 1, 1));
      g.layers.push_back(simple(lp + "_cat", LayerKind::concat, {current, lp + "_conv"}));
      current = lp + "_cat";
      channels += cfg.growth_rate;
    }
    if (b + 1 < cfg.block_layers.size()) {
      const std::string tp = "trans" + std::to_string(b + 1);
      channels = std::max(1, static_cast<int>(std::floor(channels * cfg.compression)));
      g.layers.push_back(simple(tp + "_bn", LayerKind::batchnorm, {current}));
      g.layers.push_back(simple(tp + "_relu", LayerKind::relu));
      g.layers.push_back(conv2d(tp + "_conv", channels, 1));
      g.layers.push_back(pool(tp + "_pool", LayerKind::avgpool, 2));
      current = tp + "_pool";
    }
  }
  g.layers.push_back(simple("final_bn", LayerKind::batchnorm, {current}));
  g.layers.push_back(simple("features", LayerKind::relu));
  g.layers.push_back(simple("gap", LayerKind::global_avg_pool));
  g.layers.push_back(dense("logits", {static_cast<std::size_t>(cfg.num_classes)}));
  g.layers.push_back(simple("probs", LayerKind::sigmoid));
  g.outputs = {"probs", "logits"};
  return g;
}

struct AutoencoderGraphs {
  GraphSpec encoder;
  GraphSpec decoder;
};

/// Encoder: stride-2 4x4 convs with ReLU, then a linear map to the latent
/// vector. Decoder mirrors it with nearest upsampling + 3x3 convs and ends
/// in a sigmoid so reconstructions are intensities.
inline AutoencoderGraphs build_autoencoder(const AutoencoderConfig& cfg) {
  cfg.validate();
  using namespace layers;
  AutoencoderGraphs ae;
  const auto s = static_cast<std::size_t>(cfg.input_size);
  const auto latent = static_cast<std::size_t>(cfg.latent_dim);
  ae.encoder.inputs.push_back({"image", {1, s, s}});
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string n = "enc" + std::to_string(i + 1);
    ae.encoder.layers.push_back(conv2d(n + "_conv", cfg.channels[i], 4, 2, 1));
    ae.encoder.layers.push_back(simple(n + "_relu", LayerKind::relu));
  }
  ae.encoder.layers.push_back(dense("latent", {latent}));
  ae.encoder.outputs = {"latent"};

  const std::size_t bottom = s >> cfg.channels.size();
  ae.decoder.inputs.push_back({"latent", {latent}});
  ae.decoder.layers.push_back(dense("dec_fc", {static_cast<std::size_t>(cfg.channels.back()), bottom, bottom}));
  ae.decoder.layers.push_back(simple("dec_fc_relu", LayerKind::relu));
  for (std::size_t i = cfg.channels.size(); i-- > 0;) {
    const std::string n = "dec" + std::to_string(cfg.channels.size() - i);
    const int out = i == 0 ? 1 : cfg.channels[i - 1];
    ae.decoder.layers.push_back(upsample(n + "_up", 2));
    ae.decoder.layers.push_back(conv2d(n + "_conv", out, 3, 1, 1));
    if (i != 0) ae.decoder.layers.push_back(simple(n + "_relu", LayerKind::relu));
  }
  ae.decoder.layers.push_back(simple("reconstruction", LayerKind::sigmoid));
  ae.decoder.outputs = {"reconstruction"};
  return ae;
}

/// Scores an (image, latent) pair; output "logit" (real pair vs generated).
inline GraphSpec build_discriminator(const DiscriminatorConfig& cfg) {
  if (cfg.latent_dim < 1 || cfg.hidden < 1 || cfg.channels.empty() || cfg.input_size >> cfg.channels.size() < 1)
    fail(ErrorCode::InvalidConfig, "bad discriminator configuration");
  using namespace layers;
  GraphSpec g;
  const auto s = static_cast<std::size_t>(cfg.input_size);
  const auto h = static_cast<std::size_t>(cfg.hidden);
  g.inputs.push_back({"image", {1, s, s}});
  g.inputs.push_back({"latent", {static_cast<std::size_t>(cfg.latent_dim)}});
  std::string current = "image";
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string n = "dx" + std::to_string(i + 1);
    g.layers.push_back(conv2d(n + "_conv", cfg.channels[i], 4, 2, 1, {current}));
    g.layers.push_back(simple(n + "_relu", LayerKind::relu));
    current = n + "_relu";
  }
  g.layers.push_back(dense("dx_fc", {h}, {current}));
  g.layers.push_back(simple("dx_fc_relu", LayerKind::relu));
  g.layers.push_back(dense("dz_fc", {h}, {"latent"}));
  g.layers.push_back(simple("dz_fc_relu", LayerKind::relu));
  g.layers.push_back(simple("joint", LayerKind::concat, {"dx_fc_relu", "dz_fc_relu"}));
  g.layers.push_back(dense("joint_fc", {h}));
  g.layers.push_back(simple("joint_relu", LayerKind::relu));
  g.layers.push_back(dense("logit", {1}));
  g.outputs = {"logit"};
  return g;
}

/// He-normal conv/dense weights, zero biases, identity batchnorm.
inline std::vector<double> init_weights(const Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> w(net.param_count(), 0.0);
  for (const auto& slot : net.slots()) {
    double* p = w.data() + slot.offset;
    if (slot.name == "weight") {
      const std::size_t fan_in = slot.size() / slot.shape[0];
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (std::size_t i = 0; i < slot.size(); ++i) p[i] = nd(rng);
    } else if (slot.name == "gamma" || slot.name == "running_var") {
      std::fill(p, p + slot.size(), 1.0);
    }
  }
  return w;
}

}  // namespace xray
