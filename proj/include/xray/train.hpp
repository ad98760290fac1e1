#pragma once

// Trainers: multi-label classifier (per-class BCE on logits), L2
// autoencoder, and adversarially trained autoencoder (encoder/decoder vs an
// (image, latent) discriminator with label smoothing and generator halting).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xray/augment.hpp"
#include "xray/builders.hpp"
#include "xray/bundle.hpp"
#include "xray/engine.hpp"
#include "xray/error.hpp"
#include "xray/eval.hpp"
#include "xray/image.hpp"
#include "xray/optim.hpp"
#include "xray/phantom.hpp"

namespace xray {

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  int skipped_generator_steps = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch}, {"loss", loss}, {"val_metric", val_metric}, {"lr", lr}};
    if (skipped_generator_steps) j["skipped_generator_steps"] = skipped_generator_steps;
    return j;
  }
};

/// One JSON object per line.
inline std::string history_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) out += r.to_json().dump() + "\n";
  return out;
}

struct TrainOptions {
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 1;
  /// Replaces the validation metric (mean AUC) when set; used to drive the
  /// plateau scheduler from outside.
  std::function<double(int epoch)> validation_metric;
  /// Samples used to re-estimate batchnorm running statistics each epoch.
  std::size_t batchnorm_samples = 128;
};

/// Images with per-class 0/1 labels.
struct LabeledSet {
  std::vector<Image> images;
  std::vector<std::vector<int>> labels;

  std::size_t size() const { return images.size(); }
};

inline LabeledSet materialize(const DatasetManifest& m, std::span<const std::size_t> indices) {
  LabeledSet s;
  for (std::size_t i : indices) {
    SyntheticSample smp = m.sample(i);
    s.images.push_back(std::move(smp.image));
    s.labels.push_back(std::move(smp.labels));
  }
  return s;
}

namespace detail {

inline void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) fail(ErrorCode::Divergence, std::string(what) + " loss became non-finite");
}

inline void check_finite(std::span<const double> w, const char* what) {
  for (double v : w)
    if (!std::isfinite(v)) fail(ErrorCode::Divergence, std::string(what) + " weights became non-finite");
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Binary cross-entropy on a logit with a (possibly smoothed) target:
/// softplus(z) - t z; its derivative is sigmoid(z) - t.
inline double bce_logit(double z, double t) { return softplus(z) - t * z; }

inline void add_into(std::vector<double>& acc, std::span<const double> g) {
  if (acc.empty()) acc.assign(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

inline std::vector<std::vector<std::size_t>> batches(std::size_t n, int batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + static_cast<std::size_t>(batch_size)));
  return out;
}

}  // namespace detail

/// Sets every batchnorm layer's running statistics to the per-channel mean
/// and variance of its input over `inputs`, layer by layer so later layers
/// see already-normalized activations.
inline void recalibrate_batchnorm(const Network& net, std::vector<double>& weights, const std::vector<Tensor>& inputs) {
  if (inputs.empty()) return;
  const auto& layers = net.spec().layers;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    if (layers[li].kind != LayerKind::batchnorm) continue;
    const std::size_t in_node = net.layer_inputs(li).front();
    const Shape& shape = net.node_shape(in_node);
    const std::size_t C = shape[0], plane = shape_size(shape) / C;
    std::vector<double> sum(C, 0.0), sq(C, 0.0);
    for (const Tensor& x : inputs) {
      const Activations act = forward(net, weights, x);
      const Tensor& t = act.nodes[in_node];
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = t.data[c * plane + i];
          sum[c] += v;
          sq[c] += v * v;
        }
    }
    const double n = static_cast<double>(inputs.size() * plane);
    const ParamSlot* mean = net.find_slot(li, "running_mean");
    const ParamSlot* var = net.find_slot(li, "running_var");
    for (std::size_t c = 0; c < C; ++c) {
      const double m = sum[c] / n;
      weights[mean->offset + c] = m;
      weights[var->offset + c] = std::max(0.0, sq[c] / n - m * m);
    }
  }
}

// ---------------------------------------------------------------------------
// Classifier

struct ClassifierTrainResult {
  GraphSpec graph;
  std::vector<double> weights;
  PreprocessSpec preprocess;
  std::vector<EpochRecord> history;
};

/// Mean per-class AUC of `weights` on `set` (0.5 when undefined).
inline double evaluate_mean_auc(const Network& net, std::span<const double> weights, const PreprocessSpec& spec,
                                const LabeledSet& set) {
  std::vector<std::vector<double>> scores;
  for (const auto& img : set.images) scores.push_back(forward(net, weights, preprocess(img, spec)).output().data);
  return mean_class_auc(scores, set.labels).value_or(0.5);
}

inline ClassifierTrainResult train_classifier(const LabeledSet& train, const LabeledSet& val, const ClassifierConfig& cfg,
                                              const OptimizerConfig& opt, const AugmentationPolicy& policy,
                                              const PreprocessSpec& spec, const TrainOptions& options = {}) {
  cfg.validate();
  opt.validate();
  policy.validate();
  spec.validate();
  if (train.size() == 0) fail(ErrorCode::InvalidConfig, "empty training set");
  if (spec.target_size != cfg.input_size) fail(ErrorCode::InvalidConfig, "preprocess size differs from classifier input");
  for (const auto& l : train.labels)
    if (static_cast<int>(l.size()) != cfg.num_classes) fail(ErrorCode::InvalidConfig, "label width != num_classes");

  ClassifierTrainResult result{build_classifier(cfg), {}, spec, {}};
  const Network net(result.graph);
  std::vector<double>& w = result.weights;
  w = init_weights(net, options.seed);
  Adam adam(opt, net);
  PlateauScheduler plateau(opt);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t logits = net.node_index(logit_node(net));

  std::vector<Tensor> bn_inputs;
  for (std::size_t i = 0; i < std::min(options.batchnorm_samples, train.size()); ++i)
    bn_inputs.push_back(preprocess(train.images[i], spec));

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    recalibrate_batchnorm(net, w, bn_inputs);
    double epoch_loss = 0.0;
    for (const auto& batch : detail::batches(train.size(), options.batch_size, rng)) {
      std::vector<double> grad;
      const double scale = 1.0 / static_cast<double>(batch.size() * cfg.num_classes);
      for (std::size_t i : batch) {
        const Tensor x = preprocess(augment(train.images[i], policy, rng), spec);
        const Activations act = forward(net, w, x);
        const Tensor& z = act.nodes[logits];
        Tensor seed(z.shape);
        for (std::size_t c = 0; c < z.size(); ++c) {
          const double t = train.labels[i][c];
          epoch_loss += detail::bce_logit(z.data[c], t) * scale;
          seed.data[c] = (sigmoid(z.data[c]) - t) * scale;
        }
        detail::add_into(grad, backward(net, w, act, {{logits, std::move(seed)}}, true).params);
      }
      adam.step(w, grad);
    }
    const double batches = std::ceil(static_cast<double>(train.size()) / options.batch_size);
    epoch_loss /= batches;
    detail::check_finite(epoch_loss, "classifier");
    detail::check_finite(w, "classifier");
    recalibrate_batchnorm(net, w, bn_inputs);
    const double metric = options.validation_metric ? options.validation_metric(epoch)
                          : val.size() ? evaluate_mean_auc(net, w, spec, val)
                                       : 0.5;
    adam.set_lr(adam.lr() * plateau.observe(metric));
    result.history.push_back({epoch, epoch_loss, metric, adam.lr(), 0});
  }
  return result;
}

/// Mean per-class BCE of `weights` over a set, without augmentation.
inline double classifier_loss(const Network& net, std::span<const double> weights, const PreprocessSpec& spec,
                              const LabeledSet& set) {
  const std::size_t logits = net.node_index(logit_node(net));
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Activations act = forward(net, weights, preprocess(set.images[i], spec));
    const Tensor& z = act.nodes[logits];
    for (std::size_t c = 0; c < z.size(); ++c, ++n) total += detail::bce_logit(z.data[c], set.labels[i][c]);
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Autoencoders

struct AutoencoderTrainResult {
  AutoencoderGraphs graphs;
  std::vector<double> encoder_weights;
  std::vector<double> decoder_weights;
  std::vector<EpochRecord> history;
};

/// Mean squared reconstruction error over a set of input tensors.
inline double reconstruction_mse(const Network& enc, std::span<const double> we, const Network& dec,
                                 std::span<const double> wd, const std::vector<Tensor>& data) {
  double total = 0.0;
  for (const Tensor& x : data) {
    Tensor z = forward(enc, we, x).output();
    const Tensor& xh = forward(dec, wd, std::move(z)).output();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (xh.data[i] - x.data[i]) * (xh.data[i] - x.data[i]);
    total += s / static_cast<double>(x.size());
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

/// Trains arbitrary encoder/decoder graphs on mean squared reconstruction
/// error. The decoder output must have the encoder input's shape.
inline AutoencoderTrainResult train_autoencoder_l2(const AutoencoderGraphs& graphs, const std::vector<Tensor>& data,
                                                   const OptimizerConfig& opt, const TrainOptions& options = {}) {
  opt.validate();
  if (data.empty()) fail(ErrorCode::InvalidConfig, "empty training set");
  AutoencoderTrainResult r{graphs, {}, {}, {}};
  const Network enc(graphs.encoder), dec(graphs.decoder);
  if (dec.shape_of(graphs.decoder.outputs.front()) != enc.spec().image_input().shape)
    fail(ErrorCode::InvalidConfig, "decoder output shape differs from encoder input");
  r.encoder_weights = init_weights(enc, options.seed);
  r.decoder_weights = init_weights(dec, options.seed + 1);
  Adam adam_e(opt, enc), adam_d(opt, dec);
  std::mt19937_64 rng(options.seed ^ 0x5bd1e995ULL);
  const std::size_t latent = enc.node_index(graphs.encoder.outputs.front());
  const std::size_t out = dec.node_index(graphs.decoder.outputs.front());

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    double epoch_loss = 0.0;
    const auto all = detail::batches(data.size(), options.batch_size, rng);
    for (const auto& batch : all) {
      std::vector<double> ge, gd;
      double batch_loss = 0.0;
      for (std::size_t i : batch) {
        const Tensor& x = data[i];
        const Activations ea = forward(enc, r.encoder_weights, x);
        const Activations da = forward(dec, r.decoder_weights, ea.nodes[latent]);
        const Tensor& xh = da.nodes[out];
        Tensor seed(xh.shape);
        const double scale = 1.0 / static_cast<double>(x.size() * batch.size());
        for (std::size_t p = 0; p < x.size(); ++p) {
          const double d = xh.data[p] - x.data[p];
          batch_loss += d * d * scale;
          seed.data[p] = 2.0 * d * scale;
        }
        Gradients dg = backward(dec, r.decoder_weights, da, {{out, std::move(seed)}}, true);
        detail::add_into(gd, dg.params);
        detail::add_into(ge, backward(enc, r.encoder_weights, ea, {{latent, std::move(dg.inputs.front())}}, true).params);
      }
      adam_e.step(r.encoder_weights, ge);
      adam_d.step(r.decoder_weights, gd);
      epoch_loss += batch_loss;
    }
    epoch_loss /= static_cast<double>(all.size());
    detail::check_finite(epoch_loss, "autoencoder");
    detail::check_finite(r.encoder_weights, "encoder");
    detail::check_finite(r.decoder_weights, "decoder");
    r.history.push_back({epoch, epoch_loss, -epoch_loss, adam_e.lr(), 0});
  }
  return r;
}

inline std::vector<Tensor> ae_inputs(const std::vector<Image>& images, const PreprocessSpec& spec) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(preprocess(img, spec));
  return out;
}

inline AutoencoderTrainResult train_autoencoder_l2(const std::vector<Image>& images, const AutoencoderConfig& cfg,
                                                   const OptimizerConfig& opt, const TrainOptions& options = {}) {
  cfg.validate();
  PreprocessSpec spec{cfg.input_size, 0.0, 1.0, true};
  return train_autoencoder_l2(build_autoencoder(cfg), ae_inputs(images, spec), opt, options);
}

/// Smoothed discriminator targets: real pairs in [0.7, 1.1], generated
/// pairs in [-0.1, 0.3].
struct LabelSmoothing {
  double real_lo = 0.7, real_hi = 1.1;
  double fake_lo = -0.1, fake_hi = 0.3;

  double real(std::mt19937_64& rng) const { return std::uniform_real_distribution<double>(real_lo, real_hi)(rng); }
  double fake(std::mt19937_64& rng) const { return std::uniform_real_distribution<double>(fake_lo, fake_hi)(rng); }
};

struct AdversarialOptions {
  LabelSmoothing smoothing;
  /// Generator update skipped when the discriminator's batch accuracy falls
  /// below this value.
  double halt_threshold = 0.3;
  /// Weight of the pixel reconstruction term in the encoder/decoder loss.
  double reconstruction_weight = 1.0;
  DiscriminatorConfig discriminator;
};

inline bool should_halt_generator(double discriminator_accuracy, double halt_threshold) {
  return discriminator_accuracy < halt_threshold;
}

struct AdversarialTrainResult {
  AutoencoderTrainResult autoencoder;
  GraphSpec discriminator;
  std::vector<double> discriminator_weights;
};

/// Encoder pairs (x, E(x)) are "real", decoder pairs (G(z), z) with
/// z ~ N(0, I) are "generated". The discriminator learns to tell them apart
/// with smoothed targets; encoder and decoder learn to swap its verdicts
/// (pulling E(x) toward the prior) plus a weighted reconstruction loss.
inline AdversarialTrainResult train_adversarial(const AutoencoderGraphs& graphs, const GraphSpec& disc_graph,
                                                const std::vector<Tensor>& data, const OptimizerConfig& opt,
                                                const AdversarialOptions& adv, const TrainOptions& options = {}) {
  opt.validate();
  if (data.empty()) fail(ErrorCode::InvalidConfig, "empty training set");
  AdversarialTrainResult r;
  r.autoencoder.graphs = graphs;
  r.discriminator = disc_graph;
  const Network enc(graphs.encoder), dec(graphs.decoder), disc(disc_graph);
  if (disc.input_count() != 2 || disc.node_shape(0) != enc.node_shape(0) ||
      disc.node_shape(1) != dec.node_shape(0))
    fail(ErrorCode::InvalidConfig, "discriminator must take (image, latent) matching the autoencoder");
  auto& we = r.autoencoder.encoder_weights;
  auto& wd = r.autoencoder.decoder_weights;
  auto& wdisc = r.discriminator_weights;
  we = init_weights(enc, options.seed);
  wd = init_weights(dec, options.seed + 1);
  wdisc = init_weights(disc, options.seed + 2);
  Adam adam_e(opt, enc), adam_d(opt, dec), adam_disc(opt, disc);
  std::mt19937_64 rng(options.seed ^ 0xa1b2c3d4e5f60718ULL);
  std::normal_distribution<double> prior(0.0, 1.0);
  const std::size_t latent = enc.node_index(graphs.encoder.outputs.front());
  const std::size_t out = dec.node_index(graphs.decoder.outputs.front());
  const std::size_t logit = disc.node_index(disc_graph.outputs.front());
  const Shape latent_shape = dec.node_shape(0);

  auto logit_seed = [&](double g) { return Tensor({1}, std::vector<double>{g}); };

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    double epoch_loss = 0.0;
    int skipped = 0;
    const auto all = detail::batches(data.size(), options.batch_size, rng);
    for (const auto& batch : all) {
      std::vector<double> g_disc, g_enc, g_dec;
      int correct = 0;
      const double scale = 1.0 / static_cast<double>(batch.size());
      double gen_loss = 0.0;
      for (std::size_t i : batch) {
        const Tensor& x = data[i];
        const Activations ea = forward(enc, we, x);
        Tensor z(latent_shape);
        for (double& v : z.data) v = prior(rng);
        const Activations da = forward(dec, wd, z);
        const Activations d_real = forward(disc, wdisc, {x, ea.nodes[latent]});
        const Activations d_fake = forward(disc, wdisc, {da.nodes[out], z});
        const double lr_ = d_real.nodes[logit].data[0], lf = d_fake.nodes[logit].data[0];
        correct += (lr_ > 0) + (lf < 0);

        const double t_real = adv.smoothing.real(rng), t_fake = adv.smoothing.fake(rng);
        epoch_loss += (detail::bce_logit(lr_, t_real) + detail::bce_logit(lf, t_fake)) * scale;
        detail::add_into(g_disc, backward(disc, wdisc, d_real, {{logit, logit_seed((sigmoid(lr_) - t_real) * scale)}}, true).params);
        detail::add_into(g_disc, backward(disc, wdisc, d_fake, {{logit, logit_seed((sigmoid(lf) - t_fake) * scale)}}, true).params);

        // encoder wants its pairs judged generated; decoder wants its pairs judged real
        gen_loss += (detail::bce_logit(lr_, 0.0) + detail::bce_logit(lf, 1.0)) * scale;
        Gradients gr = backward(disc, wdisc, d_real, {{logit, logit_seed(sigmoid(lr_) * scale)}});
        Gradients gf = backward(disc, wdisc, d_fake, {{logit, logit_seed((sigmoid(lf) - 1.0) * scale)}});
        Tensor enc_seed = std::move(gr.inputs[1]);
        detail::add_into(g_dec, backward(dec, wd, da, {{out, std::move(gf.inputs[0])}}, true).params);

        if (adv.reconstruction_weight > 0.0) {
          const Activations ra = forward(dec, wd, ea.nodes[latent]);
          const Tensor& xh = ra.nodes[out];
          Tensor seed(xh.shape);
          const double k = adv.reconstruction_weight * scale / static_cast<double>(x.size());
          for (std::size_t p = 0; p < x.size(); ++p) {
            const double d = xh.data[p] - x.data[p];
            gen_loss += d * d * k;
            seed.data[p] = 2.0 * d * k;
          }
          Gradients rg = backward(dec, wd, ra, {{out, std::move(seed)}}, true);
          detail::add_into(g_dec, rg.params);
          for (std::size_t p = 0; p < enc_seed.size(); ++p) enc_seed.data[p] += rg.inputs[0].data[p];
        }
        detail::add_into(g_enc, backward(enc, we, ea, {{latent, std::move(enc_seed)}}, true).params);
      }
      detail::check_finite(gen_loss, "generator");
      adam_disc.step(wdisc, g_disc);
      const double accuracy = correct / (2.0 * static_cast<double>(batch.size()));
      if (should_halt_generator(accuracy, adv.halt_threshold)) {
        ++skipped;
      } else {
        adam_e.step(we, g_enc);
        adam_d.step(wd, g_dec);
      }
    }
    epoch_loss /= static_cast<double>(all.size());
    detail::check_finite(epoch_loss, "discriminator");
    detail::check_finite(we, "encoder");
    detail::check_finite(wd, "decoder");
    detail::check_finite(wdisc, "discriminator");
    r.autoencoder.history.push_back({epoch, epoch_loss, 0.0, adam_e.lr(), skipped});
  }
  return r;
}

inline AdversarialTrainResult train_adversarial(const std::vector<Image>& images, const AutoencoderConfig& cfg,
                                                const OptimizerConfig& opt, AdversarialOptions adv = {},
                                                const TrainOptions& options = {}) {
  cfg.validate();
  adv.discriminator.input_size = cfg.input_size;
  adv.discriminator.latent_dim = cfg.latent_dim;
  PreprocessSpec spec{cfg.input_size, 0.0, 1.0, true};
  return train_adversarial(build_autoencoder(cfg), build_discriminator(adv.discriminator), ae_inputs(images, spec), opt,
                           adv, options);
}

}  // namespace xray
