#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "test_util.hpp"
#include "xray/augment.hpp"
#include "xray/phantom.hpp"
#include "xray/train.hpp"

using namespace xray;
using namespace xray::layers;
using testutil::code_of;

namespace {

AutoencoderGraphs dense_autoencoder(std::size_t h, std::size_t w, std::size_t latent) {
  AutoencoderGraphs g;
  g.encoder.inputs = {{"image", {1, h, w}}};
  g.encoder.layers = {dense("latent", {latent})};
  g.encoder.outputs = {"latent"};
  g.decoder.inputs = {{"z", {latent}}};
  g.decoder.layers = {dense("reconstruction", {1, h, w})};
  g.decoder.outputs = {"reconstruction"};
  return g;
}

GraphSpec pair_discriminator(std::size_t h, std::size_t w, std::size_t latent) {
  GraphSpec d;
  d.inputs = {{"image", {1, h, w}}, {"latent", {latent}}};
  d.layers = {dense("fx", {8}, {"image"}), dense("fz", {8}, {"latent"}), simple("cat", LayerKind::concat, {"fx", "fz"}),
              simple("act", LayerKind::relu), dense("logit", {1})};
  d.outputs = {"logit"};
  return d;
}

std::vector<Tensor> random_tensors(std::mt19937_64& rng, std::size_t n, Shape shape) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(shape);
    for (double& v : t.data) v = u(rng);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST(Augment, IdentityPolicyReturnsInput) {
  std::mt19937_64 rng(1);
  const Image img = testutil::random_image(rng, 9, 7);
  EXPECT_EQ(augment(img, AugmentationPolicy{}, rng), img);
  EXPECT_EQ(apply_affine(img, AffineParams{}), img);
}

TEST(Augment, QuarterTurnPermutesPixels) {
  Image img(2, 2, 1);
  img.data = {1, 2, 3, 4};  // [[a, b], [c, d]]
  const Image r = apply_affine(img, {90.0, 0.0, 0.0, 1.0});
  const std::vector<double> expected = {2, 4, 1, 3};  // [[b, d], [a, c]]
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.data[i], expected[i], 1e-12);
}

TEST(Augment, IntegerTranslationShiftsAndZeroFills) {
  Image img(4, 1, 1);
  img.data = {1, 2, 3, 4};
  const Image r = apply_affine(img, {0.0, 1.0, 0.0, 1.0});
  EXPECT_EQ(r.data, (std::vector<double>{0, 1, 2, 3}));
}

TEST(Augment, SampledParametersStayInRange) {
  const AugmentationPolicy p{20.0, 0.1, 0.2};
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    const AffineParams a = sample_affine(p, rng, 50, 40);
    ASSERT_LE(std::abs(a.angle_deg), 20.0);
    ASSERT_LE(std::abs(a.tx), 5.0);
    ASSERT_LE(std::abs(a.ty), 4.0);
    ASSERT_GE(a.scale, 0.8);
    ASSERT_LE(a.scale, 1.2);
  }
  EXPECT_EQ(code_of([] { AugmentationPolicy{-1.0, 0.0, 0.0}.validate(); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { AugmentationPolicy{0.0, 1.0, 0.0}.validate(); }), ErrorCode::InvalidConfig);
}

TEST(Phantom, DeterministicForSeed) {
  const auto a = gen_phantom(5, {1, 0, 1}), b = gen_phantom(5, {1, 0, 1}), c = gen_phantom(6, {1, 0, 1});
  EXPECT_EQ(a.image, b.image);
  EXPECT_NE(a.image, c.image);
  for (double v : a.image.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Phantom, LesionBrightensItsSite) {
  for (int c = 0; c < 4; ++c) {
    std::vector<int> off(4, 0), on = off;
    on[c] = 1;
    const Image a = gen_phantom(9, off).image, b = gen_phantom(9, on).image;
    const BlobSite s = nominal_blob_site(c, 4, 64);
    const int x = static_cast<int>(s.x), y = static_cast<int>(s.y);
    EXPECT_GT(b.at(x, y) - a.at(x, y), 0.15) << c;
    EXPECT_NEAR(b.at(2, 2), a.at(2, 2), 1e-12);
  }
}

TEST(Phantom, DatasetIsBalancedAndRoundTrips) {
  const DatasetManifest m = make_dataset(3, 1000, {"a", "b", "c"});
  for (std::size_t c = 0; c < 3; ++c) {
    double pos = 0;
    for (const auto& s : m.samples) pos += s.flags[c];
    EXPECT_GE(pos / 1000, 0.45);
    EXPECT_LE(pos / 1000, 0.55);
  }
  const DatasetManifest back = DatasetManifest::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_EQ(back.sample(17).image, m.sample(17).image);
}

TEST(Phantom, OodFamilies) {
  for (double v : gen_ood(1, OodFamily::blank, 16).data) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(gen_ood(4, OodFamily::noise, 16), gen_ood(4, OodFamily::noise, 16));
  EXPECT_EQ(ood_family_from_string("stripes"), OodFamily::stripes);
  EXPECT_EQ(code_of([] { ood_family_from_string("plaid"); }), ErrorCode::InvalidConfig);
}

TEST(Split, PartitionsIndices) {
  const DatasetSplit s = split_dataset(100, 4);
  EXPECT_EQ(s.train.size(), 70u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 20u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(split_dataset(100, 4).test, s.test);
}

TEST(Plateau, DecaysAfterPatience) {
  OptimizerConfig cfg;
  cfg.plateau_patience = 2;
  PlateauScheduler p(cfg);
  EXPECT_EQ(p.observe(0.7), 1.0);
  EXPECT_EQ(p.observe(0.7), 1.0);
  EXPECT_EQ(p.observe(0.69), 0.1);
  EXPECT_EQ(p.observe(0.8), 1.0);
}

namespace {

LabeledSet bright_dark_set(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.02);
  LabeledSet s;
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    Image img(size, size, 1, y ? 0.75 : 0.25);
    for (double& v : img.data) v = std::clamp(v + noise(rng), 0.0, 1.0);
    s.images.push_back(std::move(img));
    s.labels.push_back({y});
  }
  return s;
}

ClassifierConfig toy_classifier() {
  ClassifierConfig c;
  c.input_size = 16;
  c.num_classes = 1;
  c.stem_channels = 4;
  c.growth_rate = 2;
  c.block_layers = {1, 1};
  return c;
}

}  // namespace

TEST(TrainClassifier, LearnsSeparableToy) {
  const LabeledSet train = bright_dark_set(32, 16, 1), val = bright_dark_set(16, 16, 2);
  OptimizerConfig opt;
  opt.lr = 1e-2;
  TrainOptions o;
  o.epochs = 6;
  o.batch_size = 8;
  const auto r = train_classifier(train, val, toy_classifier(), opt, {}, {16, 0.5, 0.25, true}, o);
  ASSERT_EQ(r.history.size(), 6u);
  EXPECT_EQ(r.history.back().val_metric, 1.0);
  const Network net(r.graph);
  EXPECT_LT(classifier_loss(net, r.weights, r.preprocess, val), std::log(2.0));
}

TEST(TrainClassifier, PlateauCutsLearningRate) {
  const LabeledSet train = bright_dark_set(8, 16, 3);
  OptimizerConfig opt;
  opt.plateau_patience = 1;
  TrainOptions o;
  o.epochs = 2;
  o.validation_metric = [](int) { return 0.5; };
  const auto r = train_classifier(train, {}, toy_classifier(), opt, {}, {16, 0.5, 0.25, true}, o);
  EXPECT_DOUBLE_EQ(r.history[0].lr, 1e-3);
  EXPECT_DOUBLE_EQ(r.history[1].lr, 1e-4);
}

TEST(TrainClassifier, RejectsBadInputs) {
  OptimizerConfig opt;
  EXPECT_EQ(code_of([&] { train_classifier({}, {}, toy_classifier(), opt, {}, {16, 0.5, 0.25, true}); }),
            ErrorCode::InvalidConfig);
  const LabeledSet train = bright_dark_set(4, 16, 4);
  EXPECT_EQ(code_of([&] { train_classifier(train, {}, toy_classifier(), opt, {}, {32, 0.5, 0.25, true}); }),
            ErrorCode::InvalidConfig);
}

TEST(TrainAutoencoder, ConstantImagesAreLearned) {
  std::vector<Tensor> data(16, Tensor({1, 4, 4}, 0.6));
  OptimizerConfig opt;
  opt.lr = 1e-2;
  TrainOptions o;
  o.epochs = 150;
  o.batch_size = 4;
  const auto r = train_autoencoder_l2(dense_autoencoder(4, 4, 2), data, opt, o);
  const Network enc(r.graphs.encoder), dec(r.graphs.decoder);
  EXPECT_LT(reconstruction_mse(enc, r.encoder_weights, dec, r.decoder_weights, data), 1e-3);
  EXPECT_LT(r.history.back().loss, r.history.front().loss);
}

TEST(TrainAutoencoder, TwoPixelIdentity) {
  std::mt19937_64 rng(5);
  const auto data = random_tensors(rng, 64, {1, 1, 2});
  OptimizerConfig opt;
  opt.lr = 1e-2;
  TrainOptions o;
  o.epochs = 200;
  o.batch_size = 16;
  const auto r = train_autoencoder_l2(dense_autoencoder(1, 2, 2), data, opt, o);
  const Network enc(r.graphs.encoder), dec(r.graphs.decoder);
  EXPECT_LT(reconstruction_mse(enc, r.encoder_weights, dec, r.decoder_weights, data), 1e-4);
}

TEST(TrainAutoencoder, EmptySetAndShapeErrors) {
  OptimizerConfig opt;
  EXPECT_EQ(code_of([&] { train_autoencoder_l2(dense_autoencoder(2, 2, 2), {}, opt); }), ErrorCode::InvalidConfig);
  auto g = dense_autoencoder(2, 2, 2);
  g.decoder.layers[0].out_shape = {1, 2, 3};
  EXPECT_EQ(code_of([&] { train_autoencoder_l2(g, {Tensor({1, 2, 2})}, opt); }), ErrorCode::InvalidConfig);
}

TEST(Adversarial, SmoothingRanges) {
  const LabelSmoothing s;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 10000; ++i) {
    const double r = s.real(rng), f = s.fake(rng);
    ASSERT_GE(r, 0.7);
    ASSERT_LE(r, 1.1);
    ASSERT_GE(f, -0.1);
    ASSERT_LE(f, 0.3);
  }
}

TEST(Adversarial, HaltRule) {
  EXPECT_TRUE(should_halt_generator(0.29, 0.3));
  EXPECT_FALSE(should_halt_generator(0.3, 0.3));
  EXPECT_FALSE(should_halt_generator(0.9, 0.3));
}

TEST(Adversarial, HaltedGeneratorKeepsInitialWeights) {
  std::mt19937_64 rng(7);
  const auto data = random_tensors(rng, 16, {1, 3, 3});
  AdversarialOptions adv;
  adv.halt_threshold = 1.01;
  TrainOptions o;
  o.epochs = 2;
  o.batch_size = 4;
  const auto g = dense_autoencoder(3, 3, 2);
  const auto r = train_adversarial(g, pair_discriminator(3, 3, 2), data, OptimizerConfig::adversarial(), adv, o);
  EXPECT_EQ(r.autoencoder.encoder_weights, init_weights(Network(g.encoder), o.seed));
  EXPECT_EQ(r.autoencoder.history[0].skipped_generator_steps, 4);
  EXPECT_NE(r.discriminator_weights, init_weights(Network(r.discriminator), o.seed + 2));
}

TEST(Adversarial, TrainingIsDeterministicAndPullsLatentsTowardPrior) {
  std::mt19937_64 rng(8);
  auto data = random_tensors(rng, 32, {1, 3, 3});
  // inputs far from the origin give an encoder whose initial latents are large
  for (auto& t : data)
    for (double& v : t.data) v = 4.0 + v;
  TrainOptions o;
  o.epochs = 30;
  o.batch_size = 8;
  const auto g = dense_autoencoder(3, 3, 2);
  AdversarialOptions adv;
  adv.reconstruction_weight = 0.0;
  adv.halt_threshold = 0.0;
  const auto a = train_adversarial(g, pair_discriminator(3, 3, 2), data, OptimizerConfig::adversarial(), adv, o);
  const auto b = train_adversarial(g, pair_discriminator(3, 3, 2), data, OptimizerConfig::adversarial(), adv, o);
  EXPECT_EQ(a.autoencoder.encoder_weights, b.autoencoder.encoder_weights);

  const Network enc(g.encoder);
  auto mean_norm = [&](std::span<const double> w) {
    double s = 0.0;
    for (const auto& x : data) {
      const auto z = forward(enc, w, x).output().data;
      s += std::hypot(z[0], z[1]);
    }
    return s / data.size();
  };
  const double before = mean_norm(init_weights(enc, o.seed)), after = mean_norm(a.autoencoder.encoder_weights);
  EXPECT_LT(std::abs(after - std::sqrt(2.0)), std::abs(before - std::sqrt(2.0)));
}
