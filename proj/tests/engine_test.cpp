#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "xray/builders.hpp"
#include "xray/engine.hpp"
#include "xray/graph.hpp"

using namespace xray;
using namespace xray::layers;

namespace {

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

GraphSpec one_layer(Shape in, LayerSpec l) {
  GraphSpec g;
  g.inputs.push_back({"x", std::move(in)});
  g.outputs = {l.name};
  g.layers.push_back(std::move(l));
  return g;
}

}  // namespace

TEST(Forward, Relu) {
  const Network net(one_layer({2}, simple("r", LayerKind::relu)));
  EXPECT_EQ(forward(net, {}, Tensor({2}, {-1.0, 2.0})).output().data, (std::vector<double>{0.0, 2.0}));
}

TEST(Forward, PointwiseConvOnConstant) {
  const Network net(one_layer({1, 3, 3}, conv2d("c", 1, 1)));
  const std::vector<double> w = {2.0, 0.0};
  for (double v : forward(net, w, Tensor({1, 3, 3}, 0.5)).output().data) EXPECT_EQ(v, 1.0);
}

TEST(Forward, HandConvolution3x3) {
  const Network net(one_layer({1, 4, 4}, conv2d("c", 1, 3, 1, 1)));
  // kernel rows [1 0 -1; 2 0 -2; 1 0 -1] (Sobel-x), bias 0.5
  const std::vector<double> w = {1, 0, -1, 2, 0, -2, 1, 0, -1, 0.5};
  std::vector<double> img(16);
  for (int i = 0; i < 16; ++i) img[i] = i + 1;  // rows 1..4, 5..8, ...
  const Tensor y = forward(net, w, Tensor({1, 4, 4}, img)).output();
  // cross-correlation with zero padding
  const std::vector<double> expected = {-9.5,  -5.5, -5.5, 13.5,   //
                                        -23.5, -7.5, -7.5, 28.5,   //
                                        -39.5, -7.5, -7.5, 44.5,   //
                                        -37.5, -5.5, -5.5, 41.5};
  for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(y.data[i], expected[i]) << i;
}

TEST(Forward, StridedConvShape) {
  const Network net(one_layer({2, 7, 6}, conv2d("c", 3, 3, 2, 1)));
  EXPECT_EQ(net.shape_of("c"), (Shape{3, 4, 3}));
}

TEST(Forward, Deterministic) {
  std::mt19937_64 rng(1);
  const auto g = oracle::random_graph(LayerKind::batchnorm, rng);
  const Network net(g.spec);
  EXPECT_EQ(forward(net, g.weights, g.input).output(), forward(net, g.weights, g.input).output());
}

TEST(Forward, ShapeAndWeightErrors) {
  const Network net(one_layer({1, 3, 3}, conv2d("c", 1, 1)));
  const std::vector<double> w = {1.0, 0.0};
  EXPECT_EQ(code_of([&] { forward(net, w, Tensor({1, 3, 4})); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { forward(net, std::vector<double>{1.0}, Tensor({1, 3, 3})); }), ErrorCode::MissingWeights);
}

TEST(Graph, ValidationErrors) {
  GraphSpec g = one_layer({2}, simple("r", LayerKind::relu, {"nope"}));
  EXPECT_EQ(code_of([&] { Network{g}; }), ErrorCode::InvalidConfig);
  GraphSpec cat;
  cat.inputs = {{"a", {1, 2, 2}}, {"b", {1, 3, 2}}};
  cat.layers = {simple("c", LayerKind::concat, {"a", "b"})};
  cat.outputs = {"c"};
  EXPECT_EQ(code_of([&] { Network{cat}; }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { layer_kind_from_string("lstm"); }), ErrorCode::UnsupportedLayer);
}

TEST(Graph, JsonRoundTrip) {
  const GraphSpec g = build_classifier({});
  EXPECT_EQ(graph_from_json(to_json(g)), g);
}

TEST(Graph, ConcatIsAChannelPermutation) {
  GraphSpec g;
  g.inputs = {{"a", {2, 2, 2}}, {"b", {3, 2, 2}}};
  g.layers = {simple("c", LayerKind::concat, {"b", "a"})};
  g.outputs = {"c"};
  const Network net(g);
  Tensor a({2, 2, 2}), b({3, 2, 2});
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = 100 + i;
  for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = 200 + i;
  const Tensor y = forward(net, {}, {a, b}).output();
  ASSERT_EQ(y.shape, (Shape{5, 2, 2}));
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < 4; ++i) {
      const double expect = c < 3 ? b.data[c * 4 + i] : a.data[(c - 3) * 4 + i];
      EXPECT_EQ(y.data[c * 4 + i], expect);
    }
}

TEST(GradInput, DenseRowIsGradient) {
  const Network net(one_layer({4}, dense("d", {3})));
  std::vector<double> w = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 0, 0, 0};
  const Tensor x({4}, {0.3, -0.2, 0.5, 1.0});
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor g = grad_input(net, w, x, "d", OutputIndex::unit(i));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(g.data[j], w[i * 4 + j]);
  }
}

TEST(GradInput, ZeroWiredPixelHasZeroGradient) {
  const Network net(one_layer({3}, dense("d", {2})));
  const std::vector<double> w = {1, 0, 2, -1, 0, 3, 0, 0};
  const Tensor g = grad_input(net, w, Tensor({3}, {1, 1, 1}), "d", OutputIndex::all());
  EXPECT_EQ(g.data[1], 0.0);
}

TEST(GradInput, BadOutputIndex) {
  const Network net(one_layer({3}, dense("d", {2})));
  const std::vector<double> w(8, 1.0);
  EXPECT_EQ(code_of([&] { grad_input(net, w, Tensor({3}), "d", OutputIndex::unit(2)); }), ErrorCode::BadClassIndex);
}

TEST(GradInput, UnsupportedKindRaises) {
  GraphSpec g = one_layer({2}, simple("r", LayerKind::relu));
  g.layers[0].kind = static_cast<LayerKind>(99);
  // shape inference already refuses it; the engine must too
  EXPECT_EQ(code_of([&] { Network{g}; }), ErrorCode::UnsupportedLayer);
}

TEST(GradInput, LinearityOverOutputs) {
  std::mt19937_64 rng(11);
  for (LayerKind k : all_layer_kinds) {
    const auto g = oracle::random_graph(k, rng);
    const Network net(g.spec);
    const Tensor g0 = grad_input(net, g.weights, g.input, "out", OutputIndex::unit(0));
    const Tensor g1 = grad_input(net, g.weights, g.input, "out", OutputIndex::unit(1));
    const Tensor g2 = grad_input(net, g.weights, g.input, "out", OutputIndex::unit(2));
    const Tensor ga = grad_input(net, g.weights, g.input, "out", OutputIndex::all());
    for (std::size_t i = 0; i < ga.size(); ++i)
      EXPECT_NEAR(ga.data[i], g0.data[i] + g1.data[i] + g2.data[i], 1e-12) << to_string(k);
  }
}

class FiniteDifference : public ::testing::TestWithParam<LayerKind> {};

TEST_P(FiniteDifference, MatchesCentralDifferences) {
  std::mt19937_64 rng(100 + static_cast<int>(GetParam()));
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = oracle::random_graph(GetParam(), rng);
    const Network net(g.spec);
    const OutputIndex which = trial % 2 ? OutputIndex::all() : OutputIndex::unit(trial % 3);
    const auto r = oracle::check_gradient(net, g.weights, g.input, "out", which, 1e-4, 1e-3, g.kinks);
    EXPECT_LE(r.max_rel_error, 1e-4);
    EXPECT_GT(r.checked, r.skipped);
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, FiniteDifference, ::testing::ValuesIn(all_layer_kinds),
                         [](const auto& info) { return to_string(info.param); });

TEST(ParamGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto g = oracle::random_graph(LayerKind::batchnorm, rng);
  const Network net(g.spec);
  const Activations act = forward(net, g.weights, g.input);
  const std::size_t out = net.node_index("out");
  const Gradients grads = backward(net, g.weights, act, {{out, output_seed(net, out, OutputIndex::all())}}, true);
  for (const auto& slot : net.slots()) {
    if (!slot.trainable) continue;
    for (std::size_t i = 0; i < slot.size(); ++i) {
      std::vector<double> wp = g.weights, wm = g.weights;
      wp[slot.offset + i] += 1e-5;
      wm[slot.offset + i] -= 1e-5;
      const double fd = (oracle::scalar_output(net, wp, g.input, "out", OutputIndex::all()) -
                         oracle::scalar_output(net, wm, g.input, "out", OutputIndex::all())) /
                        2e-5;
      EXPECT_LE(oracle::rel_error(grads.params[slot.offset + i], fd, 1e-3), 1e-5);
    }
  }
}

TEST(Builders, ClassifierShapesAndSigmoidRange) {
  ClassifierConfig cfg;
  const Network net(build_classifier(cfg));
  EXPECT_EQ(net.shape_of("probs"), (Shape{14}));
  const auto w = init_weights(net, 3);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  Tensor x({1, 32, 32});
  for (double& v : x.data) v = n(rng);
  for (double p : forward(net, w, x).output().data) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Builders, AutoencoderAndDiscriminatorShapes) {
  AutoencoderConfig cfg;
  cfg.latent_dim = 64;
  const auto ae = build_autoencoder(cfg);
  const Network enc(ae.encoder), dec(ae.decoder);
  EXPECT_EQ(enc.shape_of("latent"), (Shape{64}));
  EXPECT_EQ(dec.shape_of("reconstruction"), (Shape{1, 64, 64}));
  DiscriminatorConfig dc;
  dc.latent_dim = 64;
  const Network disc(build_discriminator(dc));
  EXPECT_EQ(disc.shape_of("logit"), (Shape{1}));
  cfg.latent_dim = 100;
  EXPECT_EQ(code_of([&] { build_autoencoder(cfg); }), ErrorCode::InvalidConfig);
}
