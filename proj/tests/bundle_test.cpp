#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "xray/bundle.hpp"

using namespace xray;
using testutil::code_of;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Bundle, RoundTripQuantizesWeightsToFloat32) {
  const ModelBundle b = testutil::tiny_bundle(3, true);
  const ModelBundle back = load_bundle(save_bundle(b));
  EXPECT_EQ(back.graph, b.graph);
  EXPECT_EQ(back.class_names, b.class_names);
  EXPECT_EQ(back.operating_points, b.operating_points);
  EXPECT_EQ(back.preprocess, b.preprocess);
  EXPECT_EQ(back.fixtures, b.fixtures);
  EXPECT_EQ(back.weights, quantize_f32(b.weights));
  ASSERT_TRUE(back.ood);
  EXPECT_EQ(back.ood->encoder_weights, quantize_f32(b.ood->encoder_weights));
  EXPECT_EQ(back.ood->threshold, b.ood->threshold);
  EXPECT_EQ(back.ood->metric, b.ood->metric);
}

TEST(Bundle, SaveLoadSaveIsByteIdentical) {
  const ModelBundle b = testutil::tiny_bundle(2, true);
  testutil::TempDir d1("b1"), d2("b2");
  write_bundle(b, d1.path);
  write_bundle(read_bundle(d1.path), d2.path);
  for (const char* f : {"manifest.json", "weights.bin", "fixtures/fixture_0.png", "fixtures/fixture_2.png"})
    EXPECT_EQ(slurp(d1.path / f), slurp(d2.path / f)) << f;
}

TEST(Bundle, WeightsAreLittleEndianFloat32) {
  ModelBundle b = testutil::tiny_bundle(1);
  b.weights[0] = 1.0;
  const BundleFiles f = save_bundle(b);
  ASSERT_EQ(f.weights.size(), 4 * b.weights.size());
  const std::vector<std::uint8_t> one = {0x00, 0x00, 0x80, 0x3f};
  EXPECT_EQ(std::vector<std::uint8_t>(f.weights.begin(), f.weights.begin() + 4), one);
}

TEST(Bundle, VersionMismatch) {
  BundleFiles f = save_bundle(testutil::tiny_bundle());
  auto m = nlohmann::json::parse(f.manifest);
  m["format_version"] = 99;
  f.manifest = m.dump();
  EXPECT_EQ(code_of([&] { load_bundle(f); }), ErrorCode::VersionMismatch);
}

TEST(Bundle, TruncatedWeights) {
  BundleFiles f = save_bundle(testutil::tiny_bundle());
  f.weights.resize(f.weights.size() - 4);
  EXPECT_EQ(code_of([&] { load_bundle(f); }), ErrorCode::WeightCountMismatch);
}

TEST(Bundle, CorruptManifest) {
  BundleFiles f = save_bundle(testutil::tiny_bundle());
  const BundleFiles good = f;
  f.manifest = f.manifest.substr(0, f.manifest.size() / 2);
  EXPECT_EQ(code_of([&] { load_bundle(f); }), ErrorCode::CorruptManifest);
  f = good;
  auto m = nlohmann::json::parse(f.manifest);
  m.erase("class_names");
  f.manifest = m.dump();
  EXPECT_EQ(code_of([&] { load_bundle(f); }), ErrorCode::CorruptManifest);
  f = good;
  f.fixtures.clear();
  EXPECT_EQ(code_of([&] { load_bundle(f); }), ErrorCode::CorruptManifest);
}

TEST(Bundle, MissingDirectory) {
  EXPECT_EQ(code_of([] { read_bundle("/nonexistent/xray/bundle"); }), ErrorCode::BundleLoadFailure);
}

TEST(Bundle, OperatingPointsOutsideUnitIntervalAreRejected) {
  ModelBundle b = testutil::tiny_bundle();
  b.operating_points[1] = 1.0;
  EXPECT_EQ(code_of([&] { save_bundle(b); }), ErrorCode::InvalidOperatingPoint);
}

TEST(Verify, PassesAfterRoundTrip) {
  const ModelBundle b = testutil::tiny_bundle(4);
  const ModelBundle back = load_bundle(save_bundle(b));
  const DiffReport r = verify_bundle(back);
  EXPECT_LE(r.max_abs_diff, bundle_verify_tolerance);
  EXPECT_EQ(r.entry_count(), 3u * 4u);
  EXPECT_EQ(r.per_class_differences.size(), 4u);
}

TEST(Verify, FailsWhenWeightsArePerturbed) {
  ModelBundle b = load_bundle(save_bundle(testutil::tiny_bundle(3)));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e-2, 1e-2);
  for (double& w : b.weights) w += u(rng) + (w >= 0 ? 1e-2 : -1e-2);
  EXPECT_GT(verify_bundle(b).max_abs_diff, bundle_verify_tolerance);
}

TEST(Verify, LogitNodeFeedsTheSigmoid) {
  const ModelBundle b = testutil::tiny_bundle();
  const Network net(b.graph);
  EXPECT_EQ(net.shape_of(logit_node(net)), (Shape{3}));
}
