#pragma once

// Portable model bundle: a canonical manifest.json (graphs, layouts, class
// names, operating points, preprocessing, OOD gate) plus weights.bin
// (little-endian float32, no header) and the fixture images used for
// round-trip verification.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xray/diff_report.hpp"
#include "xray/engine.hpp"
#include "xray/error.hpp"
#include "xray/graph.hpp"
#include "xray/image.hpp"
#include "xray/ood_metric.hpp"

namespace xray {

inline constexpr int bundle_format_version = 1;
inline constexpr double bundle_verify_tolerance = 1e-5;

struct OodModel {
  GraphSpec encoder;
  GraphSpec decoder;
  std::vector<double> encoder_weights;
  std::vector<double> decoder_weights;
  PreprocessSpec preprocess{64, 0.0, 1.0, true};
  OodMetricKind metric = OodMetricKind::ssim;
  double threshold = 0.0;
  std::vector<double> latent_reference;  // empty: distance from the prior mean 0

  friend bool operator==(const OodModel&, const OodModel&) = default;
};

/// An image shipped with the bundle plus the probabilities the in-memory
/// model produced for it before serialization.
struct Fixture {
  std::string name;
  Image image;
  std::vector<double> reference;

  friend bool operator==(const Fixture&, const Fixture&) = default;
};

struct ModelBundle {
  int format_version = bundle_format_version;
  GraphSpec graph;
  std::vector<double> weights;
  PreprocessSpec preprocess{32, 0.5, 0.25, true};
  std::vector<std::string> class_names;
  std::vector<double> operating_points;
  std::optional<OodModel> ood;
  std::vector<Fixture> fixtures;

  void validate() const {
    const Network net(graph);
    if (weights.size() != net.param_count())
      fail(ErrorCode::WeightCountMismatch, "classifier expects " + std::to_string(net.param_count()) + " weights, has " +
                                               std::to_string(weights.size()));
    preprocess.validate();
    const std::size_t classes = shape_size(net.shape_of(graph.outputs.front()));
    if (class_names.size() != classes)
      fail(ErrorCode::InvalidConfig, "class_names size does not match classifier output");
    if (operating_points.size() != classes)
      fail(ErrorCode::InvalidConfig, "need one operating point per class");
    for (double op : operating_points)
      if (!(op > 0.0 && op < 1.0)) fail(ErrorCode::InvalidOperatingPoint, "operating points must lie in (0,1)");
    if (ood) {
      const Network enc(ood->encoder), dec(ood->decoder);
      if (ood->encoder_weights.size() != enc.param_count() || ood->decoder_weights.size() != dec.param_count())
        fail(ErrorCode::WeightCountMismatch, "autoencoder weight count mismatch");
      ood->preprocess.validate();
    }
    for (const auto& f : fixtures)
      if (f.reference.size() != classes) fail(ErrorCode::InvalidConfig, "fixture '" + f.name + "' reference size");
  }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// In-memory form of the on-disk container.
struct BundleFiles {
  std::string manifest;
  std::vector<std::uint8_t> weights;
  std::map<std::string, std::vector<std::uint8_t>> fixtures;
};

/// Rounds every weight to the nearest float32, as the codec does.
inline std::vector<double> quantize_f32(std::span<const double> w) {
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<double>(static_cast<float>(w[i]));
  return out;
}

namespace detail {

inline void append_f32_le(std::vector<std::uint8_t>& out, std::span<const double> w) {
  for (double v : w) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
}

inline std::vector<double> read_f32_le(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[offset + 4 * i + b]) << (8 * b);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

inline nlohmann::json preprocess_json(const PreprocessSpec& p) {
  return {{"target_size", p.target_size}, {"mean", p.mean}, {"std", p.std}, {"grayscale", p.grayscale}};
}

inline PreprocessSpec preprocess_from_json(const nlohmann::json& j) {
  PreprocessSpec p;
  p.target_size = j.at("target_size");
  p.mean = j.at("mean");
  p.std = j.at("std");
  p.grayscale = j.at("grayscale");
  return p;
}

inline nlohmann::json layout_json(const Network& net) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : net.slots())
    slots.push_back({{"layer", net.spec().layers[s.layer].name}, {"slot", s.name}, {"shape", s.shape}});
  return slots;
}

}  // namespace detail

inline BundleFiles save_bundle(const ModelBundle& b) {
  b.validate();
  BundleFiles files;
  nlohmann::json m;
  m["format_version"] = b.format_version;
  m["class_names"] = b.class_names;
  m["operating_points"] = b.operating_points;
  m["preprocess"] = detail::preprocess_json(b.preprocess);

  nlohmann::json segments = nlohmann::json::array();
  std::size_t offset = 0;
  auto add_segment = [&](const std::string& role, const GraphSpec& g, std::span<const double> w) {
    const Network net(g);
    segments.push_back({{"role", role},
                        {"graph", to_json(g)},
                        {"layout", detail::layout_json(net)},
                        {"offset", offset},
                        {"count", w.size()}});
    detail::append_f32_le(files.weights, w);
    offset += w.size();
  };
  add_segment("classifier", b.graph, b.weights);
  if (b.ood) {
    add_segment("encoder", b.ood->encoder, b.ood->encoder_weights);
    add_segment("decoder", b.ood->decoder, b.ood->decoder_weights);
    m["ood"] = {{"metric", to_string(b.ood->metric)},
                {"threshold", b.ood->threshold},
                {"latent_reference", b.ood->latent_reference},
                {"preprocess", detail::preprocess_json(b.ood->preprocess)}};
  } else {
    m["ood"] = nullptr;
  }
  m["segments"] = segments;
  m["weights"] = {{"file", "weights.bin"}, {"dtype", "float32-le"}, {"count", offset}};

  nlohmann::json fixtures = nlohmann::json::array();
  for (const auto& f : b.fixtures) {
    const std::string file = "fixtures/" + f.name + ".png";
    fixtures.push_back({{"name", f.name}, {"file", file}, {"reference", f.reference}});
    files.fixtures[file] = encode_png(f.image);
  }
  m["fixtures"] = fixtures;
  files.manifest = m.dump(2) + "\n";
  return files;
}

inline ModelBundle load_bundle(const BundleFiles& files) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(files.manifest);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptManifest, e.what());
  }
  ModelBundle b;
  try {
    b.format_version = m.at("format_version");
    if (b.format_version != bundle_format_version)
      fail(ErrorCode::VersionMismatch, "bundle format " + std::to_string(b.format_version) + ", reader supports " +
                                           std::to_string(bundle_format_version));
    b.class_names = m.at("class_names").get<std::vector<std::string>>();
    b.operating_points = m.at("operating_points").get<std::vector<double>>();
    b.preprocess = detail::preprocess_from_json(m.at("preprocess"));

    const std::size_t total = m.at("weights").at("count");
    if (files.weights.size() != 4 * total)
      fail(ErrorCode::WeightCountMismatch, "weights.bin holds " + std::to_string(files.weights.size() / 4) +
                                               " floats, manifest declares " + std::to_string(total));
    std::map<std::string, std::pair<GraphSpec, std::vector<double>>> seg;
    std::size_t expected_offset = 0;
    for (const auto& s : m.at("segments")) {
      GraphSpec g = graph_from_json(s.at("graph"));
      const Network net(g);
      if (detail::layout_json(net) != s.at("layout"))
        fail(ErrorCode::CorruptManifest, "parameter layout does not match graph for " + s.at("role").get<std::string>());
      const std::size_t offset = s.at("offset"), count = s.at("count");
      if (offset != expected_offset || count != net.param_count() || offset + count > total)
        fail(ErrorCode::WeightCountMismatch, "segment " + s.at("role").get<std::string>() + " has a bad extent");
      expected_offset += count;
      seg[s.at("role")] = {std::move(g), detail::read_f32_le(files.weights, 4 * offset, count)};
    }
    if (expected_offset != total) fail(ErrorCode::WeightCountMismatch, "segments do not cover weights.bin");
    if (!seg.count("classifier")) fail(ErrorCode::CorruptManifest, "no classifier segment");
    b.graph = seg["classifier"].first;
    b.weights = seg["classifier"].second;

    if (!m.at("ood").is_null()) {
      const auto& o = m.at("ood");
      if (!seg.count("encoder") || !seg.count("decoder")) fail(ErrorCode::CorruptManifest, "OOD gate without autoencoder");
      OodModel ood;
      ood.encoder = seg["encoder"].first;
      ood.encoder_weights = seg["encoder"].second;
      ood.decoder = seg["decoder"].first;
      ood.decoder_weights = seg["decoder"].second;
      ood.metric = ood_metric_from_string(o.at("metric"));
      ood.threshold = o.at("threshold");
      ood.latent_reference = o.at("latent_reference").get<std::vector<double>>();
      ood.preprocess = detail::preprocess_from_json(o.at("preprocess"));
      b.ood = std::move(ood);
    }
    for (const auto& f : m.at("fixtures")) {
      const std::string file = f.at("file");
      auto it = files.fixtures.find(file);
      if (it == files.fixtures.end()) fail(ErrorCode::CorruptManifest, "missing fixture image " + file);
      b.fixtures.push_back({f.at("name"), decode_image(std::span<const std::uint8_t>(it->second)),
                            f.at("reference").get<std::vector<double>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptManifest, e.what());
  }
  b.validate();
  return b;
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::BundleLoadFailure, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::BundleLoadFailure, "cannot write " + p.string());
}

}  // namespace detail

/// Writes the bundle as a directory: manifest.json, weights.bin, fixtures/.
inline void write_bundle(const ModelBundle& b, const std::filesystem::path& dir) {
  const BundleFiles files = save_bundle(b);
  detail::write_file(dir / "manifest.json",
                     std::span(reinterpret_cast<const std::uint8_t*>(files.manifest.data()), files.manifest.size()));
  detail::write_file(dir / "weights.bin", files.weights);
  for (const auto& [name, bytes] : files.fixtures) detail::write_file(dir / name, bytes);
}

inline BundleFiles read_bundle_files(const std::filesystem::path& dir) {
  BundleFiles files;
  const auto manifest = detail::read_file(dir / "manifest.json");
  files.manifest.assign(manifest.begin(), manifest.end());
  files.weights = detail::read_file(dir / "weights.bin");
  const auto fixture_dir = dir / "fixtures";
  if (std::filesystem::is_directory(fixture_dir))
    for (const auto& e : std::filesystem::directory_iterator(fixture_dir))
      files.fixtures["fixtures/" + e.path().filename().string()] = detail::read_file(e.path());
  return files;
}

inline ModelBundle read_bundle(const std::filesystem::path& dir) { return load_bundle(read_bundle_files(dir)); }

// ---------------------------------------------------------------------------
// Classifier execution

/// Name of the pre-sigmoid logit node: the input of the final sigmoid.
inline std::string logit_node(const Network& net) {
  const std::string& out = net.spec().outputs.front();
  const std::size_t li = net.layer_index(out);
  const LayerSpec& l = net.spec().layers[li];
  if (l.kind != LayerKind::sigmoid) fail(ErrorCode::IncompatibleHead, "classifier output is not a sigmoid");
  const std::size_t in = net.layer_inputs(li).front();
  if (in < net.input_count()) return net.spec().inputs[in].name;
  return net.spec().layers[in - net.input_count()].name;
}

inline std::vector<double> predict_probabilities(const Network& net, std::span<const double> weights,
                                                 const Tensor& input) {
  return forward(net, weights, input).output().data;
}

inline std::vector<double> predict_probabilities(const Network& net, std::span<const double> weights,
                                                 const PreprocessSpec& spec, const Image& img) {
  return predict_probabilities(net, weights, preprocess(img, spec));
}

/// Re-runs the bundle on `images` and compares with `reference`
/// (probabilities from the pre-serialization model). Passing means
/// report.within(bundle_verify_tolerance).
inline DiffReport verify_bundle(const ModelBundle& bundle, const std::vector<std::vector<double>>& reference,
                                const std::vector<Image>& images) {
  const Network net(bundle.graph);
  std::vector<std::vector<double>> preds;
  preds.reserve(images.size());
  for (const auto& img : images) preds.push_back(predict_probabilities(net, bundle.weights, bundle.preprocess, img));
  return compare_pipelines(reference, preds);
}

/// Verification against the fixtures embedded in the bundle.
inline DiffReport verify_bundle(const ModelBundle& bundle) {
  std::vector<std::vector<double>> refs;
  std::vector<Image> images;
  for (const auto& f : bundle.fixtures) {
    refs.push_back(f.reference);
    images.push_back(f.image);
  }
  return verify_bundle(bundle, refs, images);
}

}  // namespace xray
