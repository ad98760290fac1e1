#pragma once

// Attribution maps: input-gradient saliency and class activation maps,
// with heatmap rendering and export.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xray/bundle.hpp"
#include "xray/engine.hpp"
#include "xray/error.hpp"
#include "xray/image.hpp"
#include "xray/stats.hpp"

namespace xray {

enum class ExplainMethod { saliency, cam };

inline std::string to_string(ExplainMethod m) { return m == ExplainMethod::saliency ? "saliency" : "cam"; }

inline ExplainMethod explain_method_from_string(const std::string& s) {
  if (s == "saliency") return ExplainMethod::saliency;
  if (s == "cam") return ExplainMethod::cam;
  fail(ErrorCode::InvalidConfig, "unknown explanation method '" + s + "'");
}

/// Row-major height x width map.
struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// max(0, d logit[cls] / d input) for the single-channel image input.
/// OutputIndex::all() attributes the sum of all logits.
inline Heatmap saliency(const Network& net, std::span<const double> weights, const Tensor& input, OutputIndex cls) {
  const Tensor g = grad_input(net, weights, input, logit_node(net), cls);
  Heatmap h{static_cast<int>(g.shape[2]), static_cast<int>(g.shape[1]), {}};
  h.values.resize(static_cast<std::size_t>(h.width) * h.height, 0.0);
  const std::size_t plane = h.values.size();
  for (std::size_t c = 0; c < g.shape[0]; ++c)
    for (std::size_t i = 0; i < plane; ++i) h.values[i] += g.data[c * plane + i];
  for (double& v : h.values) v = std::max(0.0, v);
  return h;
}

/// Layers that make CAM exact: the logits are a dense map of a global
/// average pool over a [K,h,w] feature node.
struct CamHead {
  std::size_t logits_layer = 0;
  std::size_t features_node = 0;
  std::size_t classes = 0;
  std::size_t channels = 0;
};

inline CamHead cam_head(const Network& net) {
  const std::string logits = logit_node(net);
  if (!net.has_node(logits) || net.node_index(logits) < net.input_count())
    fail(ErrorCode::IncompatibleHead, "no logits layer");
  const std::size_t li = net.layer_index(logits);
  const auto& layers = net.spec().layers;
  if (layers[li].kind != LayerKind::dense) fail(ErrorCode::IncompatibleHead, "logits are not a dense layer");
  const std::size_t gap_node = net.layer_inputs(li).front();
  if (gap_node < net.input_count() || layers[gap_node - net.input_count()].kind != LayerKind::global_avg_pool)
    fail(ErrorCode::IncompatibleHead, "logits are not fed by a global average pool");
  CamHead h;
  h.logits_layer = li;
  h.features_node = net.layer_inputs(gap_node - net.input_count()).front();
  h.classes = shape_size(net.node_shape(net.layer_node(li)));
  h.channels = net.node_shape(h.features_node)[0];
  return h;
}

/// Feature-resolution CAM: M_c(y,x) = sum_k W[c,k] f_k(y,x). Its spatial
/// mean plus b_c equals logit c. OutputIndex::all() sums over classes.
inline Heatmap cam(const Network& net, std::span<const double> weights, const Tensor& input, OutputIndex cls) {
  const CamHead head = cam_head(net);
  if (!cls.is_all() && cls.value >= head.classes)
    fail(ErrorCode::BadClassIndex, "class index " + std::to_string(cls.value) + " out of range");
  const Activations act = forward(net, weights, input);
  const Tensor& f = act.nodes[head.features_node];
  const std::span<const double> w = detail::slot_view(net, weights, head.logits_layer, "weight");
  std::vector<double> row(head.channels, 0.0);
  for (std::size_t c = 0; c < head.classes; ++c)
    if (cls.is_all() || c == cls.value)
      for (std::size_t k = 0; k < head.channels; ++k) row[k] += w[c * head.channels + k];
  Heatmap h{static_cast<int>(f.shape[2]), static_cast<int>(f.shape[1]), {}};
  const std::size_t plane = static_cast<std::size_t>(h.width) * h.height;
  h.values.assign(plane, 0.0);
  for (std::size_t k = 0; k < head.channels; ++k)
    for (std::size_t i = 0; i < plane; ++i) h.values[i] += row[k] * f.data[k * plane + i];
  return h;
}

inline Heatmap cam(const Network& net, std::span<const double> weights, const Tensor& input, std::size_t cls) {
  return cam(net, weights, input, OutputIndex::unit(cls));
}

/// Bilinear resize to the input resolution (half-pixel centers, edge clamp).
inline Heatmap upsample_heatmap(const Heatmap& h, int width, int height) {
  Image img(h.width, h.height, 1);
  img.data = h.values;
  const Image r = resize(img, width, height, Resampler::bilinear);
  return {width, height, r.data};
}

struct OverlayOptions {
  double percentile = 99.0;
  double floor = 0.05;
};

/// Values divided by their 99th percentile (or the maximum when that is not
/// positive), clipped to [0,1].
inline std::vector<double> normalize_heatmap(const Heatmap& h, const OverlayOptions& opt = {}) {
  std::vector<double> out(h.values.size(), 0.0);
  if (h.values.empty()) return out;
  double scale = quantile_linear(h.values, opt.percentile / 100.0);
  if (!(scale > 0.0)) scale = *std::max_element(h.values.begin(), h.values.end());
  if (!(scale > 0.0)) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(h.values[i] / scale, 0.0, 1.0);
  return out;
}

struct Overlay {
  Image base;  // grayscale
  Image heat;  // RGBA: red = normalized value, alpha 0 below the floor

  /// Heat layer alpha-composited over the base, as RGB.
  Image composite() const {
    Image out(base.width, base.height, 3);
    for (int y = 0; y < base.height; ++y)
      for (int x = 0; x < base.width; ++x) {
        const double a = heat.at(x, y, 3), g = base.at(x, y);
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = (1 - a) * g + a * heat.at(x, y, c);
      }
    return out;
  }
};

/// Transparent where the normalized value is below the floor, otherwise red
/// with opacity equal to the value.
inline Overlay render_overlay(const Heatmap& h, const Image& base, const OverlayOptions& opt = {}) {
  if (base.width != h.width || base.height != h.height)
    fail(ErrorCode::ShapeMismatch, "heatmap and base image differ in size");
  const std::vector<double> v = normalize_heatmap(h, opt);
  Overlay o{to_grayscale(base), Image(h.width, h.height, 4, 0.0)};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const int x = static_cast<int>(i % h.width), y = static_cast<int>(i / h.width);
    o.heat.at(x, y, 0) = v[i];
    o.heat.at(x, y, 3) = v[i] < opt.floor ? 0.0 : v[i];
  }
  return o;
}

/// Row-major little-endian float32 values.
inline std::vector<std::uint8_t> heatmap_raw_f32(const Heatmap& h) {
  std::vector<std::uint8_t> out;
  out.reserve(h.values.size() * 4);
  for (double v : h.values) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

inline Heatmap heatmap_from_raw_f32(std::span<const std::uint8_t> bytes, int width, int height) {
  if (bytes.size() != static_cast<std::size_t>(width) * height * 4)
    fail(ErrorCode::ShapeMismatch, "raw heatmap size does not match its dimensions");
  Heatmap h{width, height, {}};
  for (std::size_t i = 0; i < bytes.size(); i += 4) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i + b]) << (8 * b);
    h.values.push_back(std::bit_cast<float>(bits));
  }
  return h;
}

struct Explanation {
  ExplainMethod method = ExplainMethod::saliency;
  std::string class_name;  // "all" for the summed attribution
  long class_index = -1;
  Heatmap heatmap;         // at input resolution
  Image input;             // grayscale model input before normalization

  Overlay overlay(const OverlayOptions& opt = {}) const { return render_overlay(heatmap, input, opt); }

  nlohmann::json sidecar() const {
    return {{"method", to_string(method)}, {"class", class_name},  {"class_index", class_index},
            {"width", heatmap.width},     {"height", heatmap.height}, {"dtype", "float32"},
            {"layout", "row-major"},      {"byte_order", "little"}};
  }
};

/// `cls` empty means all classes.
inline Explanation explain(const ModelBundle& bundle, const Image& img, ExplainMethod method,
                           std::optional<std::size_t> cls) {
  const Network net(bundle.graph);
  const Tensor x = preprocess(img, bundle.preprocess);
  Explanation e;
  e.method = method;
  e.input = scale_and_crop(to_grayscale(img), bundle.preprocess);
  if (cls && *cls >= bundle.class_names.size())
    fail(ErrorCode::BadClassIndex, "class index " + std::to_string(*cls) + " out of range");
  e.class_index = cls ? static_cast<long>(*cls) : -1;
  e.class_name = cls ? bundle.class_names[*cls] : "all";
  if (method == ExplainMethod::saliency) {
    e.heatmap = saliency(net, bundle.weights, x, cls ? OutputIndex::unit(*cls) : OutputIndex::all());
  } else {
    const Heatmap m = cam(net, bundle.weights, x, cls ? OutputIndex::unit(*cls) : OutputIndex::all());
    e.heatmap = upsample_heatmap(m, static_cast<int>(x.shape[2]), static_cast<int>(x.shape[1]));
  }
  return e;
}

}  // namespace xray
