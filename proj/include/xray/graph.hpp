#pragma once

// Graph description (layers wired as a DAG) and its compiled form with
// inferred shapes and the flat parameter layout.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "xray/error.hpp"
#include "xray/tensor.hpp"

namespace xray {

enum class LayerKind {
  conv2d,
  dense,
  batchnorm,
  relu,
  sigmoid,
  tanh,
  avgpool,
  maxpool,
  global_avg_pool,
  concat,
  upsample_nearest,
};

inline constexpr LayerKind all_layer_kinds[] = {
    LayerKind::conv2d,  LayerKind::dense,   LayerKind::batchnorm,       LayerKind::relu,
    LayerKind::sigmoid, LayerKind::tanh,    LayerKind::avgpool,         LayerKind::maxpool,
    LayerKind::global_avg_pool, LayerKind::concat, LayerKind::upsample_nearest,
};

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::tanh: return "tanh";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::concat: return "concat";
    case LayerKind::upsample_nearest: return "upsample_nearest";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : all_layer_kinds)
    if (to_string(k) == s) return k;
  fail(ErrorCode::UnsupportedLayer, "unknown layer kind '" + s + "'");
}

/// One node of the graph. Only the hyperparameters relevant to `kind` are
/// read; the rest keep their defaults and are not serialized.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;  // empty: previous node

  int out_channels = 0;  // conv2d
  int kernel = 1;        // conv2d, pools
  int stride = 1;        // conv2d, pools
  int padding = 0;       // conv2d, symmetric zero padding
  bool bias = true;      // conv2d, dense
  Shape out_shape;       // dense
  double eps = 1e-5;     // batchnorm
  int factor = 2;        // upsample_nearest

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct InputSpec {
  std::string name;
  Shape shape;
  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

struct GraphSpec {
  std::vector<InputSpec> inputs;  // inputs.front() is the image input
  std::vector<LayerSpec> layers;
  std::vector<std::string> outputs;

  const InputSpec& image_input() const { return inputs.front(); }
  friend bool operator==(const GraphSpec&, const GraphSpec&) = default;
};

// Convenience constructors used by the model builders and tests.
namespace layers {

inline LayerSpec conv2d(std::string name, int out_channels, int kernel, int stride = 1, int padding = 0,
                        std::vector<std::string> inputs = {}) {
  LayerSpec l{.name = std::move(name), .kind = LayerKind::conv2d, .inputs = std::move(inputs)};
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

inline LayerSpec dense(std::string name, Shape out_shape, std::vector<std::string> inputs = {}) {
  LayerSpec l{.name = std::move(name), .kind = LayerKind::dense, .inputs = std::move(inputs)};
  l.out_shape = std::move(out_shape);
  return l;
}

inline LayerSpec simple(std::string name, LayerKind kind, std::vector<std::string> inputs = {}) {
  return LayerSpec{.name = std::move(name), .kind = kind, .inputs = std::move(inputs)};
}

inline LayerSpec pool(std::string name, LayerKind kind, int kernel, int stride = 0,
                      std::vector<std::string> inputs = {}) {
  LayerSpec l{.name = std::move(name), .kind = kind, .inputs = std::move(inputs)};
  l.kernel = kernel;
  l.stride = stride > 0 ? stride : kernel;
  return l;
}

inline LayerSpec upsample(std::string name, int factor, std::vector<std::string> inputs = {}) {
  LayerSpec l{.name = std::move(name), .kind = LayerKind::upsample_nearest, .inputs = std::move(inputs)};
  l.factor = factor;
  return l;
}

}  // namespace layers

// ---------------------------------------------------------------------------
// JSON form (canonical: nlohmann objects are key-sorted)

inline nlohmann::json to_json(const LayerSpec& l) {
  nlohmann::json j;
  j["name"] = l.name;
  j["kind"] = to_string(l.kind);
  j["inputs"] = l.inputs;
  switch (l.kind) {
    case LayerKind::conv2d:
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      j["bias"] = l.bias;
      break;
    case LayerKind::dense:
      j["out_shape"] = l.out_shape;
      j["bias"] = l.bias;
      break;
    case LayerKind::batchnorm: j["eps"] = l.eps; break;
    case LayerKind::avgpool:
    case LayerKind::maxpool:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::upsample_nearest: j["factor"] = l.factor; break;
    default: break;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.inputs = j.value("inputs", std::vector<std::string>{});
  l.out_channels = j.value("out_channels", 0);
  l.kernel = j.value("kernel", 1);
  l.stride = j.value("stride", 1);
  l.padding = j.value("padding", 0);
  l.bias = j.value("bias", true);
  l.out_shape = j.value("out_shape", Shape{});
  l.eps = j.value("eps", 1e-5);
  l.factor = j.value("factor", 2);
  return l;
}

inline nlohmann::json to_json(const GraphSpec& g) {
  nlohmann::json j;
  j["inputs"] = nlohmann::json::array();
  for (const auto& in : g.inputs) j["inputs"].push_back({{"name", in.name}, {"shape", in.shape}});
  j["layers"] = nlohmann::json::array();
  for (const auto& l : g.layers) j["layers"].push_back(to_json(l));
  j["outputs"] = g.outputs;
  return j;
}

inline GraphSpec graph_from_json(const nlohmann::json& j) {
  GraphSpec g;
  for (const auto& in : j.at("inputs")) g.inputs.push_back({in.at("name"), in.at("shape").get<Shape>()});
  for (const auto& l : j.at("layers")) g.layers.push_back(layer_from_json(l));
  g.outputs = j.at("outputs").get<std::vector<std::string>>();
  return g;
}

// ---------------------------------------------------------------------------
// Compiled graph

struct ParamSlot {
  std::size_t layer = 0;
  std::string name;  // "weight", "bias", "gamma", "beta", "running_mean", "running_var"
  Shape shape;
  std::size_t offset = 0;
  bool trainable = true;

  std::size_t size() const { return shape_size(shape); }
};

/// Immutable, validated view of a GraphSpec: node indices (inputs first,
/// then layers), inferred node shapes, and parameter offsets into the flat
/// weight array (layer order, slot declaration order).
class Network {
 public:
  Network() = default;

  explicit Network(GraphSpec spec) : spec_(std::move(spec)) {
    if (spec_.inputs.empty()) fail(ErrorCode::InvalidConfig, "graph has no inputs");
    for (const auto& in : spec_.inputs) {
      if (in.shape.empty() || shape_size(in.shape) == 0)
        fail(ErrorCode::InvalidConfig, "input '" + in.name + "' has an empty shape");
      add_node(in.name, in.shape);
    }

    for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
      const LayerSpec& l = spec_.layers[li];
      std::vector<std::size_t> ins;
      if (l.inputs.empty()) {
        ins.push_back(shapes_.size() - 1);
      } else {
        for (const auto& name : l.inputs) {
          auto it = index_.find(name);
          if (it == index_.end())
            fail(ErrorCode::InvalidConfig, "layer '" + l.name + "' reads '" + name + "' which does not precede it");
          ins.push_back(it->second);
        }
      }
      layer_inputs_.push_back(ins);
      add_node(l.name, infer(li, ins));
    }
    for (const auto& out : spec_.outputs)
      if (!index_.count(out)) fail(ErrorCode::InvalidConfig, "unknown output '" + out + "'");
  }

  const GraphSpec& spec() const noexcept { return spec_; }
  std::size_t input_count() const noexcept { return spec_.inputs.size(); }
  std::size_t node_count() const noexcept { return shapes_.size(); }
  std::size_t layer_node(std::size_t layer) const noexcept { return input_count() + layer; }

  const Shape& node_shape(std::size_t node) const { return shapes_.at(node); }
  const Shape& shape_of(const std::string& name) const { return shapes_.at(node_index(name)); }
  const std::vector<std::size_t>& layer_inputs(std::size_t layer) const { return layer_inputs_.at(layer); }

  std::size_t node_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::InvalidConfig, "no node named '" + name + "'");
    return it->second;
  }
  bool has_node(const std::string& name) const { return index_.count(name) != 0; }

  /// Layer index that produces `name` (throws for graph inputs).
  std::size_t layer_index(const std::string& name) const {
    const std::size_t n = node_index(name);
    if (n < input_count()) fail(ErrorCode::InvalidConfig, "'" + name + "' is a graph input");
    return n - input_count();
  }

  const std::vector<ParamSlot>& slots() const noexcept { return slots_; }
  std::size_t param_count() const noexcept { return param_count_; }

  /// Slot of `layer` named `slot`, or nullptr.
  const ParamSlot* find_slot(std::size_t layer, const std::string& slot) const {
    for (const auto& s : slots_)
      if (s.layer == layer && s.name == slot) return &s;
    return nullptr;
  }

 private:
  void add_node(const std::string& name, Shape shape) {
    if (name.empty()) fail(ErrorCode::InvalidConfig, "node without a name");
    if (!index_.emplace(name, shapes_.size()).second) fail(ErrorCode::InvalidConfig, "duplicate node '" + name + "'");
    shapes_.push_back(std::move(shape));
  }

  void add_slot(std::size_t layer, std::string name, Shape shape, bool trainable = true) {
    ParamSlot s{layer, std::move(name), std::move(shape), param_count_, trainable};
    param_count_ += s.size();
    slots_.push_back(std::move(s));
  }

  Shape infer(std::size_t li, const std::vector<std::size_t>& ins) {
    const LayerSpec& l = spec_.layers[li];
    auto bad = [&](const std::string& why) -> Shape {
      fail(ErrorCode::InvalidConfig, "layer '" + l.name + "' (" + to_string(l.kind) + "): " + why);
    };
    if (l.kind != LayerKind::concat && ins.size() != 1) return bad("expects exactly one input");
    const Shape& in = shapes_[ins.front()];
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (in.size() != 3) return bad("input must be [C,H,W]");
        if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) return bad("bad hyperparameters");
        const long oh = (static_cast<long>(in[1]) + 2 * l.padding - l.kernel) / l.stride + 1;
        const long ow = (static_cast<long>(in[2]) + 2 * l.padding - l.kernel) / l.stride + 1;
        if (oh < 1 || ow < 1 || static_cast<long>(in[1]) + 2 * l.padding < l.kernel) return bad("kernel larger than input");
        const auto oc = static_cast<std::size_t>(l.out_channels), k = static_cast<std::size_t>(l.kernel);
        add_slot(li, "weight", {oc, in[0], k, k});
        if (l.bias) add_slot(li, "bias", {oc});
        return {oc, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
      }
      case LayerKind::dense: {
        if (l.out_shape.empty() || shape_size(l.out_shape) == 0) return bad("out_shape must be non-empty");
        add_slot(li, "weight", {shape_size(l.out_shape), shape_size(in)});
        if (l.bias) add_slot(li, "bias", {shape_size(l.out_shape)});
        return l.out_shape;
      }
      case LayerKind::batchnorm: {
        if (!(l.eps > 0)) return bad("eps must be > 0");
        add_slot(li, "gamma", {in[0]});
        add_slot(li, "beta", {in[0]});
        add_slot(li, "running_mean", {in[0]}, false);
        add_slot(li, "running_var", {in[0]}, false);
        return in;
      }
      case LayerKind::relu:
      case LayerKind::sigmoid:
      case LayerKind::tanh:
        return in;
      case LayerKind::avgpool:
      case LayerKind::maxpool: {
        if (in.size() != 3) return bad("input must be [C,H,W]");
        if (l.kernel < 1 || l.stride < 1) return bad("bad hyperparameters");
        if (in[1] < static_cast<std::size_t>(l.kernel) || in[2] < static_cast<std::size_t>(l.kernel))
          return bad("kernel larger than input");
        return {in[0], (in[1] - l.kernel) / l.stride + 1, (in[2] - l.kernel) / l.stride + 1};
      }
      case LayerKind::global_avg_pool:
        if (in.size() != 3) return bad("input must be [C,H,W]");
        return {in[0]};
      case LayerKind::upsample_nearest:
        if (in.size() != 3) return bad("input must be [C,H,W]");
        if (l.factor < 1) return bad("factor must be >= 1");
        return {in[0], in[1] * l.factor, in[2] * l.factor};
      case LayerKind::concat: {
        if (ins.size() < 2) return bad("needs at least two inputs");
        Shape out = in;
        out[0] = 0;
        for (std::size_t i : ins) {
          const Shape& s = shapes_[i];
          if (s.size() != in.size() || !std::equal(s.begin() + 1, s.end(), in.begin() + 1))
            fail(ErrorCode::ShapeMismatch, "layer '" + l.name + "': concat inputs must share all extents except the channel axis");
          out[0] += s[0];
        }
        return out;
      }
    }
    fail(ErrorCode::UnsupportedLayer, "layer '" + l.name + "' has an unsupported kind");
  }

  GraphSpec spec_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<std::size_t>> layer_inputs_;
  std::vector<ParamSlot> slots_;
  std::size_t param_count_ = 0;
};

}  // namespace xray
