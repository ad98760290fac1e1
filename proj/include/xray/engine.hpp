#pragma once

// Forward evaluation and reverse-mode differentiation of a Network.
// All arithmetic is in double; weights are a flat span laid out per
// Network::slots().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xray/error.hpp"
#include "xray/graph.hpp"
#include "xray/tensor.hpp"

namespace xray {

/// Every node value of one forward pass, indexed like Network nodes.
struct Activations {
  const Network* net = nullptr;
  std::vector<Tensor> nodes;

  const Tensor& operator[](const std::string& name) const& { return nodes.at(net->node_index(name)); }
  Tensor operator[](const std::string& name) && { return std::move(nodes.at(net->node_index(name))); }
  const Tensor& output() const& { return (*this)[net->spec().outputs.front()]; }
  Tensor output() && { return std::move(nodes.at(net->node_index(net->spec().outputs.front()))); }
};

struct Gradients {
  std::vector<Tensor> inputs;  // one per graph input
  std::vector<double> params;  // empty unless requested
};

/// Selects one output unit, or their sum.
struct OutputIndex {
  static constexpr std::size_t all_value = static_cast<std::size_t>(-1);
  std::size_t value = all_value;

  static OutputIndex all() { return {}; }
  static OutputIndex unit(std::size_t i) { return {i}; }
  bool is_all() const { return value == all_value; }
};

namespace detail {

inline std::span<const double> slot_view(const Network& net, std::span<const double> w, std::size_t layer,
                                         const char* name) {
  const ParamSlot* s = net.find_slot(layer, name);
  if (!s) return {};
  return w.subspan(s->offset, s->size());
}

inline std::span<double> slot_grad(const Network& net, std::vector<double>& g, std::size_t layer, const char* name) {
  const ParamSlot* s = net.find_slot(layer, name);
  if (!s || g.empty()) return {};
  return std::span<double>(g).subspan(s->offset, s->size());
}

// Output columns ox whose input column ox*stride - pad + k lies inside [0, in).
inline std::pair<long, long> valid_range(long in, long out, long stride, long pad, long k) {
  long lo = 0;
  while (lo < out && lo * stride - pad + k < 0) ++lo;
  long hi = out;
  while (hi > lo && (hi - 1) * stride - pad + k >= in) --hi;
  return {lo, hi};
}

inline void conv_forward(const LayerSpec& l, const Tensor& in, std::span<const double> wt, std::span<const double> b,
                         Tensor& out) {
  const long C = in.shape[0], H = in.shape[1], W = in.shape[2];
  const long O = out.shape[0], OH = out.shape[1], OW = out.shape[2];
  const long K = l.kernel, S = l.stride, P = l.padding;
  for (long o = 0; o < O; ++o) {
    double* op = &out.data[o * OH * OW];
    std::fill(op, op + OH * OW, b.empty() ? 0.0 : b[o]);
    for (long c = 0; c < C; ++c) {
      const double* ip = &in.data[c * H * W];
      for (long ky = 0; ky < K; ++ky) {
        const auto [y0, y1] = valid_range(H, OH, S, P, ky);
        for (long kx = 0; kx < K; ++kx) {
          const double w = wt[((o * C + c) * K + ky) * K + kx];
          if (w == 0.0) continue;
          const auto [x0, x1] = valid_range(W, OW, S, P, kx);
          for (long oy = y0; oy < y1; ++oy) {
            const double* row = ip + (oy * S - P + ky) * W - P + kx;
            double* orow = op + oy * OW;
            for (long ox = x0; ox < x1; ++ox) orow[ox] += w * row[ox * S];
          }
        }
      }
    }
  }
}

inline void conv_backward(const LayerSpec& l, const Tensor& in, std::span<const double> wt, const Tensor& gout,
                          Tensor& gin, std::span<double> gw, std::span<double> gb) {
  const long C = in.shape[0], H = in.shape[1], W = in.shape[2];
  const long O = gout.shape[0], OH = gout.shape[1], OW = gout.shape[2];
  const long K = l.kernel, S = l.stride, P = l.padding;
  for (long o = 0; o < O; ++o) {
    const double* gp = &gout.data[o * OH * OW];
    if (!gb.empty())
      for (long i = 0; i < OH * OW; ++i) gb[o] += gp[i];
    for (long c = 0; c < C; ++c) {
      const double* ip = &in.data[c * H * W];
      double* gip = &gin.data[c * H * W];
      for (long ky = 0; ky < K; ++ky) {
        const auto [y0, y1] = valid_range(H, OH, S, P, ky);
        for (long kx = 0; kx < K; ++kx) {
          const std::size_t wi = ((o * C + c) * K + ky) * K + kx;
          const double w = wt[wi];
          const auto [x0, x1] = valid_range(W, OW, S, P, kx);
          double acc = 0.0;
          for (long oy = y0; oy < y1; ++oy) {
            const long off = (oy * S - P + ky) * W - P + kx;
            const double* grow = gp + oy * OW;
            const double* row = ip + off;
            double* girow = gip + off;
            for (long ox = x0; ox < x1; ++ox) {
              acc += grow[ox] * row[ox * S];
              girow[ox * S] += w * grow[ox];
            }
          }
          if (!gw.empty()) gw[wi] += acc;
        }
      }
    }
  }
}

inline void pool_forward(const LayerSpec& l, const Tensor& in, Tensor& out) {
  const std::size_t C = in.shape[0], OH = out.shape[1], OW = out.shape[2];
  const std::size_t K = l.kernel, S = l.stride;
  const bool is_max = l.kind == LayerKind::maxpool;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double acc = is_max ? in.at(c, oy * S, ox * S) : 0.0;
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            const double v = in.at(c, oy * S + ky, ox * S + kx);
            acc = is_max ? std::max(acc, v) : acc + v;
          }
        out.at(c, oy, ox) = is_max ? acc : acc / static_cast<double>(K * K);
      }
}

inline void pool_backward(const LayerSpec& l, const Tensor& in, const Tensor& gout, Tensor& gin) {
  const std::size_t C = in.shape[0], OH = gout.shape[1], OW = gout.shape[2];
  const std::size_t K = l.kernel, S = l.stride;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const double g = gout.at(c, oy, ox);
        if (l.kind == LayerKind::avgpool) {
          const double share = g / static_cast<double>(K * K);
          for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) gin.at(c, oy * S + ky, ox * S + kx) += share;
          continue;
        }
        // first maximal element in scan order receives the gradient
        std::size_t by = oy * S, bx = ox * S;
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx)
            if (in.at(c, oy * S + ky, ox * S + kx) > in.at(c, by, bx)) {
              by = oy * S + ky;
              bx = ox * S + kx;
            }
        gin.at(c, by, bx) += g;
      }
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

using detail::sigmoid;

/// Evaluates every node. `inputs` follows GraphSpec::inputs order.
inline Activations forward(const Network& net, std::span<const double> weights, std::vector<Tensor> inputs) {
  if (weights.size() < net.param_count())
    fail(ErrorCode::MissingWeights, "graph needs " + std::to_string(net.param_count()) + " weights, got " +
                                        std::to_string(weights.size()));
  if (inputs.size() != net.input_count()) fail(ErrorCode::ShapeMismatch, "wrong number of graph inputs");
  Activations act{&net, {}};
  act.nodes.reserve(net.node_count());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape != net.node_shape(i))
      fail(ErrorCode::ShapeMismatch, "input '" + net.spec().inputs[i].name + "' expects " +
                                         shape_string(net.node_shape(i)) + ", got " + shape_string(inputs[i].shape));
    act.nodes.push_back(std::move(inputs[i]));
  }
  const auto& layers = net.spec().layers;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& l = layers[li];
    const auto& ins = net.layer_inputs(li);
    const Tensor& in = act.nodes[ins.front()];
    Tensor out(net.node_shape(net.layer_node(li)));
    switch (l.kind) {
      case LayerKind::conv2d:
        detail::conv_forward(l, in, detail::slot_view(net, weights, li, "weight"),
                             detail::slot_view(net, weights, li, "bias"), out);
        break;
      case LayerKind::dense: {
        const auto w = detail::slot_view(net, weights, li, "weight");
        const auto b = detail::slot_view(net, weights, li, "bias");
        const std::size_t n = in.size();
        for (std::size_t o = 0; o < out.size(); ++o) {
          const double* row = &w[o * n];
          double acc = b.empty() ? 0.0 : b[o];
          for (std::size_t i = 0; i < n; ++i) acc += row[i] * in.data[i];
          out.data[o] = acc;
        }
        break;
      }
      case LayerKind::batchnorm: {
        const auto gamma = detail::slot_view(net, weights, li, "gamma");
        const auto beta = detail::slot_view(net, weights, li, "beta");
        const auto mean = detail::slot_view(net, weights, li, "running_mean");
        const auto var = detail::slot_view(net, weights, li, "running_var");
        const std::size_t plane = in.size() / in.shape[0];
        for (std::size_t c = 0; c < in.shape[0]; ++c) {
          const double scale = gamma[c] / std::sqrt(var[c] + l.eps);
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i)
            out.data[i] = (in.data[i] - mean[c]) * scale + beta[c];
        }
        break;
      }
      case LayerKind::relu:
        for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] > 0 ? in.data[i] : 0.0;
        break;
      case LayerKind::sigmoid:
        for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = detail::sigmoid(in.data[i]);
        break;
      case LayerKind::tanh:
        for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = std::tanh(in.data[i]);
        break;
      case LayerKind::avgpool:
      case LayerKind::maxpool:
        detail::pool_forward(l, in, out);
        break;
      case LayerKind::global_avg_pool: {
        const std::size_t plane = in.shape[1] * in.shape[2];
        for (std::size_t c = 0; c < in.shape[0]; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += in.data[c * plane + i];
          out.data[c] = acc / static_cast<double>(plane);
        }
        break;
      }
      case LayerKind::concat: {
        std::size_t pos = 0;
        for (std::size_t src : ins) {
          const Tensor& t = act.nodes[src];
          std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<long>(pos));
          pos += t.size();
        }
        break;
      }
      case LayerKind::upsample_nearest: {
        const std::size_t f = l.factor;
        for (std::size_t c = 0; c < out.shape[0]; ++c)
          for (std::size_t y = 0; y < out.shape[1]; ++y)
            for (std::size_t x = 0; x < out.shape[2]; ++x) out.at(c, y, x) = in.at(c, y / f, x / f);
        break;
      }
      default:
        fail(ErrorCode::UnsupportedLayer, "no forward rule for layer '" + l.name + "'");
    }
    act.nodes.push_back(std::move(out));
  }
  return act;
}

inline Activations forward(const Network& net, std::span<const double> weights, Tensor input) {
  std::vector<Tensor> inputs;
  inputs.push_back(std::move(input));
  return forward(net, weights, std::move(inputs));
}

/// Reverse pass from the given (node, upstream gradient) seeds. Returns the
/// gradient for every graph input and, if requested, for every parameter
/// (non-trainable slots receive zeros).
inline Gradients backward(const Network& net, std::span<const double> weights, const Activations& act,
                          const std::vector<std::pair<std::size_t, Tensor>>& seeds, bool param_grads = false) {
  std::vector<Tensor> grad(net.node_count());
  for (const auto& [node, g] : seeds) {
    if (g.shape != net.node_shape(node)) fail(ErrorCode::ShapeMismatch, "seed gradient shape mismatch");
    if (grad[node].data.empty()) {
      grad[node] = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) grad[node].data[i] += g.data[i];
    }
  }
  Gradients result;
  if (param_grads) result.params.assign(net.param_count(), 0.0);

  auto accum = [&](std::size_t node) -> Tensor& {
    if (grad[node].data.empty()) grad[node] = Tensor(net.node_shape(node));
    return grad[node];
  };

  const auto& layers = net.spec().layers;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const std::size_t node = net.layer_node(li);
    if (grad[node].data.empty()) continue;
    const Tensor& gout = grad[node];
    const LayerSpec& l = layers[li];
    const auto& ins = net.layer_inputs(li);
    const Tensor& in = act.nodes[ins.front()];
    const Tensor& out = act.nodes[node];
    switch (l.kind) {
      case LayerKind::conv2d:
        detail::conv_backward(l, in, detail::slot_view(net, weights, li, "weight"), gout, accum(ins.front()),
                              detail::slot_grad(net, result.params, li, "weight"),
                              detail::slot_grad(net, result.params, li, "bias"));
        break;
      case LayerKind::dense: {
        const auto w = detail::slot_view(net, weights, li, "weight");
        auto gw = detail::slot_grad(net, result.params, li, "weight");
        auto gb = detail::slot_grad(net, result.params, li, "bias");
        Tensor& gin = accum(ins.front());
        const std::size_t n = in.size();
        for (std::size_t o = 0; o < gout.size(); ++o) {
          const double g = gout.data[o];
          if (g == 0.0) continue;
          const double* row = &w[o * n];
          for (std::size_t i = 0; i < n; ++i) gin.data[i] += g * row[i];
          if (!gw.empty())
            for (std::size_t i = 0; i < n; ++i) gw[o * n + i] += g * in.data[i];
          if (!gb.empty()) gb[o] += g;
        }
        break;
      }
      case LayerKind::batchnorm: {
        const auto gamma = detail::slot_view(net, weights, li, "gamma");
        const auto mean = detail::slot_view(net, weights, li, "running_mean");
        const auto var = detail::slot_view(net, weights, li, "running_var");
        auto ggamma = detail::slot_grad(net, result.params, li, "gamma");
        auto gbeta = detail::slot_grad(net, result.params, li, "beta");
        Tensor& gin = accum(ins.front());
        const std::size_t plane = in.size() / in.shape[0];
        for (std::size_t c = 0; c < in.shape[0]; ++c) {
          const double inv = 1.0 / std::sqrt(var[c] + l.eps);
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
            gin.data[i] += gout.data[i] * gamma[c] * inv;
            if (!ggamma.empty()) ggamma[c] += gout.data[i] * (in.data[i] - mean[c]) * inv;
            if (!gbeta.empty()) gbeta[c] += gout.data[i];
          }
        }
        break;
      }
      case LayerKind::relu: {
        Tensor& gin = accum(ins.front());
        for (std::size_t i = 0; i < in.size(); ++i)
          if (in.data[i] > 0) gin.data[i] += gout.data[i];
        break;
      }
      case LayerKind::sigmoid: {
        Tensor& gin = accum(ins.front());
        for (std::size_t i = 0; i < in.size(); ++i) gin.data[i] += gout.data[i] * out.data[i] * (1.0 - out.data[i]);
        break;
      }
      case LayerKind::tanh: {
        Tensor& gin = accum(ins.front());
        for (std::size_t i = 0; i < in.size(); ++i) gin.data[i] += gout.data[i] * (1.0 - out.data[i] * out.data[i]);
        break;
      }
      case LayerKind::avgpool:
      case LayerKind::maxpool:
        detail::pool_backward(l, in, gout, accum(ins.front()));
        break;
      case LayerKind::global_avg_pool: {
        Tensor& gin = accum(ins.front());
        const std::size_t plane = in.shape[1] * in.shape[2];
        for (std::size_t c = 0; c < in.shape[0]; ++c) {
          const double share = gout.data[c] / static_cast<double>(plane);
          for (std::size_t i = 0; i < plane; ++i) gin.data[c * plane + i] += share;
        }
        break;
      }
      case LayerKind::concat: {
        std::size_t pos = 0;
        for (std::size_t src : ins) {
          Tensor& gin = accum(src);
          for (std::size_t i = 0; i < gin.size(); ++i) gin.data[i] += gout.data[pos + i];
          pos += gin.size();
        }
        break;
      }
      case LayerKind::upsample_nearest: {
        Tensor& gin = accum(ins.front());
        const std::size_t f = l.factor;
        for (std::size_t c = 0; c < gout.shape[0]; ++c)
          for (std::size_t y = 0; y < gout.shape[1]; ++y)
            for (std::size_t x = 0; x < gout.shape[2]; ++x) gin.at(c, y / f, x / f) += gout.at(c, y, x);
        break;
      }
      default:
        fail(ErrorCode::UnsupportedLayer, "no adjoint registered for layer '" + l.name + "'");
    }
  }
  for (std::size_t i = 0; i < net.input_count(); ++i)
    result.inputs.push_back(grad[i].data.empty() ? Tensor(net.node_shape(i)) : std::move(grad[i]));
  return result;
}

/// Seed tensor selecting one unit (or all units) of `node`.
inline Tensor output_seed(const Network& net, std::size_t node, OutputIndex which) {
  Tensor seed(net.node_shape(node));
  if (which.is_all()) {
    std::fill(seed.data.begin(), seed.data.end(), 1.0);
  } else {
    if (which.value >= seed.size())
      fail(ErrorCode::BadClassIndex, "output index " + std::to_string(which.value) + " out of range");
    seed.data[which.value] = 1.0;
  }
  return seed;
}

/// d output[which] / d image-input, same shape as the image input.
inline Tensor grad_input(const Network& net, std::span<const double> weights, const Tensor& input,
                         const std::string& output, OutputIndex which) {
  const std::size_t node = net.node_index(output);
  Tensor seed = output_seed(net, node, which);
  const Activations act = forward(net, weights, input);
  return std::move(backward(net, weights, act, {{node, std::move(seed)}}).inputs.front());
}

}  // namespace xray
