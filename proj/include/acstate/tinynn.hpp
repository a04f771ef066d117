#pragma once

// Small fixed-architecture networks with hand-written backward passes:
// encoder -> Gaussian bottleneck -> vector-quantized codebook, plus the
// k-conditioned action-prediction head and an optional reconstruction decoder.
// The encoder is either a dense stack or a token mixer that embeds equal-sized
// input blocks with one shared layer and combines them through a softmax
// over tokens.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "acstate/error.hpp"
#include "acstate/rng.hpp"

namespace acstate::nn {

enum class Activation : int { identity = 0, relu = 1 };

/// Possibly sparse input vector. An empty value span means every listed index
/// has value 1 (multi-hot).
struct SparseInput {
  std::size_t dim = 0;
  std::span<const std::uint32_t> index;
  std::span<const double> value;

  double value_at(std::size_t i) const { return value.empty() ? 1.0 : value[i]; }
};

struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation act = Activation::identity;
  std::vector<double> weight;  // in_dim x out_dim; row i fans out input i
  std::vector<double> bias;

  static DenseLayer make(std::size_t in, std::size_t out, Activation act, Rng& rng) {
    DenseLayer l{in, out, act, std::vector<double>(in * out), std::vector<double>(out, 0.0)};
    const double scale = std::sqrt((act == Activation::relu ? 2.0 : 1.0) / static_cast<double>(in));
    for (auto& w : l.weight) w = scale * rng.normal();
    return l;
  }

  DenseLayer zeros_like() const {
    return {in_dim, out_dim, act, std::vector<double>(weight.size(), 0.0), std::vector<double>(bias.size(), 0.0)};
  }

  void activate(std::span<double> out) const {
    if (act == Activation::relu) {
      for (auto& v : out) v = v > 0.0 ? v : 0.0;
    }
  }

  void forward(std::span<const double> in, std::span<double> out) const {
    std::copy(bias.begin(), bias.end(), out.begin());
    double* o = out.data();
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double x = in[i];
      if (x == 0.0) continue;
      const double* w = weight.data() + i * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += x * w[j];
    }
    activate(out);
  }

  void forward(const SparseInput& in, std::span<double> out) const {
    std::copy(bias.begin(), bias.end(), out.begin());
    double* o = out.data();
    for (std::size_t n = 0; n < in.index.size(); ++n) {
      const double x = in.value_at(n);
      const double* w = weight.data() + static_cast<std::size_t>(in.index[n]) * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += x * w[j];
    }
    activate(out);
  }

  /// grad_out is turned into the pre-activation gradient in place.
  void backward(std::span<const double> in, std::span<const double> out, std::span<double> grad_out, DenseLayer& grad,
                std::span<double> grad_in) const {
    backprop_activation(out, grad_out);
    const double* g = grad_out.data();
    for (std::size_t j = 0; j < out_dim; ++j) grad.bias[j] += g[j];
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double x = in[i];
      const double* w = weight.data() + i * out_dim;
      if (x != 0.0) {
        double* gw = grad.weight.data() + i * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) gw[j] += x * g[j];
      }
      if (!grad_in.empty()) {
        double acc = 0.0;
        for (std::size_t j = 0; j < out_dim; ++j) acc += w[j] * g[j];
        grad_in[i] = acc;
      }
    }
  }

  void backward(const SparseInput& in, std::span<const double> out, std::span<double> grad_out, DenseLayer& grad) const {
    backprop_activation(out, grad_out);
    const double* g = grad_out.data();
    for (std::size_t j = 0; j < out_dim; ++j) grad.bias[j] += g[j];
    for (std::size_t n = 0; n < in.index.size(); ++n) {
      const double x = in.value_at(n);
      double* gw = grad.weight.data() + static_cast<std::size_t>(in.index[n]) * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) gw[j] += x * g[j];
    }
  }

 private:
  void backprop_activation(std::span<const double> out, std::span<double> grad_out) const {
    if (act == Activation::relu) {
      for (std::size_t j = 0; j < out_dim; ++j) {
        if (out[j] <= 0.0) grad_out[j] = 0.0;
      }
    }
  }
};

struct DenseNet {
  std::vector<DenseLayer> layers;

  /// Post-activation output of every layer.
  using Trace = std::vector<std::vector<double>>;

  static DenseNet make(const std::vector<std::size_t>& dims, Activation hidden, Activation last, Rng& rng) {
    DenseNet net;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      net.layers.push_back(DenseLayer::make(dims[i], dims[i + 1], i + 2 == dims.size() ? last : hidden, rng));
    }
    return net;
  }

  DenseNet zeros_like() const {
    DenseNet out;
    for (const auto& l : layers) out.layers.push_back(l.zeros_like());
    return out;
  }

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }

  template <class Input>
  void forward(const Input& in, Trace& trace) const {
    trace.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      trace[l].assign(layers[l].out_dim, 0.0);
      if (l == 0) {
        layers[l].forward(in, trace[l]);
      } else {
        layers[l].forward(std::span<const double>(trace[l - 1]), trace[l]);
      }
      for (double v : trace[l]) {
        if (!std::isfinite(v)) throw NumericError("non-finite activation at layer " + std::to_string(l));
      }
    }
  }

  /// Accumulates parameter gradients into grad; writes the input gradient
  /// into grad_in when it is non-empty (dense inputs only).
  template <class Input>
  void backward(const Input& in, const Trace& trace, std::vector<double> grad_out, DenseNet& grad,
                std::span<double> grad_in = {}) const {
    std::vector<double> below;
    for (std::size_t l = layers.size(); l-- > 0;) {
      if (l == 0) {
        if constexpr (std::is_same_v<Input, SparseInput>) {
          layers[0].backward(in, trace[0], grad_out, grad.layers[0]);
        } else {
          layers[0].backward(std::span<const double>(in), trace[0], grad_out, grad.layers[0], grad_in);
        }
      } else {
        below.assign(layers[l].in_dim, 0.0);
        layers[l].backward(trace[l - 1], trace[l], grad_out, grad.layers[l], below);
        std::swap(grad_out, below);
      }
    }
  }
};

struct StackShape {
  std::size_t in_dim = 0;
  std::size_t hidden = 64;
  /// Equal-sized input blocks for the token mixer; 0 selects the dense encoder.
  int tokens = 0;
  int encoder_layers = 2;
  std::size_t bottleneck_dim = 16;
  int codes = 64;
  int k_max = 1;
  std::size_t k_embed_dim = 8;
  std::size_t head_hidden = 64;
  int n_actions = 4;
  bool decoder = false;
};

struct LossWeights {
  double kl = 1e-3;
  double vq = 1.0;
  double commit = 0.25;
};

/// Encoder f, bottleneck, codebook, inverse head and optional decoder.
struct EncoderStack {
  StackShape shape;
  LossWeights weights;
  bool use_codebook = true;
  DenseLayer token_embed;          // token width -> hidden, shared by every token
  std::vector<double> token_gate;  // one softmax logit per token
  DenseNet encoder;
  DenseLayer mean_head;
  DenseLayer logvar_head;
  std::vector<double> codebook;     // codes x bottleneck_dim
  std::vector<double> k_embedding;  // k_max x k_embed_dim, row k-1 conditions horizon k
  DenseNet trunk;
  DenseNet decoder;

  static EncoderStack init(const StackShape& shape, const LossWeights& weights, Rng& rng) {
    if (shape.in_dim == 0) throw ConfigError("encoder input dimension must be positive");
    if (shape.codes < 1) throw ConfigError("codebook needs at least one code");
    if (shape.k_max < 1) throw ConfigError("k_max must be >= 1");
    if (shape.tokens < 0) throw ConfigError("token count must be >= 0");
    EncoderStack s;
    s.shape = shape;
    s.weights = weights;
    std::vector<std::size_t> dims{shape.in_dim};
    if (shape.tokens > 0) {
      const auto n = static_cast<std::size_t>(shape.tokens);
      if (shape.in_dim % n != 0) {
        throw ConfigError("input dimension " + std::to_string(shape.in_dim) + " is not divisible into " +
                          std::to_string(shape.tokens) + " tokens");
      }
      s.token_embed = DenseLayer::make(shape.in_dim / n, shape.hidden, Activation::relu, rng);
      s.token_gate.assign(n, 0.0);
      dims = {shape.hidden};
    }
    for (int i = 0; i < shape.encoder_layers; ++i) dims.push_back(shape.hidden);
    s.encoder = DenseNet::make(dims, Activation::relu, Activation::relu, rng);
    const std::size_t h = dims.back();
    s.mean_head = DenseLayer::make(h, shape.bottleneck_dim, Activation::identity, rng);
    s.logvar_head = DenseLayer::make(h, shape.bottleneck_dim, Activation::identity, rng);
    for (auto& w : s.logvar_head.weight) w *= 0.1;
    s.codebook.resize(static_cast<std::size_t>(shape.codes) * shape.bottleneck_dim);
    for (auto& c : s.codebook) c = rng.normal();
    s.k_embedding.resize(static_cast<std::size_t>(shape.k_max) * shape.k_embed_dim);
    for (auto& e : s.k_embedding) e = 0.1 * rng.normal();
    s.trunk = DenseNet::make({2 * shape.bottleneck_dim + shape.k_embed_dim, shape.head_hidden,
                              static_cast<std::size_t>(shape.n_actions)},
                             Activation::relu, Activation::identity, rng);
    if (shape.decoder) {
      s.decoder = DenseNet::make({shape.bottleneck_dim, shape.hidden, shape.in_dim}, Activation::relu,
                                 Activation::identity, rng);
    }
    return s;
  }

  EncoderStack zeros_like() const {
    EncoderStack g;
    g.shape = shape;
    g.weights = weights;
    g.use_codebook = use_codebook;
    g.token_embed = token_embed.zeros_like();
    g.token_gate.assign(token_gate.size(), 0.0);
    g.encoder = encoder.zeros_like();
    g.mean_head = mean_head.zeros_like();
    g.logvar_head = logvar_head.zeros_like();
    g.codebook.assign(codebook.size(), 0.0);
    g.k_embedding.assign(k_embedding.size(), 0.0);
    g.trunk = trunk.zeros_like();
    g.decoder = decoder.zeros_like();
    return g;
  }

  std::size_t token_width() const { return shape.tokens > 0 ? shape.in_dim / static_cast<std::size_t>(shape.tokens) : 0; }

  std::span<const double> code_vector(int code) const {
    return {codebook.data() + static_cast<std::size_t>(code) * shape.bottleneck_dim, shape.bottleneck_dim};
  }
};

/// Calls f(path, span) for every parameter tensor in a fixed order.
template <class Stack, class F>
  requires std::is_same_v<std::remove_const_t<Stack>, EncoderStack>
void for_each_tensor(Stack& s, F&& f) {
  auto net = [&](auto& n, const std::string& name) {
    for (std::size_t l = 0; l < n.layers.size(); ++l) {
      f(name + "." + std::to_string(l) + ".weight", std::span(n.layers[l].weight));
      f(name + "." + std::to_string(l) + ".bias", std::span(n.layers[l].bias));
    }
  };
  if (s.shape.tokens > 0) {
    f(std::string("token_embed.weight"), std::span(s.token_embed.weight));
    f(std::string("token_embed.bias"), std::span(s.token_embed.bias));
    f(std::string("token_gate"), std::span(s.token_gate));
  }
  net(s.encoder, "encoder");
  f(std::string("mean_head.weight"), std::span(s.mean_head.weight));
  f(std::string("mean_head.bias"), std::span(s.mean_head.bias));
  f(std::string("logvar_head.weight"), std::span(s.logvar_head.weight));
  f(std::string("logvar_head.bias"), std::span(s.logvar_head.bias));
  f(std::string("codebook"), std::span(s.codebook));
  f(std::string("k_embedding"), std::span(s.k_embedding));
  net(s.trunk, "trunk");
  net(s.decoder, "decoder");
}

struct TensorRef {
  std::string path;
  std::span<double> data;
};

inline std::vector<TensorRef> tensors(EncoderStack& s) {
  std::vector<TensorRef> out;
  for_each_tensor(s, [&](const std::string& path, std::span<double> d) { out.push_back({path, d}); });
  return out;
}

inline void zero(EncoderStack& g) {
  for_each_tensor(g, [](const std::string&, std::span<double> d) { std::fill(d.begin(), d.end(), 0.0); });
}

/// Nearest codebook row by Euclidean distance; ties go to the lowest index.
inline int nearest_code(const EncoderStack& s, std::span<const double> z) {
  const std::size_t d = s.shape.bottleneck_dim;
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int c = 0; c < s.shape.codes; ++c) {
    const double* row = s.codebook.data() + static_cast<std::size_t>(c) * d;
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = z[i] - row[i];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = c;
    }
  }
  return best;
}

/// Stop-gradient values held fixed while finite differences perturb the
/// parameters: vq_loss = |z_sg - c|^2 and commit_loss = |z - c_sg|^2.
struct FrozenTargets {
  int code = 0;
  std::vector<double> z_sg;
  std::vector<double> c_sg;
};

struct EncodeOptions {
  /// Reparameterized sample when set; bottleneck mean otherwise (eval mode).
  Rng* rng = nullptr;
  /// Feed z downstream instead of the code vector (quantization as identity).
  bool passthrough = false;
  const FrozenTargets* frozen = nullptr;
};

struct Encoding {
  int code = -1;
  std::vector<double> quantized;
  double kl = 0.0;
  double vq_loss = 0.0;
  double commit_loss = 0.0;
  // backward state
  std::vector<double> token_act;  // tokens x hidden
  std::vector<double> mixed;
  DenseNet::Trace trace;
  std::vector<double> mean;
  std::vector<double> logvar;
  std::vector<double> noise;
  std::vector<double> z;
  std::vector<double> z_sg;
  std::vector<double> c_sg;
  bool codebook_terms = false;
};

namespace detail {

/// Softmax of the gate logits over tokens.
inline std::vector<double> gate_weights(const EncoderStack& s) {
  const double hi = *std::max_element(s.token_gate.begin(), s.token_gate.end());
  std::vector<double> w(s.token_gate.size());
  double z = 0.0;
  for (std::size_t t = 0; t < w.size(); ++t) z += w[t] = std::exp(s.token_gate[t] - hi);
  for (auto& x : w) x /= z;
  return w;
}

/// Token activations and their gated sum.
inline void mix_forward(const EncoderStack& s, const SparseInput& x, Encoding& e) {
  const auto n = static_cast<std::size_t>(s.shape.tokens);
  const std::size_t h = s.shape.hidden;
  const std::size_t width = s.token_width();
  e.token_act.resize(n * h);
  for (std::size_t t = 0; t < n; ++t) std::copy(s.token_embed.bias.begin(), s.token_embed.bias.end(), e.token_act.begin() + static_cast<std::ptrdiff_t>(t * h));
  for (std::size_t i = 0; i < x.index.size(); ++i) {
    const std::size_t t = x.index[i] / width;
    const double v = x.value_at(i);
    const double* w = s.token_embed.weight.data() + (x.index[i] % width) * h;
    double* o = e.token_act.data() + t * h;
    for (std::size_t j = 0; j < h; ++j) o[j] += v * w[j];
  }
  for (auto& a : e.token_act) a = a > 0.0 ? a : 0.0;
  const auto w = gate_weights(s);
  e.mixed.assign(h, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double* a = e.token_act.data() + t * h;
    for (std::size_t j = 0; j < h; ++j) e.mixed[j] += w[t] * a[j];
  }
}

inline void mix_backward(const EncoderStack& s, const SparseInput& x, const Encoding& e, std::span<const double> dmixed,
                         EncoderStack& g) {
  const auto n = static_cast<std::size_t>(s.shape.tokens);
  const std::size_t h = s.shape.hidden;
  const std::size_t width = s.token_width();
  std::vector<double> dact(n * h);
  const auto w = gate_weights(s);
  for (std::size_t t = 0; t < n; ++t) {
    const double* a = e.token_act.data() + t * h;
    double* da = dact.data() + t * h;
    for (std::size_t j = 0; j < h; ++j) {
      g.token_gate[t] += dmixed[j] * w[t] * (a[j] - e.mixed[j]);
      da[j] = a[j] > 0.0 ? dmixed[j] * w[t] : 0.0;
      g.token_embed.bias[j] += da[j];
    }
  }
  for (std::size_t i = 0; i < x.index.size(); ++i) {
    const double v = x.value_at(i);
    const double* da = dact.data() + (x.index[i] / width) * h;
    double* gw = g.token_embed.weight.data() + (x.index[i] % width) * h;
    for (std::size_t j = 0; j < h; ++j) gw[j] += v * da[j];
  }
}

}  // namespace detail

inline Encoding encode(const EncoderStack& s, const SparseInput& x, const EncodeOptions& opt = {}) {
  if (x.dim != s.shape.in_dim) {
    throw ConfigError("observation dimension " + std::to_string(x.dim) + " does not match encoder input " +
                      std::to_string(s.shape.in_dim));
  }
  Encoding e;
  const std::size_t d = s.shape.bottleneck_dim;
  e.mean.assign(d, 0.0);
  e.logvar.assign(d, 0.0);
  if (s.shape.tokens > 0) {
    detail::mix_forward(s, x, e);
    if (!s.encoder.layers.empty()) s.encoder.forward(std::span<const double>(e.mixed), e.trace);
    const auto& h = s.encoder.layers.empty() ? e.mixed : e.trace.back();
    s.mean_head.forward(std::span<const double>(h), e.mean);
    s.logvar_head.forward(std::span<const double>(h), e.logvar);
  } else if (s.encoder.layers.empty()) {
    s.mean_head.forward(x, e.mean);
    s.logvar_head.forward(x, e.logvar);
  } else {
    s.encoder.forward(x, e.trace);
    const auto& h = e.trace.back();
    s.mean_head.forward(std::span<const double>(h), e.mean);
    s.logvar_head.forward(std::span<const double>(h), e.logvar);
  }
  e.noise.assign(d, 0.0);
  e.z = e.mean;
  for (std::size_t i = 0; i < d; ++i) {
    if (!std::isfinite(e.mean[i]) || !std::isfinite(e.logvar[i])) {
      throw NumericError("non-finite activation at bottleneck (layer " + std::to_string(s.encoder.layers.size()) + ")");
    }
    e.kl += 0.5 * (e.mean[i] * e.mean[i] + std::exp(e.logvar[i]) - e.logvar[i] - 1.0);
    if (opt.rng) {
      e.noise[i] = opt.rng->normal();
      e.z[i] += std::exp(0.5 * e.logvar[i]) * e.noise[i];
    }
  }
  const bool passthrough = opt.passthrough || !s.use_codebook;
  if (s.use_codebook || opt.frozen) {
    e.code = opt.frozen ? opt.frozen->code : nearest_code(s, e.z);
    const auto c = s.code_vector(e.code);
    e.z_sg = opt.frozen ? opt.frozen->z_sg : e.z;
    e.c_sg = opt.frozen ? opt.frozen->c_sg : std::vector<double>(c.begin(), c.end());
    for (std::size_t i = 0; i < d; ++i) {
      const double a = e.z_sg[i] - c[i];
      const double b = e.z[i] - e.c_sg[i];
      e.vq_loss += a * a;
      e.commit_loss += b * b;
    }
    e.codebook_terms = true;
    e.quantized = passthrough ? e.z : std::vector<double>(c.begin(), c.end());
  } else {
    e.quantized = e.z;
  }
  return e;
}

/// Gradient of scale * (downstream + kl_w*kl + vq_w*vq + commit_w*commit).
/// grad_quantized is the downstream gradient (already scaled), copied
/// straight through the quantizer onto z.
inline void encode_backward(const EncoderStack& s, const SparseInput& x, const Encoding& e,
                            std::span<const double> grad_quantized, double scale, EncoderStack& g) {
  const std::size_t d = s.shape.bottleneck_dim;
  const auto& w = s.weights;
  std::vector<double> dmean(d);
  std::vector<double> dlogvar(d);
  for (std::size_t i = 0; i < d; ++i) {
    double dz = grad_quantized.empty() ? 0.0 : grad_quantized[i];
    if (e.codebook_terms) {
      dz += scale * w.commit * 2.0 * (e.z[i] - e.c_sg[i]);
      g.codebook[static_cast<std::size_t>(e.code) * d + i] +=
          scale * w.vq * 2.0 * (s.codebook[static_cast<std::size_t>(e.code) * d + i] - e.z_sg[i]);
    }
    const double sigma = std::exp(0.5 * e.logvar[i]);
    dmean[i] = dz + scale * w.kl * e.mean[i];
    dlogvar[i] = dz * e.noise[i] * 0.5 * sigma + scale * w.kl * 0.5 * (sigma * sigma - 1.0);
  }
  const bool mixer = s.shape.tokens > 0;
  if (!mixer && s.encoder.layers.empty()) {
    s.mean_head.backward(x, std::span<const double>(e.mean), dmean, g.mean_head);
    s.logvar_head.backward(x, std::span<const double>(e.logvar), dlogvar, g.logvar_head);
    return;
  }
  const auto& h = s.encoder.layers.empty() ? e.mixed : e.trace.back();
  std::vector<double> dh(h.size(), 0.0);
  std::vector<double> dh2(h.size(), 0.0);
  s.mean_head.backward(std::span<const double>(h), std::span<const double>(e.mean), dmean, g.mean_head, dh);
  s.logvar_head.backward(std::span<const double>(h), std::span<const double>(e.logvar), dlogvar, g.logvar_head, dh2);
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh2[i];
  if (!mixer) {
    s.encoder.backward(x, e.trace, std::move(dh), g.encoder);
    return;
  }
  if (s.encoder.layers.empty()) {
    detail::mix_backward(s, x, e, dh, g);
    return;
  }
  std::vector<double> dmixed(e.mixed.size(), 0.0);
  s.encoder.backward(std::span<const double>(e.mixed), e.trace, std::move(dh), g.encoder, dmixed);
  detail::mix_backward(s, x, e, dmixed, g);
}

struct InverseResult {
  double loss = 0.0;
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> input;
  DenseNet::Trace trace;
};

/// log-sum-exp of a vector, shifted by its maximum.
inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

/// Cross-entropy of the first action given (z_t, z_{t+k}, k).
inline InverseResult inverse_loss(const EncoderStack& s, std::span<const double> z_t, std::span<const double> z_tk, int k,
                                  int action) {
  if (k < 1 || k > s.shape.k_max) throw ConfigError("horizon k=" + std::to_string(k) + " outside [1, k_max]");
  if (action < 0 || action >= s.shape.n_actions) throw ConfigError("action out of range");
  InverseResult r;
  const std::size_t d = s.shape.bottleneck_dim;
  const std::size_t e = s.shape.k_embed_dim;
  r.input.resize(2 * d + e);
  std::copy(z_t.begin(), z_t.end(), r.input.begin());
  std::copy(z_tk.begin(), z_tk.end(), r.input.begin() + static_cast<std::ptrdiff_t>(d));
  std::copy_n(s.k_embedding.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(k - 1) * e), e,
              r.input.begin() + static_cast<std::ptrdiff_t>(2 * d));
  s.trunk.forward(std::span<const double>(r.input), r.trace);
  r.logits = r.trace.back();
  const double lse = log_sum_exp(r.logits);
  r.probs.resize(r.logits.size());
  for (std::size_t a = 0; a < r.logits.size(); ++a) r.probs[a] = std::exp(r.logits[a] - lse);
  r.loss = lse - r.logits[static_cast<std::size_t>(action)];
  return r;
}

/// Backward of scale * inverse loss; returns gradients for z_t and z_{t+k}.
inline void inverse_backward(const EncoderStack& s, const InverseResult& r, int k, int action, double scale,
                             EncoderStack& g, std::vector<double>& dz_t, std::vector<double>& dz_tk) {
  std::vector<double> dlogits(r.probs.size());
  for (std::size_t a = 0; a < r.probs.size(); ++a) {
    dlogits[a] = scale * (r.probs[a] - (static_cast<int>(a) == action ? 1.0 : 0.0));
  }
  std::vector<double> din(r.input.size(), 0.0);
  s.trunk.backward(std::span<const double>(r.input), r.trace, std::move(dlogits), g.trunk, din);
  const std::size_t d = s.shape.bottleneck_dim;
  const std::size_t e = s.shape.k_embed_dim;
  dz_t.assign(din.begin(), din.begin() + static_cast<std::ptrdiff_t>(d));
  dz_tk.assign(din.begin() + static_cast<std::ptrdiff_t>(d), din.begin() + static_cast<std::ptrdiff_t>(2 * d));
  for (std::size_t i = 0; i < e; ++i) g.k_embedding[static_cast<std::size_t>(k - 1) * e + i] += din[2 * d + i];
}

/// One (x_t, x_{t+k}, a_t, k) training tuple.
struct InverseSample {
  SparseInput x_t;
  SparseInput x_tk;
  int action = 0;
  int k = 1;
};

struct BatchLoss {
  double total = 0.0;
  double inverse = 0.0;
  double kl = 0.0;
  double vq = 0.0;
  double commit = 0.0;
  double accuracy = 0.0;
};

/// Mean loss over the batch and its gradient accumulated into g (which is
/// not cleared here). Codes selected during the pass are appended to used.
inline BatchLoss inverse_batch_gradient(const EncoderStack& s, std::span<const InverseSample> batch, Rng* rng,
                                        EncoderStack& g, std::vector<int>* used = nullptr) {
  BatchLoss out;
  if (batch.empty()) return out;
  const double scale = 1.0 / static_cast<double>(batch.size());
  EncodeOptions opt;
  opt.rng = rng;
  std::vector<double> dz_t;
  std::vector<double> dz_tk;
  for (const auto& smp : batch) {
    const Encoding a = encode(s, smp.x_t, opt);
    const Encoding b = encode(s, smp.x_tk, opt);
    const InverseResult r = inverse_loss(s, a.quantized, b.quantized, smp.k, smp.action);
    inverse_backward(s, r, smp.k, smp.action, scale, g, dz_t, dz_tk);
    encode_backward(s, smp.x_t, a, dz_t, scale, g);
    encode_backward(s, smp.x_tk, b, dz_tk, scale, g);
    out.inverse += scale * r.loss;
    out.kl += scale * (a.kl + b.kl);
    out.vq += scale * (a.vq_loss + b.vq_loss);
    out.commit += scale * (a.commit_loss + b.commit_loss);
    const auto best = std::max_element(r.probs.begin(), r.probs.end()) - r.probs.begin();
    out.accuracy += scale * (best == smp.action ? 1.0 : 0.0);
    if (used) {
      used->push_back(a.code);
      used->push_back(b.code);
    }
  }
  const auto& w = s.weights;
  out.total = out.inverse + w.kl * out.kl + w.vq * out.vq + w.commit * out.commit;
  return out;
}

/// Adaptive-moment optimizer over the flat tensor list of a model.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled decay applied to weight matrices only.
  double weight_decay = 0.0;
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void update(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads) {
    if (params.size() != grads.size()) throw ConfigError("parameter and gradient lists differ");
    for (const auto& g : grads) {
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        if (!std::isfinite(g.data[i])) {
          throw NumericError("non-finite gradient at " + g.path + "[" + std::to_string(i) + "]");
        }
      }
    }
    if (m.empty()) {
      for (const auto& p : params) {
        m.emplace_back(p.data.size(), 0.0);
        v.emplace_back(p.data.size(), 0.0);
      }
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto p = params[t].data;
      auto g = grads[t].data;
      auto& mt = m[t];
      auto& vt = v[t];
      const bool decay = weight_decay > 0.0 && params[t].path.ends_with(".weight");
      if (decay) {
        for (auto& x : p) x -= lr * weight_decay * x;
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        mt[i] = beta1 * mt[i] + (1.0 - beta1) * g[i];
        vt[i] = beta2 * vt[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (mt[i] / c1) / (std::sqrt(vt[i] / c2) + eps);
      }
    }
  }
};

/// One optimizer update on the inverse objective.
inline BatchLoss grad_step(EncoderStack& s, std::span<const InverseSample> batch, Adam& opt, Rng* rng,
                           EncoderStack& scratch, std::vector<int>* used = nullptr) {
  zero(scratch);
  const BatchLoss loss = inverse_batch_gradient(s, batch, rng, scratch, used);
  opt.update(tensors(s), tensors(scratch));
  return loss;
}

// ---------------------------------------------------------------------------
// Finite-difference checking

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst;
};

/// Relative error |a - n| / max(|a|, |n|, floor). Gradients smaller than the
/// floor are compared in absolute terms.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences on parameters sampled from every tensor in proportion
/// to its size (at least two probes per tensor).
template <class LossFn>
GradCheckReport grad_check(const std::vector<TensorRef>& params, const std::vector<TensorRef>& analytic, LossFn&& loss,
                           double eps, std::size_t n_probe, Rng& rng) {
  if (eps < 1e-7 || eps > 1e-3) throw ConfigError("grad_check eps must lie in [1e-7, 1e-3]");
  std::size_t total = 0;
  for (const auto& p : params) total += p.data.size();
  GradCheckReport rep;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto size = params[t].data.size();
    if (size == 0) continue;
    const auto share = std::max<std::size_t>(2, (n_probe * size + total - 1) / total);
    for (std::size_t n = 0; n < share; ++n) {
      const std::size_t i = rng.uniform_index(size);
      double& p = params[t].data[i];
      const double saved = p;
      p = saved + eps;
      const double up = loss();
      p = saved - eps;
      const double down = loss();
      p = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[t].data[i], numeric);
      ++rep.probes;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst = params[t].path + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

/// Differentiable surrogate used for checking the full stack in eval mode:
/// quantization is replaced by the identity on the inverse-loss path (the
/// straight-through route) while the vq and commit terms use the code
/// assigned at the base point with stop-gradient values frozen there.
struct SurrogateSample {
  std::vector<double> x_t;
  std::vector<double> x_tk;
  int action = 0;
  int k = 1;
};

namespace detail {

inline SparseInput dense_view(const std::vector<double>& x, std::vector<std::uint32_t>& idx) {
  idx.resize(x.size());
  std::iota(idx.begin(), idx.end(), 0u);
  return {x.size(), idx, x};
}

}  // namespace detail

struct SurrogateBase {
  FrozenTargets t;
  FrozenTargets tk;
};

inline SurrogateBase surrogate_base(const EncoderStack& s, const SurrogateSample& smp) {
  std::vector<std::uint32_t> i1, i2;
  const auto a = encode(s, detail::dense_view(smp.x_t, i1));
  const auto b = encode(s, detail::dense_view(smp.x_tk, i2));
  auto pin = [&](const Encoding& e) {
    const int code = nearest_code(s, e.z);
    const auto c = s.code_vector(code);
    return FrozenTargets{code, e.z, std::vector<double>(c.begin(), c.end())};
  };
  return {pin(a), pin(b)};
}

/// Surrogate loss value and, when g is non-null, its analytic gradient.
inline double surrogate_loss(const EncoderStack& s, const SurrogateSample& smp, const SurrogateBase& base,
                             EncoderStack* g = nullptr) {
  std::vector<std::uint32_t> i1, i2;
  const auto x1 = detail::dense_view(smp.x_t, i1);
  const auto x2 = detail::dense_view(smp.x_tk, i2);
  EncodeOptions o1{nullptr, true, &base.t};
  EncodeOptions o2{nullptr, true, &base.tk};
  const auto a = encode(s, x1, o1);
  const auto b = encode(s, x2, o2);
  const auto r = inverse_loss(s, a.quantized, b.quantized, smp.k, smp.action);
  const auto& w = s.weights;
  const double value =
      r.loss + w.kl * (a.kl + b.kl) + w.vq * (a.vq_loss + b.vq_loss) + w.commit * (a.commit_loss + b.commit_loss);
  if (g) {
    std::vector<double> dz_t, dz_tk;
    inverse_backward(s, r, smp.k, smp.action, 1.0, *g, dz_t, dz_tk);
    encode_backward(s, x1, a, dz_t, 1.0, *g);
    encode_backward(s, x2, b, dz_tk, 1.0, *g);
  }
  return value;
}

/// Max relative error between the analytic and central-difference gradients
/// of the surrogate loss. corrupt, when given, edits the analytic gradient
/// before comparison (fault-injection hook for tests).
inline GradCheckReport grad_check_stack(EncoderStack s, const SurrogateSample& smp, double eps, std::size_t n_probe,
                                        Rng& rng, const std::function<void(EncoderStack&)>& corrupt = {}) {
  const auto base = surrogate_base(s, smp);
  EncoderStack g = s.zeros_like();
  surrogate_loss(s, smp, base, &g);
  if (corrupt) corrupt(g);
  return grad_check(tensors(s), tensors(g), [&] { return surrogate_loss(s, smp, base); }, eps, n_probe, rng);
}

// ---------------------------------------------------------------------------
// Checkpoints: plain text, one tensor per block, values as hex floats so the
// round trip is bit-exact.

inline constexpr std::string_view kCheckpointMagic = "acstate-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& os, const EncoderStack& s) {
  const auto& sh = s.shape;
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "shape " << sh.in_dim << ' ' << sh.hidden << ' ' << sh.tokens << ' ' << sh.encoder_layers << ' ' << sh.bottleneck_dim << ' '
     << sh.codes << ' ' << sh.k_max << ' ' << sh.k_embed_dim << ' ' << sh.head_hidden << ' ' << sh.n_actions << ' '
     << (sh.decoder ? 1 : 0) << '\n';
  os << std::hexfloat;
  os << "weights " << s.weights.kl << ' ' << s.weights.vq << ' ' << s.weights.commit << ' ' << (s.use_codebook ? 1 : 0)
     << '\n';
  for_each_tensor(s, [&](const std::string& path, std::span<const double> d) {
    os << "tensor " << path << ' ' << d.size() << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) os << d[i] << ((i + 1) % 8 == 0 || i + 1 == d.size() ? '\n' : ' ');
  });
  os << std::defaultfloat;
}

inline double parse_hexfloat(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str()) throw ConfigError("checkpoint: bad number '" + tok + "'");
  return v;
}

inline EncoderStack load_checkpoint(std::istream& is) {
  while ((is >> std::ws) && is.peek() == '#') is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic) throw ConfigError("checkpoint: bad header");
  if (version != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  std::string tag;
  StackShape sh;
  int dec = 0;
  if (!(is >> tag >> sh.in_dim >> sh.hidden >> sh.tokens >> sh.encoder_layers >> sh.bottleneck_dim >> sh.codes >> sh.k_max >>
        sh.k_embed_dim >> sh.head_hidden >> sh.n_actions >> dec) ||
      tag != "shape") {
    throw ConfigError("checkpoint: bad shape line");
  }
  sh.decoder = dec != 0;
  std::string kl, vq, commit;
  int use_cb = 1;
  if (!(is >> tag >> kl >> vq >> commit >> use_cb) || tag != "weights") throw ConfigError("checkpoint: bad weights line");
  Rng rng(0);
  EncoderStack s = EncoderStack::init(sh, {parse_hexfloat(kl), parse_hexfloat(vq), parse_hexfloat(commit)}, rng);
  s.use_codebook = use_cb != 0;
  for_each_tensor(s, [&](const std::string& path, std::span<double> d) {
    std::string t, name;
    std::size_t n = 0;
    if (!(is >> t >> name >> n) || t != "tensor" || name != path || n != d.size()) {
      throw ConfigError("checkpoint: expected tensor " + path);
    }
    std::string tok;
    for (auto& v : d) {
      if (!(is >> tok)) throw ConfigError("checkpoint: truncated tensor " + path);
      v = parse_hexfloat(tok);
    }
  });
  return s;
}

}  // namespace acstate::nn
