#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ccl/error.hpp"
#include "ccl/numerics.hpp"
#include "ccl/random.hpp"

namespace ccl {

// Layer widths of an MLP encoder: input_dim -> widths[0] -> ... -> widths.back().
// The last width is the embedding dimension D.
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;

  std::size_t embedding_dim() const { return widths.empty() ? 0 : widths.back(); }
  bool operator==(const Architecture&) const = default;
};

struct Layer {
  Matrix weight;  // out × in
  std::vector<double> bias;

  bool operator==(const Layer&) const = default;
};

// Weights of one encoder. Gradients and optimizer velocity use the same shape.
struct EncoderParams {
  Architecture arch;
  std::vector<Layer> layers;

  bool operator==(const EncoderParams&) const = default;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  template <typename Fn>
  void for_each_value(Fn&& fn) {
    for (auto& l : layers) {
      for (double& w : l.weight.data()) fn(w);
      for (double& b : l.bias) fn(b);
    }
  }
  template <typename Fn>
  void for_each_value(Fn&& fn) const {
    for (const auto& l : layers) {
      for (double w : l.weight.data()) fn(w);
      for (double b : l.bias) fn(b);
    }
  }
};

using EncoderGrads = EncoderParams;

enum class Provenance : std::uint8_t { kNew, kOld };

// L2-normalised embeddings, one row per sample.
struct FeatureBatch {
  Matrix embeddings;
  std::vector<Provenance> provenance;
  std::vector<std::size_t> source;

  std::size_t size() const { return embeddings.rows(); }
  std::size_t dim() const { return embeddings.cols(); }
};

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre_activations;  // per layer, before ReLU
  std::vector<Matrix> activations;      // per hidden layer, after ReLU
  Matrix output;                        // final affine output, before normalisation
  std::vector<double> norms;
};

struct ForwardResult {
  FeatureBatch features;
  ForwardTrace trace;
};

inline EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams z;
  z.arch = p.arch;
  z.layers.reserve(p.layers.size());
  for (const auto& l : p.layers)
    z.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)});
  return z;
}

inline void check_same_architecture(const EncoderParams& a, const EncoderParams& b) {
  if (a.arch != b.arch || a.layers.size() != b.layers.size()) throw Error("architecture mismatch");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight.rows() != b.layers[i].weight.rows() ||
        a.layers[i].weight.cols() != b.layers[i].weight.cols() ||
        a.layers[i].bias.size() != b.layers[i].bias.size())
      throw Error("architecture mismatch");
  }
}

// a += scale * b
inline void axpy(EncoderParams& a, const EncoderParams& b, double scale) {
  check_same_architecture(a, b);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    auto& w = a.layers[i].weight.data();
    const auto& bw = b.layers[i].weight.data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] += scale * bw[j];
    auto& bias = a.layers[i].bias;
    for (std::size_t j = 0; j < bias.size(); ++j) bias[j] += scale * b.layers[i].bias[j];
  }
}

inline std::vector<double> flatten(const EncoderParams& p) {
  std::vector<double> out;
  out.reserve(p.parameter_count());
  p.for_each_value([&](double v) { out.push_back(v); });
  return out;
}

inline void unflatten(EncoderParams& p, std::span<const double> values) {
  if (values.size() != p.parameter_count()) throw Error("architecture mismatch");
  std::size_t i = 0;
  p.for_each_value([&](double& v) { v = values[i++]; });
}

// Glorot-uniform weights, zero biases.
inline EncoderParams init_params(const Architecture& arch, std::uint64_t seed) {
  if (arch.widths.empty()) throw Error("empty architecture");
  if (arch.input_dim == 0) throw Error("layer widths must be at least 1");
  for (auto w : arch.widths)
    if (w == 0) throw Error("layer widths must be at least 1");

  Rng rng(seed);
  EncoderParams p;
  p.arch = arch;
  std::size_t in = arch.input_dim;
  for (std::size_t out : arch.widths) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Layer l{Matrix(out, in), std::vector<double>(out, 0.0)};
    for (double& w : l.weight.data()) w = dist(rng);
    p.layers.push_back(std::move(l));
    in = out;
  }
  return p;
}

// Affine + ReLU on hidden layers, affine on the last, then per-row L2
// normalisation. Every row is flagged NEW with source index = row index;
// callers relabel as needed.
inline ForwardResult forward(const EncoderParams& params, const Matrix& batch) {
  if (batch.cols() != params.arch.input_dim) throw Error("dimension mismatch");
  ForwardResult r;
  ForwardTrace& t = r.trace;
  t.input = batch;
  const Matrix* x = &t.input;
  const std::size_t n_layers = params.layers.size();
  for (std::size_t li = 0; li < n_layers; ++li) {
    const Layer& layer = params.layers[li];
    const std::size_t out_dim = layer.weight.rows();
    Matrix pre(x->rows(), out_dim);
    for (std::size_t i = 0; i < x->rows(); ++i) {
      auto xi = x->row(i);
      for (std::size_t o = 0; o < out_dim; ++o) pre(i, o) = layer.bias[o] + dot(layer.weight.row(o), xi);
    }
    t.pre_activations.push_back(pre);
    if (li + 1 < n_layers) {
      for (double& v : pre.data()) v = v < 0.0 ? 0.0 : v;  // keeps NaN visible to the divergence check
      t.activations.push_back(std::move(pre));
      x = &t.activations.back();
    } else {
      t.output = std::move(pre);
    }
  }

  t.norms.resize(t.output.rows());
  Matrix z = t.output;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double n = norm(z.row(i));
    if (n < 1e-12) throw Error("degenerate embedding");  // NaN passes through to the loss check
    t.norms[i] = n;
    for (double& v : z.row(i)) v /= n;
  }
  r.features.embeddings = std::move(z);
  r.features.provenance.assign(batch.rows(), Provenance::kNew);
  r.features.source.resize(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i) r.features.source[i] = i;
  return r;
}

inline Matrix embed(const EncoderParams& params, const Matrix& batch) {
  return forward(params, batch).features.embeddings;
}

// Gradient of sum_ij grad_embeddings[i][j] * z[i][j] with respect to every
// weight and bias. The normalisation Jacobian per row is (I - z z^T) / ||u||.
inline EncoderGrads backward(const ForwardTrace& trace, const EncoderParams& params,
                             const Matrix& grad_embeddings) {
  if (grad_embeddings.rows() != trace.output.rows() || grad_embeddings.cols() != trace.output.cols())
    throw Error("gradient shape mismatch");

  EncoderGrads g = zeros_like(params);
  const std::size_t batch = trace.output.rows();

  // dL/du for u the pre-normalisation output.
  Matrix delta(batch, trace.output.cols());
  for (std::size_t i = 0; i < batch; ++i) {
    const double n = trace.norms[i];
    auto u = trace.output.row(i);
    auto gz = grad_embeddings.row(i);
    double zg = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) zg += (u[j] / n) * gz[j];
    for (std::size_t j = 0; j < u.size(); ++j) delta(i, j) = (gz[j] - (u[j] / n) * zg) / n;
  }

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Layer& layer = params.layers[li];
    const Matrix& x = li == 0 ? trace.input : trace.activations[li - 1];
    Layer& gl = g.layers[li];
    for (std::size_t i = 0; i < batch; ++i) {
      auto d = delta.row(i);
      auto xi = x.row(i);
      for (std::size_t o = 0; o < d.size(); ++o) {
        if (d[o] == 0.0) continue;
        gl.bias[o] += d[o];
        auto gw = gl.weight.row(o);
        for (std::size_t k = 0; k < xi.size(); ++k) gw[k] += d[o] * xi[k];
      }
    }
    if (li == 0) break;
    const Matrix& pre = trace.pre_activations[li - 1];
    Matrix prev(batch, layer.weight.cols());
    for (std::size_t i = 0; i < batch; ++i) {
      auto d = delta.row(i);
      auto p = prev.row(i);
      for (std::size_t o = 0; o < d.size(); ++o) {
        if (d[o] == 0.0) continue;
        auto w = layer.weight.row(o);
        for (std::size_t k = 0; k < p.size(); ++k) p[k] += d[o] * w[k];
      }
      for (std::size_t k = 0; k < p.size(); ++k)
        if (!(pre(i, k) > 0.0)) p[k] = 0.0;
    }
    delta = std::move(prev);
  }
  return g;
}

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
// An empty velocity is initialised to zeros.
inline void sgd_step(EncoderParams& params, const EncoderGrads& grads, const SgdConfig& cfg,
                     EncoderGrads& velocity) {
  if (!(cfg.lr > 0.0)) throw Error("learning rate must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
  if (!(cfg.weight_decay >= 0.0)) throw Error("weight decay must be non-negative");
  check_same_architecture(params, grads);
  bool finite = true;
  grads.for_each_value([&](double v) { finite = finite && std::isfinite(v); });
  if (!finite) throw DivergedError("diverged");
  if (velocity.layers.empty()) velocity = zeros_like(params);
  check_same_architecture(params, velocity);

  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& v) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        v[j] = cfg.momentum * v[j] + g[j] + cfg.weight_decay * p[j];
        p[j] -= cfg.lr * v[j];
      }
    };
    update(params.layers[li].weight.data(), grads.layers[li].weight.data(), velocity.layers[li].weight.data());
    update(params.layers[li].bias, grads.layers[li].bias, velocity.layers[li].bias);
  }
}

// theta_target <- m * theta_target + (1 - m) * theta_source, parameter-wise.
inline void momentum_update(EncoderParams& target, const EncoderParams& source, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw Error("momentum coefficient must lie in [0, 1]");
  check_same_architecture(target, source);
  for (std::size_t li = 0; li < target.layers.size(); ++li) {
    auto blend = [m](std::vector<double>& t, const std::vector<double>& s) {
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = m * t[j] + (1.0 - m) * s[j];
    };
    blend(target.layers[li].weight.data(), source.layers[li].weight.data());
    blend(target.layers[li].bias, source.layers[li].bias);
  }
}

// Checkpoint layout: "CCL1", u32 layer count, u32 widths (input first), then
// per layer the weight (row-major) and bias as little-endian f64.
namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::size_t pos) : buf_(buf), pos_(pos) {}
  std::uint64_t take(int nbytes) {
    if (pos_ + static_cast<std::size_t>(nbytes) > buf_.size()) throw CheckpointError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  double f64() { return std::bit_cast<double>(take(8)); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::size_t pos_;
};

}  // namespace detail

inline std::string serialize_checkpoint(const EncoderParams& p) {
  std::string out = "CCL1";
  detail::put_u32(out, static_cast<std::uint32_t>(p.layers.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(p.arch.input_dim));
  for (auto w : p.arch.widths) detail::put_u32(out, static_cast<std::uint32_t>(w));
  for (const auto& l : p.layers) {
    for (double w : l.weight.data()) detail::put_f64(out, w);
    for (double b : l.bias) detail::put_f64(out, b);
  }
  return out;
}

inline EncoderParams deserialize_checkpoint(const std::string& buf) {
  if (buf.size() < 4 || buf.compare(0, 4, "CCL1") != 0) throw CheckpointError("bad checkpoint magic");
  detail::ByteReader rd(buf, 4);
  const std::uint32_t n_layers = rd.u32();
  if (n_layers == 0 || n_layers > 1024) throw CheckpointError("bad checkpoint architecture");
  Architecture arch;
  arch.input_dim = rd.u32();
  for (std::uint32_t i = 0; i < n_layers; ++i) arch.widths.push_back(rd.u32());
  if (arch.input_dim == 0) throw CheckpointError("bad checkpoint architecture");
  for (auto w : arch.widths)
    if (w == 0) throw CheckpointError("bad checkpoint architecture");

  EncoderParams p;
  p.arch = arch;
  std::size_t in = arch.input_dim;
  for (std::size_t out : arch.widths) {
    Layer l{Matrix(out, in), std::vector<double>(out)};
    for (double& w : l.weight.data()) w = rd.f64();
    for (double& b : l.bias) b = rd.f64();
    p.layers.push_back(std::move(l));
    in = out;
  }
  if (!rd.done()) throw CheckpointError("trailing bytes in checkpoint");
  return p;
}

inline void save_checkpoint(const std::string& path, const EncoderParams& p) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  const std::string bytes = serialize_checkpoint(p);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("cannot write " + path);
}

inline EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ccl
