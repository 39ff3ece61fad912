#pragma once

// Minimal deterministic MLP core: dense tensors and forward/backward through a
// stack of affine+activation layers, plus Adam and the loss primitives. A
// central-difference gradient oracle checks the backward pass. Matrix
// products go through Eigen maps over the tensors' own storage.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lpaf/binio.hpp"
#include "lpaf/error.hpp"
#include "lpaf/rng.hpp"

namespace lpaf {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

/// Storage aligned to Eigen's widest packet. Eigen picks its scalar prologue
/// and reduction order from the buffer address, so unaligned storage makes
/// results depend on where the allocator happened to put the data.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

/// Row-major dense tensor of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  Storage data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  Tensor(std::vector<std::size_t> s, Storage d) : shape(std::move(s)), data(std::move(d)) {
    require(data.size() == count(shape), ErrorKind::Dimension, "dimension error: data size does not match shape");
  }

  Tensor(std::vector<std::size_t> s, std::initializer_list<double> d) : Tensor(std::move(s), Storage(d)) {}

  Tensor(std::vector<std::size_t> s, const std::vector<double>& d) : shape(std::move(s)), data(d.begin(), d.end()) {
    require(data.size() == count(shape), ErrorKind::Dimension, "dimension error: data size does not match shape");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    for (auto d : s) require(d > 0, ErrorKind::Dimension, "dimension error: zero-sized axis");
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  /// Leading extent for a 2-D tensor, 1 for a vector.
  std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  MatrixMap matrix() { return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())}; }
  ConstMatrixMap matrix() const {
    return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class Activation : std::uint8_t { Identity = 0, Tanh = 1 };

struct Layer {
  Tensor weight; // [out x in]
  Tensor bias;   // [out]
  Activation activation = Activation::Identity;

  std::size_t in_dim() const { return weight.shape[1]; }
  std::size_t out_dim() const { return weight.shape[0]; }

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct MlpParams {
  std::vector<Layer> layers;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  void validate() const {
    require(!layers.empty(), ErrorKind::Dimension, "dimension error: MLP has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      require(l.weight.rank() == 2 && l.bias.rank() == 1 && l.bias.shape[0] == l.out_dim(), ErrorKind::Dimension,
              "dimension error: layer " + std::to_string(k) + " weight/bias mismatch");
      if (k + 1 < layers.size())
        require(layers[k + 1].in_dim() == l.out_dim(), ErrorKind::Dimension,
                "dimension error: layer " + std::to_string(k) + " does not chain");
    }
    require(layers.back().activation == Activation::Identity, ErrorKind::Dimension,
            "dimension error: final activation must be identity");
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct LayerGrads {
  Tensor weight;
  Tensor bias;
};
using MlpGrads = std::vector<LayerGrads>;

/// Glorot-uniform weights, zero biases.
inline MlpParams init_mlp(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts,
                          std::uint64_t seed) {
  require(dims.size() >= 2 && acts.size() == dims.size() - 1, ErrorKind::Dimension,
          "dimension error: init_mlp needs one activation per layer");
  Rng rng(seed);
  MlpParams p;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    Layer l{Tensor({dims[k + 1], dims[k]}), Tensor({dims[k + 1]}), acts[k]};
    double limit = std::sqrt(6.0 / static_cast<double>(dims[k] + dims[k + 1]));
    for (auto& w : l.weight.data) w = uniform(rng, -limit, limit);
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

struct MlpCache {
  std::vector<Tensor> inputs; // input to layer k, [N x in_k]
  std::vector<Tensor> pre;    // pre-activation of layer k, [N x out_k]
  bool vector_input = false;
};

struct MlpForward {
  Tensor y;
  MlpCache cache;
};

/// x is [in] or [N x in]; y has the matching rank.
inline MlpForward mlp_forward(const MlpParams& params, const Tensor& x) {
  require(x.rank() == 1 || x.rank() == 2, ErrorKind::Dimension, "dimension error: input must be rank 1 or 2");
  require(x.cols() == params.in_dim(), ErrorKind::Dimension,
          "dimension error: input width " + std::to_string(x.cols()) + " != " + std::to_string(params.in_dim()));
  const std::size_t n = x.rows();
  MlpForward out;
  out.cache.vector_input = x.rank() == 1;
  Tensor h({n, x.cols()}, x.data);
  for (const auto& layer : params.layers) {
    Tensor z({n, layer.out_dim()});
    z.matrix().noalias() = h.matrix() * layer.weight.matrix().transpose();
    z.matrix().rowwise() += ConstVectorMap(layer.bias.data.data(), layer.bias.size()).transpose();
    Tensor a = z;
    if (layer.activation == Activation::Tanh)
      for (auto& v : a.data) v = std::tanh(v);
    out.cache.inputs.push_back(std::move(h));
    out.cache.pre.push_back(std::move(z));
    h = std::move(a);
  }
  if (out.cache.vector_input) h.shape = {h.cols()};
  out.y = std::move(h);
  return out;
}

struct MlpBackward {
  MlpGrads grads;
  Tensor grad_x; // empty when not requested
};

/// Reverse pass. `need_grad_x = false` skips the first layer's input
/// gradient, the largest product in the fusion network.
inline MlpBackward mlp_backward(const MlpParams& params, const MlpCache& cache, const Tensor& grad_y,
                                bool need_grad_x = true) {
  const std::size_t layers = params.layers.size();
  require(cache.inputs.size() == layers && cache.pre.size() == layers, ErrorKind::Dimension,
          "dimension error: cache does not match network depth");
  const std::size_t n = cache.inputs.front().rows();
  require(grad_y.size() == n * params.out_dim() && grad_y.cols() == params.out_dim(), ErrorKind::Dimension,
          "dimension error: grad_y does not match forward output");
  for (std::size_t k = 0; k < layers; ++k)
    require(cache.inputs[k].cols() == params.layers[k].in_dim() && cache.pre[k].cols() == params.layers[k].out_dim(),
            ErrorKind::Dimension, "dimension error: stale cache");

  MlpBackward out;
  out.grads.resize(layers);
  Tensor g({n, params.out_dim()}, grad_y.data);
  for (std::size_t k = layers; k-- > 0;) {
    const auto& layer = params.layers[k];
    if (layer.activation == Activation::Tanh) {
      const auto& z = cache.pre[k].data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double t = std::tanh(z[i]);
        g.data[i] *= 1.0 - t * t;
      }
    }
    auto& lg = out.grads[k];
    lg.weight = Tensor({layer.out_dim(), layer.in_dim()});
    lg.weight.matrix().noalias() = g.matrix().transpose() * cache.inputs[k].matrix();
    lg.bias = Tensor({layer.out_dim()});
    VectorMap(lg.bias.data.data(), layer.out_dim()) = g.matrix().colwise().sum().transpose();
    if (k > 0 || need_grad_x) {
      Tensor gin({n, layer.in_dim()});
      gin.matrix().noalias() = g.matrix() * layer.weight.matrix();
      g = std::move(gin);
    }
  }
  if (need_grad_x) {
    if (cache.vector_input) g.shape = {g.cols()};
    out.grad_x = std::move(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptState {
  AdamConfig hp;
  std::uint64_t step = 0;
  std::vector<Tensor> m; // one per weight/bias tensor, in layer order
  std::vector<Tensor> v;
};

inline OptState make_opt_state(const MlpParams& params, AdamConfig hp) {
  OptState s;
  s.hp = hp;
  for (const auto& l : params.layers) {
    s.m.emplace_back(l.weight.shape);
    s.m.emplace_back(l.bias.shape);
    s.v.emplace_back(l.weight.shape);
    s.v.emplace_back(l.bias.shape);
  }
  return s;
}

/// One bias-corrected Adam update on flat storage. `step` is the 1-based
/// count after this update.
inline void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, const AdamConfig& hp, std::uint64_t step) {
  require(param.size() == grad.size() && m.size() == param.size() && v.size() == param.size(), ErrorKind::Dimension,
          "dimension error: adam shapes differ");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  using Arr = Eigen::Map<Eigen::ArrayXd>;
  const auto n = static_cast<Eigen::Index>(param.size());
  Arr p(param.data(), n), mm(m.data(), n), vv(v.data(), n);
  const Eigen::Map<const Eigen::ArrayXd> g(grad.data(), n);
  mm = hp.beta1 * mm + (1.0 - hp.beta1) * g;
  vv = hp.beta2 * vv + (1.0 - hp.beta2) * g * g;
  p -= hp.lr * (mm / c1) / ((vv / c2).sqrt() + hp.eps);
}

inline void adam_step(MlpParams& params, const MlpGrads& grads, OptState& opt) {
  require(grads.size() == params.layers.size() && opt.m.size() == 2 * grads.size(), ErrorKind::Dimension,
          "dimension error: gradient/optimizer layout does not match parameters");
  for (const auto& g : grads)
    if (!g.weight.all_finite() || !g.bias.all_finite()) throw Error(ErrorKind::Divergence, "divergence: non-finite gradient");
  ++opt.step;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto& l = params.layers[k];
    require(grads[k].weight.shape == l.weight.shape && grads[k].bias.shape == l.bias.shape, ErrorKind::Dimension,
            "dimension error: gradient shape mismatch in layer " + std::to_string(k));
    adam_update(l.weight.span(), grads[k].weight.span(), opt.m[2 * k].span(), opt.v[2 * k].span(), opt.hp, opt.step);
    adam_update(l.bias.span(), grads[k].bias.span(), opt.m[2 * k + 1].span(), opt.v[2 * k + 1].span(), opt.hp,
                opt.step);
  }
}

// ---------------------------------------------------------------------------
// Losses

struct LossResult {
  double value = 0.0;
  Tensor grad; // wrt pred
};

inline LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape == target.shape, ErrorKind::Dimension, "dimension error: mse shapes differ");
  const double n = static_cast<double>(pred.size());
  LossResult r{0.0, Tensor(pred.shape)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d / n;
  }
  r.value /= n;
  return r;
}

inline constexpr double kMinNorm = 1e-8;

/// 1 - cos(pred, target) over flat storage.
inline LossResult cosine_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape == target.shape, ErrorKind::Dimension, "dimension error: cosine shapes differ");
  const ConstVectorMap p(pred.data.data(), static_cast<Eigen::Index>(pred.size()));
  const ConstVectorMap t(target.data.data(), static_cast<Eigen::Index>(target.size()));
  const double np = p.norm(), nt = t.norm();
  require(np > kMinNorm && nt > kMinNorm, ErrorKind::DegenerateVector, "degenerate vector: norm below 1e-8");
  const double c = p.dot(t) / (np * nt);
  LossResult r{1.0 - c, Tensor(pred.shape)};
  VectorMap g(r.grad.data.data(), static_cast<Eigen::Index>(pred.size()));
  g = -(t / (np * nt) - (c / (np * np)) * p);
  return r;
}

// ---------------------------------------------------------------------------
// Gradient oracle

inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-5) {
  Tensor grad(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) throw Error(ErrorKind::OracleFault, "oracle fault: non-finite f");
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

/// max_i |a_i - b_i| / (max(|a_i|, |b_i|) + 1e-8)
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Dimension, "dimension error: relative error operands differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(std::abs(a[i]), std::abs(b[i])) + 1e-8;
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "LPAFW"            5 bytes
//   u32 layer_count
//   per layer:  u32 out, u32 in, u8 activation (0 identity, 1 tanh)
//   per layer:  f64 weight[out*in] (row-major), f64 bias[out]
//
// All integers and floats little-endian.

inline void save_params(std::ostream& os, const MlpParams& p) {
  p.validate();
  binio::put_magic(os, "LPAFW");
  binio::put_u32(os, static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    binio::put_u32(os, static_cast<std::uint32_t>(l.out_dim()));
    binio::put_u32(os, static_cast<std::uint32_t>(l.in_dim()));
    binio::put_u8(os, static_cast<std::uint8_t>(l.activation));
  }
  for (const auto& l : p.layers) {
    for (double w : l.weight.data) binio::put_f64(os, w);
    for (double b : l.bias.data) binio::put_f64(os, b);
  }
}

inline MlpParams load_params(std::istream& is) {
  binio::expect_magic(is, "LPAFW");
  const auto count = binio::get_u32(is);
  require(count > 0 && count < 1024, ErrorKind::Format, "checkpoint: implausible layer count");
  MlpParams p;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t out = binio::get_u32(is);
    const std::size_t in = binio::get_u32(is);
    const auto act = binio::get_u8(is);
    require(act <= 1, ErrorKind::Format, "checkpoint: unknown activation code");
    p.layers.push_back({Tensor({out, in}), Tensor({out}), static_cast<Activation>(act)});
  }
  for (auto& l : p.layers) {
    for (double& w : l.weight.data) w = binio::get_f64(is);
    for (double& b : l.bias.data) b = binio::get_f64(is);
  }
  p.validate();
  return p;
}

inline void save_params(const std::string& path, const MlpParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  save_params(os, p);
  if (!os) throw Error(ErrorKind::Io, "write failed: " + path);
}

inline MlpParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::MissingInput, "cannot open checkpoint " + path);
  return load_params(is);
}

inline std::string params_digest(const MlpParams& p) {
  Digest d;
  for (const auto& l : p.layers) {
    d.update(l.weight.data.data(), l.weight.size() * sizeof(double));
    d.update(l.bias.data.data(), l.bias.size() * sizeof(double));
  }
  return d.hex();
}

} // namespace lpaf
