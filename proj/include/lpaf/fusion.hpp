#pragma once

// Latent perspective fusion: a residual MLP that maps the latent of an
// auxiliary-view observation into the reference-view latent space,
//
//   fuse(z) = z + W2 tanh(W1 z + b1) + b2,
//
// with W2, b2 zero at initialization so an untrained module is exactly the
// identity. Alignment is measured per pair with either mean squared error or
// one minus cosine similarity, averaged over the batch.

#include <cstdint>
#include <string>
#include <string_view>

#include "lpaf/encoder.hpp"
#include "lpaf/nncore.hpp"

namespace lpaf {

enum class AlignKind { MSE, COS };

inline std::string_view to_string(AlignKind k) { return k == AlignKind::MSE ? "mse" : "cos"; }

inline AlignKind parse_align_kind(std::string_view s) {
  if (s == "mse" || s == "MSE") return AlignKind::MSE;
  if (s == "cos" || s == "COS") return AlignKind::COS;
  throw Error(ErrorKind::InvalidArgument, "unknown alignment kind: " + std::string(s));
}

inline constexpr std::size_t kFusionHidden = 512;

struct FusionModule {
  MlpParams mlp; // dim -> hidden (tanh) -> dim (identity)

  std::size_t dim() const { return mlp.in_dim(); }

  friend bool operator==(const FusionModule&, const FusionModule&) = default;
};

inline FusionModule make_fusion(std::uint64_t seed, std::size_t dim = kLatentDim, std::size_t hidden = kFusionHidden) {
  FusionModule f{init_mlp({dim, hidden, dim}, {Activation::Tanh, Activation::Identity}, seed)};
  auto& out = f.mlp.layers.back();
  std::fill(out.weight.data.begin(), out.weight.data.end(), 0.0);
  std::fill(out.bias.data.begin(), out.bias.data.end(), 0.0);
  return f;
}

inline void check_fusion_shape(const FusionModule& f) {
  f.mlp.validate();
  require(f.mlp.in_dim() == f.mlp.out_dim(), ErrorKind::Dimension, "dimension error: fusion must be square");
}

struct FusionForward {
  Tensor fused; // [N x D]
  MlpCache cache;
};

inline FusionForward fusion_forward(const FusionModule& f, const Tensor& z) {
  check_fusion_shape(f);
  require(z.rank() == 2 && z.cols() == f.dim(), ErrorKind::Dimension,
          "dimension error: fusion expects [N x " + std::to_string(f.dim()) + "]");
  auto fw = mlp_forward(f.mlp, z);
  for (std::size_t i = 0; i < z.size(); ++i) fw.y[i] += z[i];
  return {std::move(fw.y), std::move(fw.cache)};
}

/// Gradients of the fusion parameters (and optionally the input, residual
/// path included) given d loss / d fused.
inline MlpBackward fusion_backward(const FusionModule& f, const MlpCache& cache, const Tensor& grad_fused,
                                   bool need_grad_z = false) {
  auto bw = mlp_backward(f.mlp, cache, grad_fused, need_grad_z);
  if (need_grad_z)
    for (std::size_t i = 0; i < grad_fused.size(); ++i) bw.grad_x[i] += grad_fused[i];
  return bw;
}

inline Tensor fuse_batch(const FusionModule& f, const Tensor& z) { return fusion_forward(f, z).fused; }

inline LatentVec fuse(const FusionModule& f, const LatentVec& z) {
  require(z.values.size() == f.dim(), ErrorKind::Dimension, "dimension error: latent size does not match fusion");
  Tensor batch({1, f.dim()}, z.values.data);
  LatentVec out;
  out.values = Tensor({f.dim()}, fusion_forward(f, batch).fused.data);
  return out;
}

/// Batch-mean per-pair distance between fused rows and reference rows, with
/// its gradient wrt the fused rows.
inline LossResult align_distance(AlignKind kind, const Tensor& fused, const Tensor& ref) {
  require(fused.shape == ref.shape && fused.rank() == 2, ErrorKind::Dimension,
          "dimension error: alignment operands differ");
  const std::size_t n = fused.rows(), d = fused.cols();
  if (kind == AlignKind::MSE) return mse_loss(fused, ref);
  LossResult total{0.0, Tensor(fused.shape)};
  for (std::size_t i = 0; i < n; ++i) {
    Tensor p({d}, std::vector<double>(fused.data.begin() + i * d, fused.data.begin() + (i + 1) * d));
    Tensor t({d}, std::vector<double>(ref.data.begin() + i * d, ref.data.begin() + (i + 1) * d));
    const auto r = cosine_loss(p, t);
    total.value += r.value / static_cast<double>(n);
    for (std::size_t k = 0; k < d; ++k) total.grad[i * d + k] = r.grad[k] / static_cast<double>(n);
  }
  return total;
}

struct AlignmentLoss {
  double value = 0.0;
  MlpGrads grads;  // wrt fusion parameters
  Tensor grad_aux; // wrt z_aux
};

inline AlignmentLoss alignment_loss(AlignKind kind, const FusionModule& f, const Tensor& z_aux, const Tensor& z_ref) {
  require(!z_aux.data.empty() && !z_ref.data.empty(), ErrorKind::EmptyBatch, "empty batch");
  require(z_aux.rank() == 2 && z_aux.shape == z_ref.shape, ErrorKind::Dimension,
          "dimension error: alignment batches differ");
  auto fw = fusion_forward(f, z_aux);
  auto dist = align_distance(kind, fw.fused, z_ref);
  auto bw = fusion_backward(f, fw.cache, dist.grad, true);
  return {dist.value, std::move(bw.grads), std::move(bw.grad_x)};
}

} // namespace lpaf
