#pragma once

// Behavior-cloning head: a fixed unit-variance Gaussian over 2-D world-frame
// actions whose mean is an MLP of [latent ; task one-hot]. The negative
// log-likelihood reduces to 0.5 * ||a - mu||^2 up to a constant.

#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "lpaf/encoder.hpp"
#include "lpaf/fusion.hpp"
#include "lpaf/nncore.hpp"
#include "lpaf/worldgen.hpp"

namespace lpaf {

inline constexpr std::size_t kPolicyHidden = 256;

struct PolicyParams {
  MlpParams mlp; // (latent_dim + task_count) -> hidden (tanh) -> 2
  std::size_t task_count = world::kTaskCount;

  std::size_t latent_dim() const { return mlp.in_dim() - task_count; }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

inline PolicyParams make_policy(std::uint64_t seed, std::size_t latent_dim = kLatentDim,
                                std::size_t tasks = world::kTaskCount, std::size_t hidden = kPolicyHidden) {
  return {init_mlp({latent_dim + tasks, hidden, 2}, {Activation::Tanh, Activation::Identity}, seed), tasks};
}

struct ActionDist {
  Vec2 mean;
  static constexpr double kVariance = 1.0;

  double log_prob(Vec2 a) const {
    const Vec2 d = a - mean;
    return -0.5 * (d.x * d.x + d.y * d.y) - std::log(2.0 * std::numbers::pi);
  }
};

/// [z ; one_hot(task)] rows.
inline Tensor policy_input(const PolicyParams& p, const Tensor& z, std::span<const int> tasks) {
  require(z.rank() == 2 && z.cols() == p.latent_dim(), ErrorKind::Dimension,
          "dimension error: policy expects latents of width " + std::to_string(p.latent_dim()));
  require(tasks.size() == z.rows(), ErrorKind::Dimension, "dimension error: task batch length differs");
  const std::size_t n = z.rows(), d = z.cols(), w = d + p.task_count;
  Tensor x({n, w});
  for (std::size_t i = 0; i < n; ++i) {
    require(tasks[i] >= 0 && static_cast<std::size_t>(tasks[i]) < p.task_count, ErrorKind::TaskOutOfRange,
            "task_id out of range");
    std::copy(z.data.begin() + i * d, z.data.begin() + (i + 1) * d, x.data.begin() + i * w);
    x[i * w + d + static_cast<std::size_t>(tasks[i])] = 1.0;
  }
  return x;
}

inline Tensor policy_mean_batch(const PolicyParams& p, const Tensor& z, std::span<const int> tasks) {
  return mlp_forward(p.mlp, policy_input(p, z, tasks)).y;
}

inline ActionDist policy_forward(const PolicyParams& p, const LatentVec& z, int task_id) {
  const Tensor batch({1, z.values.size()}, z.values.data);
  const int tasks[1] = {task_id};
  const Tensor mu = policy_mean_batch(p, batch, tasks);
  return {{mu[0], mu[1]}};
}

struct ActionLoss {
  double value = 0.0;
  MlpGrads grads; // wrt policy parameters
  Tensor grad_z;  // wrt the latent rows, [N x latent_dim]
};

/// (1/N) sum_n 0.5 * ||a_n - mu_n||^2 with analytic gradients.
/// `actions` is [N x 2].
inline ActionLoss action_loss(const PolicyParams& p, const Tensor& z, std::span<const int> tasks,
                              const Tensor& actions, bool need_grad_z = true) {
  require(z.rank() == 2 && z.rows() >= 1, ErrorKind::EmptyBatch, "empty batch");
  require(actions.rank() == 2 && actions.rows() == z.rows() && actions.cols() == 2, ErrorKind::Dimension,
          "dimension error: actions must be [N x 2]");
  const std::size_t n = z.rows(), d = z.cols(), w = d + p.task_count;
  auto fw = mlp_forward(p.mlp, policy_input(p, z, tasks));
  ActionLoss out;
  Tensor grad_mu(fw.y.shape);
  for (std::size_t i = 0; i < fw.y.size(); ++i) {
    const double diff = fw.y[i] - actions[i];
    out.value += 0.5 * diff * diff / static_cast<double>(n);
    grad_mu[i] = diff / static_cast<double>(n);
  }
  auto bw = mlp_backward(p.mlp, fw.cache, grad_mu, need_grad_z);
  out.grads = std::move(bw.grads);
  if (need_grad_z) {
    out.grad_z = Tensor({n, d});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(bw.grad_x.data.begin() + i * w, bw.grad_x.data.begin() + i * w + d, out.grad_z.data.begin() + i * d);
  }
  return out;
}

/// encode -> optional fuse -> mean -> clip. The controller consumed by rollouts.
inline Vec2 act(const PolicyParams& p, const FusionModule* fusion, const EncoderSpec& encoder, const Image& img,
                int task_id) {
  LatentVec z = encoder.encode(img);
  if (fusion) z = fuse(*fusion, z);
  return clip_action(policy_forward(p, z, task_id).mean);
}

inline Controller make_policy_controller(const PolicyParams& p, const FusionModule* fusion,
                                         const EncoderSpec& encoder = EncoderSpec::standard()) {
  return [&p, fusion, &encoder](const Image& img, int task) { return act(p, fusion, encoder, img, task); };
}

} // namespace lpaf
