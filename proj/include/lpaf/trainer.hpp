#pragma once

// Three-stage training recipe and the two comparison baselines.
//
//   stage 1  policy only, reference-view data, action loss
//   stage 2  fusion only, paired (reference, auxiliary) latents, alignment
//            loss, auxiliary views unlocked progressively
//   stage 3  policy + fusion on D_R and D_M, action + alignment loss
//
// Baselines: the policy trained on an equal-budget reference-only set, and
// the policy trained on raw mixed-view latents without a fusion module.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpaf/dataset_io.hpp"
#include "lpaf/encoder.hpp"
#include "lpaf/fusion.hpp"
#include "lpaf/nncore.hpp"
#include "lpaf/policy.hpp"
#include "lpaf/worldgen.hpp"

namespace lpaf {

struct StageConfig {
  int epochs_stage1 = 40;
  int epochs_stage2 = 60;
  int epochs_stage3 = 30;
  std::size_t batch_size = 32;
  double lr_stage12 = 1e-3;
  double lr_stage3 = 3e-4;
  AlignKind align_kind = AlignKind::COS;
  bool progressive = true;
  bool freeze_policy_stage3 = false;
  double align_weight = 1.0;
  double reference_pair_fraction = 0.1; // of each stage-2 batch
  std::uint64_t seed = 0;

  void validate() const {
    require(epochs_stage1 >= 0 && epochs_stage2 >= 0 && epochs_stage3 >= 0, ErrorKind::InvalidArgument,
            "epochs must be >= 0");
    require(lr_stage12 > 0.0 && lr_stage3 > 0.0, ErrorKind::InvalidArgument, "learning rates must be > 0");
    require(batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1");
    require(reference_pair_fraction >= 0.0 && reference_pair_fraction < 1.0, ErrorKind::InvalidArgument,
            "reference pair fraction must be in [0, 1)");
    require(align_weight >= 0.0, ErrorKind::InvalidArgument, "alignment weight must be >= 0");
  }
};

inline nlohmann::json to_json(const StageConfig& c) {
  return {{"epochs_stage1", c.epochs_stage1},
          {"epochs_stage2", c.epochs_stage2},
          {"epochs_stage3", c.epochs_stage3},
          {"batch_size", c.batch_size},
          {"lr_stage12", c.lr_stage12},
          {"lr_stage3", c.lr_stage3},
          {"align_kind", std::string(to_string(c.align_kind))},
          {"progressive", c.progressive},
          {"freeze_policy_stage3", c.freeze_policy_stage3},
          {"align_weight", c.align_weight},
          {"reference_pair_fraction", c.reference_pair_fraction},
          {"seed", c.seed}};
}

inline StageConfig stage_config_from_json(const nlohmann::json& j) {
  StageConfig c;
  c.epochs_stage1 = j.value("epochs_stage1", c.epochs_stage1);
  c.epochs_stage2 = j.value("epochs_stage2", c.epochs_stage2);
  c.epochs_stage3 = j.value("epochs_stage3", c.epochs_stage3);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_stage12 = j.value("lr_stage12", c.lr_stage12);
  c.lr_stage3 = j.value("lr_stage3", c.lr_stage3);
  c.align_kind = parse_align_kind(j.value("align_kind", std::string(to_string(c.align_kind))));
  c.progressive = j.value("progressive", c.progressive);
  c.freeze_policy_stage3 = j.value("freeze_policy_stage3", c.freeze_policy_stage3);
  c.align_weight = j.value("align_weight", c.align_weight);
  c.reference_pair_fraction = j.value("reference_pair_fraction", c.reference_pair_fraction);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Curriculum

/// Auxiliary views grouped by |theta| and unlocked nearest-first. Stage-2
/// epochs are split evenly across groups, remainder to the last one.
struct Curriculum {
  std::vector<std::vector<double>> groups;
  int total_epochs = 0;

  static Curriculum from_views(const std::vector<double>& views, int total_epochs) {
    std::map<double, std::vector<double>> by_mag;
    for (double v : views) by_mag[std::abs(v)].push_back(v);
    Curriculum c;
    c.total_epochs = total_epochs;
    for (auto& [mag, vs] : by_mag) {
      std::sort(vs.begin(), vs.end());
      c.groups.push_back(vs);
    }
    return c;
  }

  int epochs_per_group() const {
    return groups.empty() ? 0 : total_epochs / static_cast<int>(groups.size());
  }

  /// Union of the groups unlocked by `epoch`, ascending.
  std::vector<double> active(int epoch) const {
    std::vector<double> out;
    const int per = epochs_per_group();
    for (std::size_t k = 0; k < groups.size(); ++k)
      if (static_cast<int>(k) * per <= epoch) out.insert(out.end(), groups[k].begin(), groups[k].end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<double> all() const { return active(total_epochs); }
};

// ---------------------------------------------------------------------------
// Encoded training sets

/// Observed latents with their expert labels and, for every row, the latent
/// of the same state seen from the reference view.
struct LatentSet {
  Tensor observed;    // [N x 2048]
  Tensor reference;   // [N x 2048]
  std::vector<int> tasks;
  Tensor actions;     // [N x 2]
  std::vector<double> theta;

  std::size_t size() const { return tasks.size(); }
};

namespace detail {

inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t w = t.cols();
  Tensor out({idx.size(), w});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(t.data.begin() + idx[i] * w, t.data.begin() + (idx[i] + 1) * w, out.data.begin() + i * w);
  return out;
}

// Actions pass through f32 so in-memory and on-disk datasets train identically.
inline double storage_round(double v) { return static_cast<double>(static_cast<float>(v)); }

} // namespace detail

/// Reference-view trajectories: observed and reference latents coincide.
inline LatentSet encode_reference(const Dataset& ds, const EncoderSpec& enc = EncoderSpec::standard()) {
  const std::size_t n = ds.step_count();
  require(n > 0, ErrorKind::EmptyBatch, "empty batch: dataset has no steps");
  LatentSet s;
  s.observed = Tensor({n, kLatentDim});
  s.actions = Tensor({n, 2});
  std::size_t i = 0;
  for (const auto& tr : ds.trajectories)
    for (const auto& st : tr.steps) {
      enc.encode_into(st.image, s.observed.span().subspan(i * kLatentDim, kLatentDim));
      s.actions[2 * i] = detail::storage_round(st.action.x);
      s.actions[2 * i + 1] = detail::storage_round(st.action.y);
      s.tasks.push_back(tr.task_id);
      s.theta.push_back(tr.view.theta_deg);
      ++i;
    }
  s.reference = s.observed;
  return s;
}

/// Auxiliary-view trajectories joined with their paired reference renders.
/// Pairs are stored in step order, one per step.
inline LatentSet encode_multiview(const Dataset& ds, const EncoderSpec& enc = EncoderSpec::standard()) {
  const std::size_t n = ds.step_count();
  require(n > 0, ErrorKind::EmptyBatch, "empty batch: dataset has no steps");
  require(ds.paired_states.size() == n, ErrorKind::Format, "multiview dataset: pairs do not match steps");
  LatentSet s;
  s.observed = Tensor({n, kLatentDim});
  s.reference = Tensor({n, kLatentDim});
  s.actions = Tensor({n, 2});
  std::size_t i = 0;
  for (const auto& tr : ds.trajectories)
    for (const auto& st : tr.steps) {
      const auto& pair = ds.paired_states[i];
      require(pair.theta_deg == tr.view.theta_deg && pair.auxiliary == st.image, ErrorKind::Format,
              "multiview dataset: pair " + std::to_string(i) + " does not match its step");
      enc.encode_into(st.image, s.observed.span().subspan(i * kLatentDim, kLatentDim));
      enc.encode_into(pair.reference, s.reference.span().subspan(i * kLatentDim, kLatentDim));
      s.actions[2 * i] = detail::storage_round(st.action.x);
      s.actions[2 * i + 1] = detail::storage_round(st.action.y);
      s.tasks.push_back(tr.task_id);
      s.theta.push_back(tr.view.theta_deg);
      ++i;
    }
  return s;
}

inline LatentSet concat(const LatentSet& a, const LatentSet& b) {
  auto cat = [](const Tensor& x, const Tensor& y) {
    Tensor out({x.rows() + y.rows(), x.cols()});
    std::copy(x.data.begin(), x.data.end(), out.data.begin());
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(x.size()));
    return out;
  };
  LatentSet s;
  s.observed = cat(a.observed, b.observed);
  s.reference = cat(a.reference, b.reference);
  s.actions = cat(a.actions, b.actions);
  s.tasks = a.tasks;
  s.tasks.insert(s.tasks.end(), b.tasks.begin(), b.tasks.end());
  s.theta = a.theta;
  s.theta.insert(s.theta.end(), b.theta.begin(), b.theta.end());
  return s;
}

/// Everything the arms train on, encoded once.
struct PreparedData {
  LatentSet reference;                       // D_R
  LatentSet multiview;                       // D_M
  std::optional<LatentSet> reference_large;  // equal-budget reference-only set
  std::vector<double> auxiliary_views;
  std::map<std::string, std::string> digests;
};

inline PreparedData prepare_data(const Dataset& d_r, const Dataset& d_m, const Dataset* d_r_large,
                                 const EncoderSpec& enc = EncoderSpec::standard()) {
  PreparedData p;
  p.reference = encode_reference(d_r, enc);
  p.digests["d_r"] = dataset_digest(d_r);
  if (!d_m.trajectories.empty()) {
    p.multiview = encode_multiview(d_m, enc);
    std::set<double> views(p.multiview.theta.begin(), p.multiview.theta.end());
    p.auxiliary_views.assign(views.begin(), views.end());
  }
  p.digests["d_m"] = dataset_digest(d_m);
  if (d_r_large) {
    p.reference_large = encode_reference(*d_r_large, enc);
    p.digests["d_r_large"] = dataset_digest(*d_r_large);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Logs and bundles

struct BatchLoss {
  double action = 0.0;
  double align = 0.0;
  double total = 0.0;
};

struct StageLog {
  std::string stage; // "stage1", "stage2", "stage3", "baseline"
  bool has_action = false;
  bool has_align = false;
  std::vector<double> epoch_action;
  std::vector<double> epoch_align;
  std::vector<BatchLoss> batches;
  std::vector<std::vector<double>> epoch_views; // stage 2: active auxiliary views per epoch
};

struct TrainedBundle {
  std::string arm; // "lpaf", "ref-only", "mixed"
  PolicyParams policy;
  std::optional<FusionModule> fusion;
  StageConfig config;
  std::map<std::string, std::string> digests;
  std::vector<StageLog> logs;

  std::string digest() const {
    Digest d;
    d.update(arm);
    d.update(params_digest(policy.mlp));
    if (fusion) d.update(params_digest(fusion->mlp));
    return d.hex();
  }
};

// ---------------------------------------------------------------------------
// Stages

namespace detail {

inline std::uint64_t stage_seed(const StageConfig& c, std::uint64_t tag) { return derive_seed({c.seed, tag}); }

inline constexpr std::uint64_t kPolicyInitTag = 0x901;
inline constexpr std::uint64_t kFusionInitTag = 0xF05;
inline constexpr std::uint64_t kStage1Tag = 0x51;
inline constexpr std::uint64_t kStage2Tag = 0x52;
inline constexpr std::uint64_t kStage3Tag = 0x53;

inline void check_finite_loss(double v, const char* stage) {
  if (!std::isfinite(v)) throw Error(ErrorKind::Divergence, std::string("divergence: non-finite loss in ") + stage);
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

/// Behavior cloning of `policy` on `data.observed`.
inline PolicyParams behavior_clone(const StageConfig& cfg, PolicyParams policy, const LatentSet& data, int epochs,
                                   std::uint64_t tag, StageLog* log, const char* stage) {
  require(data.size() > 0, ErrorKind::EmptyBatch, "empty batch: no training steps");
  OptState opt = make_opt_state(policy.mlp, {cfg.lr_stage12});
  Rng rng(stage_seed(cfg, tag));
  auto order = iota_indices(data.size());
  for (int e = 0; e < epochs; ++e) {
    shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      std::vector<int> tasks;
      for (auto i : idx) tasks.push_back(data.tasks[i]);
      auto loss = action_loss(policy, gather_rows(data.observed, idx), tasks, gather_rows(data.actions, idx), false);
      check_finite_loss(loss.value, stage);
      adam_step(policy.mlp, loss.grads, opt);
      sum += loss.value * static_cast<double>(idx.size());
      seen += idx.size();
      if (log) log->batches.push_back({loss.value, 0.0, loss.value});
    }
    if (log) log->epoch_action.push_back(sum / static_cast<double>(seen));
  }
  return policy;
}

} // namespace detail

inline PolicyParams initial_policy(const StageConfig& cfg) {
  return make_policy(detail::stage_seed(cfg, detail::kPolicyInitTag));
}

inline FusionModule initial_fusion(const StageConfig& cfg) {
  return make_fusion(detail::stage_seed(cfg, detail::kFusionInitTag));
}

/// Stage 1: the policy alone on reference-view data; encoder frozen.
inline PolicyParams stage1_action_only(const StageConfig& cfg, const LatentSet& d_r, StageLog* log = nullptr) {
  cfg.validate();
  if (log) *log = StageLog{"stage1", true, false, {}, {}, {}, {}};
  return detail::behavior_clone(cfg, initial_policy(cfg), d_r, cfg.epochs_stage1, detail::kStage1Tag, log, "stage1");
}

/// Stage 2: fusion parameters only, alignment loss on paired latents. Each
/// batch holds (1 - f) auxiliary pairs from the curriculum's active views and
/// f reference-identity pairs drawn from D_R.
inline FusionModule stage2_fusion_only(const StageConfig& cfg, FusionModule fusion, const LatentSet& d_r,
                                       const LatentSet& d_m, StageLog* log = nullptr) {
  cfg.validate();
  require(d_m.size() > 0, ErrorKind::EmptyBatch, "empty batch: no paired states for stage 2");
  require(d_r.size() > 0, ErrorKind::EmptyBatch, "empty batch: no reference latents for stage 2");
  if (log) *log = StageLog{"stage2", false, true, {}, {}, {}, {}};
  std::set<double> views(d_m.theta.begin(), d_m.theta.end());
  const Curriculum curriculum = Curriculum::from_views({views.begin(), views.end()}, cfg.epochs_stage2);

  const auto n_ref = static_cast<std::size_t>(std::lround(cfg.reference_pair_fraction * static_cast<double>(cfg.batch_size)));
  const std::size_t n_aux = std::max<std::size_t>(1, cfg.batch_size - n_ref);
  OptState opt = make_opt_state(fusion.mlp, {cfg.lr_stage12});
  Rng rng(detail::stage_seed(cfg, detail::kStage2Tag));

  for (int e = 0; e < cfg.epochs_stage2; ++e) {
    const auto active = cfg.progressive ? curriculum.active(e) : curriculum.all();
    require(!active.empty(), ErrorKind::EmptyBatch, "empty active viewpoint set");
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < d_m.size(); ++i)
      if (std::binary_search(active.begin(), active.end(), d_m.theta[i])) order.push_back(i);
    shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += n_aux) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(n_aux, order.size() - start));
      std::vector<std::size_t> ref_idx(n_ref);
      for (auto& r : ref_idx) r = uniform_index(rng, d_r.size());
      Tensor input({idx.size() + n_ref, kLatentDim});
      Tensor target(input.shape);
      const auto aux_in = detail::gather_rows(d_m.observed, idx);
      const auto aux_tgt = detail::gather_rows(d_m.reference, idx);
      std::copy(aux_in.data.begin(), aux_in.data.end(), input.data.begin());
      std::copy(aux_tgt.data.begin(), aux_tgt.data.end(), target.data.begin());
      if (n_ref > 0) {
        const auto ref = detail::gather_rows(d_r.observed, ref_idx);
        std::copy(ref.data.begin(), ref.data.end(), input.data.begin() + static_cast<std::ptrdiff_t>(aux_in.size()));
        std::copy(ref.data.begin(), ref.data.end(), target.data.begin() + static_cast<std::ptrdiff_t>(aux_in.size()));
      }
      auto fw = fusion_forward(fusion, input);
      auto dist = align_distance(cfg.align_kind, fw.fused, target);
      detail::check_finite_loss(dist.value, "stage2");
      auto bw = fusion_backward(fusion, fw.cache, dist.grad, false);
      adam_step(fusion.mlp, bw.grads, opt);
      sum += dist.value;
      ++batches;
      if (log) log->batches.push_back({0.0, dist.value, dist.value});
    }
    if (log) {
      log->epoch_align.push_back(batches ? sum / static_cast<double>(batches) : 0.0);
      log->epoch_views.push_back(active);
    }
  }
  return fusion;
}

/// Stage 3: joint update on D_R and D_M. Every row is fused; the action loss
/// is taken on the fused latents and the alignment loss against the row's
/// reference latent (identity target for D_R rows).
inline TrainedBundle stage3_joint(const StageConfig& cfg, PolicyParams policy, FusionModule fusion,
                                  const LatentSet& d_r, const LatentSet& d_m, StageLog* log = nullptr) {
  cfg.validate();
  const LatentSet joint = d_m.size() > 0 ? concat(d_r, d_m) : d_r;
  require(joint.size() > 0, ErrorKind::EmptyBatch, "empty batch: no stage-3 data");
  StageLog local{"stage3", true, true, {}, {}, {}, {}};
  OptState popt = make_opt_state(policy.mlp, {cfg.lr_stage3});
  OptState fopt = make_opt_state(fusion.mlp, {cfg.lr_stage3});
  Rng rng(detail::stage_seed(cfg, detail::kStage3Tag));
  auto order = detail::iota_indices(joint.size());

  for (int e = 0; e < cfg.epochs_stage3; ++e) {
    shuffle(order.begin(), order.end(), rng);
    double sum_a = 0.0, sum_g = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      std::vector<int> tasks;
      for (auto i : idx) tasks.push_back(joint.tasks[i]);
      auto fw = fusion_forward(fusion, detail::gather_rows(joint.observed, idx));
      auto act_loss = action_loss(policy, fw.fused, tasks, detail::gather_rows(joint.actions, idx), true);
      auto align = align_distance(cfg.align_kind, fw.fused, detail::gather_rows(joint.reference, idx));
      const double total = act_loss.value + cfg.align_weight * align.value;
      detail::check_finite_loss(total, "stage3");
      Tensor grad_fused = act_loss.grad_z;
      for (std::size_t i = 0; i < grad_fused.size(); ++i) grad_fused[i] += cfg.align_weight * align.grad[i];
      auto bw = fusion_backward(fusion, fw.cache, grad_fused, false);
      if (!cfg.freeze_policy_stage3) adam_step(policy.mlp, act_loss.grads, popt);
      adam_step(fusion.mlp, bw.grads, fopt);
      sum_a += act_loss.value;
      sum_g += align.value;
      ++batches;
      local.batches.push_back({act_loss.value, align.value, total});
    }
    local.epoch_action.push_back(sum_a / static_cast<double>(batches));
    local.epoch_align.push_back(sum_g / static_cast<double>(batches));
  }
  TrainedBundle b;
  b.arm = "lpaf";
  b.policy = std::move(policy);
  b.fusion = std::move(fusion);
  b.config = cfg;
  if (log) *log = local;
  b.logs.push_back(std::move(local));
  return b;
}

// ---------------------------------------------------------------------------
// Arms

inline TrainedBundle train_lpaf(const StageConfig& cfg, const PreparedData& data) {
  StageLog l1, l2, l3;
  PolicyParams policy = stage1_action_only(cfg, data.reference, &l1);
  FusionModule fusion = initial_fusion(cfg);
  if (data.multiview.size() > 0) fusion = stage2_fusion_only(cfg, std::move(fusion), data.reference, data.multiview, &l2);
  TrainedBundle b = stage3_joint(cfg, std::move(policy), std::move(fusion), data.reference, data.multiview, &l3);
  b.digests = data.digests;
  b.logs = {l1, l2, l3};
  return b;
}

/// Stage-1 training on the equal-budget reference-only set.
inline TrainedBundle train_baseline_reference(const StageConfig& cfg, const LatentSet& d_r_large) {
  cfg.validate();
  for (double t : d_r_large.theta)
    require(t == 0.0, ErrorKind::InvalidArgument, "reference-only baseline requires reference-view data");
  TrainedBundle b;
  b.arm = "ref-only";
  b.config = cfg;
  StageLog log{"baseline", true, false, {}, {}, {}, {}};
  b.policy = detail::behavior_clone(cfg, initial_policy(cfg), d_r_large, cfg.epochs_stage1, detail::kStage1Tag, &log,
                                    "baseline");
  b.logs.push_back(std::move(log));
  return b;
}

/// Policy trained directly on raw latents of D_R and D_M.
inline TrainedBundle train_baseline_mixed(const StageConfig& cfg, const LatentSet& mixed) {
  cfg.validate();
  TrainedBundle b;
  b.arm = "mixed";
  b.config = cfg;
  StageLog log{"baseline", true, false, {}, {}, {}, {}};
  b.policy =
      detail::behavior_clone(cfg, initial_policy(cfg), mixed, cfg.epochs_stage1, detail::kStage1Tag, &log, "baseline");
  b.logs.push_back(std::move(log));
  return b;
}

inline TrainedBundle train_arm(const std::string& arm, const StageConfig& cfg, const PreparedData& data) {
  TrainedBundle b;
  if (arm == "lpaf") {
    b = train_lpaf(cfg, data);
  } else if (arm == "ref-only") {
    require(data.reference_large.has_value(), ErrorKind::MissingInput, "missing reference-only dataset");
    b = train_baseline_reference(cfg, *data.reference_large);
  } else if (arm == "mixed") {
    b = train_baseline_mixed(cfg, data.multiview.size() > 0 ? concat(data.reference, data.multiview) : data.reference);
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown arm: " + arm);
  }
  b.digests = data.digests;
  return b;
}

} // namespace lpaf
