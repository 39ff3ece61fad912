#pragma once

// Ablation runner: the LPAF pipeline with one design choice swapped per arm,
// reported as two-row tables with reference success rates as annotations.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "lpaf/evalkit.hpp"
#include "lpaf/parallel.hpp"
#include "lpaf/trainer.hpp"

namespace lpaf {

struct AblationArm {
  std::string table;
  std::string label;
  double reference_rate; // percent
  AlignKind align_kind;
  bool progressive;
  bool freeze_policy_stage3;

  std::string config_key() const {
    return std::string(to_string(align_kind)) + (progressive ? "/progressive" : "/one-pass") +
           (freeze_policy_stage3 ? "/freeze" : "/unfreeze");
  }
};

/// The loss and involvement tables are run one-pass and unfrozen; the update
/// table uses the progressive curriculum. Arms with identical settings share
/// one training run.
inline const std::vector<AblationArm>& ablation_arms() {
  static const std::vector<AblationArm> arms = {
      {"alignment_loss", "COS", 86.42, AlignKind::COS, false, false},
      {"alignment_loss", "MSE", 84.26, AlignKind::MSE, false, false},
      {"involvement", "w/o gradually", 86.42, AlignKind::COS, false, false},
      {"involvement", "w/ gradually", 87.79, AlignKind::COS, true, false},
      {"parameter_update", "w/ freeze", 88.63, AlignKind::COS, true, true},
      {"parameter_update", "w/o freeze", 88.84, AlignKind::COS, true, false},
  };
  return arms;
}

/// Sweeps already computed elsewhere, keyed by (config_key, seed). They must
/// share the base config and data with this run, and use the same sweep spec.
using KnownSweeps = std::map<std::pair<std::string, std::uint64_t>, SweepResult>;

namespace detail {

struct SeedOutcome {
  std::map<std::string, SweepResult> sweeps;   // by config key
  std::map<std::string, std::string> failures; // by config key
};

inline SeedOutcome ablate_seed(const StageConfig& base, const PreparedData& data, std::uint64_t seed,
                               const SweepSpec& spec, const KnownSweeps* known) {
  SeedOutcome out;
  std::vector<const AblationArm*> todo;
  for (const auto& arm : ablation_arms()) {
    const auto key = arm.config_key();
    if (out.sweeps.count(key) || std::find_if(todo.begin(), todo.end(), [&](auto* a) {
                                   return a->config_key() == key;
                                 }) != todo.end())
      continue;
    if (known) {
      auto it = known->find({key, seed});
      if (it != known->end()) {
        out.sweeps[key] = it->second;
        continue;
      }
    }
    todo.push_back(&arm);
  }
  if (todo.empty()) return out;

  StageConfig cfg = base;
  cfg.seed = seed;
  std::optional<PolicyParams> policy;
  std::string stage1_error;
  try {
    policy = stage1_action_only(cfg, data.reference);
  } catch (const Error& e) {
    stage1_error = e.what();
  }

  std::map<std::pair<AlignKind, bool>, FusionModule> stage2;
  std::map<std::pair<AlignKind, bool>, std::string> stage2_error;
  for (const auto* arm : todo) {
    const auto key = arm->config_key();
    if (!policy) {
      out.failures[key] = "stage1: " + stage1_error;
      continue;
    }
    StageConfig c = cfg;
    c.align_kind = arm->align_kind;
    c.progressive = arm->progressive;
    c.freeze_policy_stage3 = arm->freeze_policy_stage3;
    const std::pair s2key{c.align_kind, c.progressive};
    try {
      if (!stage2.count(s2key) && !stage2_error.count(s2key)) {
        try {
          stage2.emplace(s2key, stage2_fusion_only(c, initial_fusion(c), data.reference, data.multiview));
        } catch (const Error& e) {
          stage2_error[s2key] = e.what();
        }
      }
      if (stage2_error.count(s2key)) {
        out.failures[key] = "stage2: " + stage2_error[s2key];
        continue;
      }
      TrainedBundle b = stage3_joint(c, *policy, stage2.at(s2key), data.reference, data.multiview);
      b.arm = key;
      b.digests = data.digests;
      out.sweeps[key] = sweep(b, spec);
    } catch (const Error& e) {
      out.failures[key] = e.what();
    }
  }
  return out;
}

} // namespace detail

/// Runs every distinct arm configuration for each seed and reduces the
/// results in fixed arm order. Divergence or other training errors in one
/// arm are recorded on its row and do not stop the others.
inline AblationReport run_ablations(const StageConfig& base, const PreparedData& data,
                                    const std::vector<std::uint64_t>& seeds, const SweepSpec& spec,
                                    const KnownSweeps* known = nullptr) {
  base.validate();
  spec.validate();
  require(!seeds.empty(), ErrorKind::InvalidArgument, "ablation needs at least one seed");
  require(data.multiview.size() > 0, ErrorKind::EmptyBatch, "empty batch: ablation needs multiview data");

  std::vector<detail::SeedOutcome> outcomes(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) { outcomes[i] = detail::ablate_seed(base, data, seeds[i], spec, known); });

  AblationReport report;
  for (const auto& arm : ablation_arms()) {
    AblationRow row;
    row.table = arm.table;
    row.label = arm.label;
    row.reference_rate = arm.reference_rate;
    row.align_kind = arm.align_kind;
    row.progressive = arm.progressive;
    row.freeze_policy_stage3 = arm.freeze_policy_stage3;
    const auto key = arm.config_key();
    bool complete = true;
    std::vector<double> rates;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      auto f = outcomes[i].failures.find(key);
      if (f != outcomes[i].failures.end()) {
        row.failures.push_back("seed " + std::to_string(seeds[i]) + ": " + f->second);
        complete = false;
        continue;
      }
      rates.push_back(outcomes[i].sweeps.at(key).mean_rate());
    }
    if (complete) row.seed_rates = std::move(rates);
    report.rows.push_back(std::move(row));
  }
  std::set<std::string> emitted;
  for (const auto& arm : ablation_arms()) {
    const auto key = arm.config_key();
    if (!emitted.insert(key).second) continue;
    for (const auto& o : outcomes) {
      auto it = o.sweeps.find(key);
      if (it != o.sweeps.end()) report.sweeps.push_back(it->second);
    }
  }
  return report;
}

} // namespace lpaf
