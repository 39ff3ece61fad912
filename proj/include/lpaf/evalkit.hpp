#pragma once

// Viewpoint sweeps, latent alignment diagnostics, token-similarity heatmaps
// and the CSV / PPM / text exports built on them.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lpaf/dataset_io.hpp"
#include "lpaf/encoder.hpp"
#include "lpaf/fusion.hpp"
#include "lpaf/parallel.hpp"
#include "lpaf/policy.hpp"
#include "lpaf/trainer.hpp"
#include "lpaf/worldgen.hpp"

namespace lpaf {

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
  std::vector<double> viewpoints = default_viewpoints();
  int episodes_per_view = 50;
  int horizon = world::kDefaultHorizon;
  std::uint64_t seed = 0;
  int task_count = world::kTaskCount;

  /// {0} and +-10..+-90 in 10 degree steps, ascending.
  static std::vector<double> default_viewpoints() {
    std::vector<double> v;
    for (int k = -9; k <= 9; ++k) v.push_back(10.0 * k);
    return v;
  }

  void validate() const {
    require(!viewpoints.empty(), ErrorKind::InvalidArgument, "sweep needs at least one viewpoint");
    require(episodes_per_view >= 1 && horizon >= 1, ErrorKind::InvalidArgument,
            "sweep needs episodes >= 1 and horizon >= 1");
    require(task_count >= 1 && task_count <= world::kTaskCount, ErrorKind::InvalidArgument, "bad task count");
    for (double t : viewpoints) ViewSpec::at(t);
  }
};

struct ViewOutcome {
  double theta_deg = 0.0;
  int episodes = 0;
  int successes = 0;
  double mean_steps = 0.0;

  double rate() const { return episodes ? static_cast<double>(successes) / episodes : 0.0; }

  friend bool operator==(const ViewOutcome&, const ViewOutcome&) = default;
};

struct SweepResult {
  std::string arm;
  std::uint64_t seed = 0;
  std::vector<ViewOutcome> views;

  /// Uniform mean of per-view rates over the listed angles (all if empty).
  double mean_rate(const std::vector<double>& subset = {}) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& v : views)
      if (subset.empty() || std::find(subset.begin(), subset.end(), v.theta_deg) != subset.end()) {
        sum += v.rate();
        ++n;
      }
    return n ? sum / n : 0.0;
  }

  const ViewOutcome* at(double theta) const {
    for (const auto& v : views)
      if (v.theta_deg == theta) return &v;
    return nullptr;
  }

  friend bool operator==(const SweepResult&, const SweepResult&) = default;
};

/// Episode scene seed; depends only on (sweep seed, view, episode).
inline std::uint64_t episode_seed(std::uint64_t sweep_seed, double theta_deg, int episode) {
  return derive_seed({sweep_seed, 0xE915, angle_key(theta_deg), static_cast<std::uint64_t>(episode)});
}

inline Scene episode_scene(const SweepSpec& spec, double theta_deg, int episode) {
  const auto seed = episode_seed(spec.seed, theta_deg, episode);
  const int task = static_cast<int>(splitmix64(seed) % static_cast<std::uint64_t>(spec.task_count));
  return sample_scene(task, seed);
}

/// Builds a fresh controller per episode (controllers may be stateful).
using ControllerFactory = std::function<Controller(const Scene&)>;

inline SweepResult sweep(const ControllerFactory& factory, const SweepSpec& spec, const std::string& arm) {
  spec.validate();
  const std::size_t nv = spec.viewpoints.size();
  const std::size_t ne = static_cast<std::size_t>(spec.episodes_per_view);
  std::vector<RolloutResult> outcomes(nv * ne);
  parallel_for(outcomes.size(), [&](std::size_t k) {
    const double theta = spec.viewpoints[k / ne];
    const int episode = static_cast<int>(k % ne);
    const Scene scene = episode_scene(spec, theta, episode);
    try {
      outcomes[k] = simulate_rollout(factory(scene), scene, ViewSpec::at(theta), spec.horizon);
    } catch (const Error& e) {
      std::ostringstream msg;
      msg << e.what() << " (view " << theta << ", episode " << episode << ")";
      throw Error(e.kind(), msg.str());
    }
  });
  SweepResult r{arm, spec.seed, {}};
  for (std::size_t v = 0; v < nv; ++v) {
    ViewOutcome o{spec.viewpoints[v], spec.episodes_per_view, 0, 0.0};
    long steps = 0;
    for (std::size_t e = 0; e < ne; ++e) {
      const auto& out = outcomes[v * ne + e];
      o.successes += out.success ? 1 : 0;
      steps += out.steps_taken;
    }
    o.mean_steps = static_cast<double>(steps) / static_cast<double>(ne);
    r.views.push_back(o);
  }
  return r;
}

inline SweepResult sweep(const TrainedBundle& bundle, const SweepSpec& spec,
                         const EncoderSpec& encoder = EncoderSpec::standard()) {
  const FusionModule* fusion = bundle.fusion ? &*bundle.fusion : nullptr;
  return sweep([&](const Scene&) { return make_policy_controller(bundle.policy, fusion, encoder); }, spec, bundle.arm);
}

inline SweepResult expert_sweep(const SweepSpec& spec) {
  return sweep([](const Scene& s) { return make_expert_controller(s); }, spec, "expert");
}

// ---------------------------------------------------------------------------
// Alignment diagnostics

struct AlignmentRow {
  double theta_deg = 0.0;
  std::size_t pairs = 0;
  double raw_mse = 0.0;
  double fused_mse = 0.0;
  double raw_cos = 0.0;
  double fused_cos = 0.0;
};

namespace detail {

inline double row_mse(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Cosine similarity; 0 when either side is degenerate.
inline double row_cos(std::span<const double> a, std::span<const double> b, bool* degenerate = nullptr) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na <= kMinNorm || nb <= kMinNorm) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

} // namespace detail

/// Per-view means of d(z_ref, z_aux) and d(z_ref, fuse(z_aux)). A null
/// fusion module reports the raw columns twice.
inline std::vector<AlignmentRow> alignment_report(const FusionModule* fusion, const EncoderSpec& encoder,
                                                  const Dataset& pairs) {
  require(!pairs.paired_states.empty(), ErrorKind::EmptyBatch, "empty batch: no held-out pairs");
  std::map<double, std::vector<const PairedState*>> by_view;
  for (const auto& p : pairs.paired_states) by_view[p.theta_deg].push_back(&p);
  std::vector<AlignmentRow> rows;
  for (const auto& [theta, list] : by_view) {
    std::vector<Image> aux, ref;
    for (const auto* p : list) {
      aux.push_back(p->auxiliary);
      ref.push_back(p->reference);
    }
    const Tensor za = encode_batch(encoder, aux);
    const Tensor zr = encode_batch(encoder, ref);
    const Tensor zf = fusion ? fuse_batch(*fusion, za) : za;
    AlignmentRow row{theta, list.size(), 0, 0, 0, 0};
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto a = za.span().subspan(i * kLatentDim, kLatentDim);
      const auto f = zf.span().subspan(i * kLatentDim, kLatentDim);
      const auto r = zr.span().subspan(i * kLatentDim, kLatentDim);
      row.raw_mse += detail::row_mse(a, r);
      row.fused_mse += detail::row_mse(f, r);
      row.raw_cos += detail::row_cos(a, r);
      row.fused_cos += detail::row_cos(f, r);
    }
    const double n = static_cast<double>(list.size());
    row.raw_mse /= n;
    row.fused_mse /= n;
    row.raw_cos /= n;
    row.fused_cos /= n;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Heatmaps

struct HeatmapResult {
  std::array<std::array<double, kGrid>, kGrid> similarity{};
  std::array<std::array<bool, kGrid>, kGrid> degenerate{};
  double theta_deg = 0.0;
  std::uint64_t scene_seed = 0;
  bool fused = false;

  double mean_over(const std::vector<std::size_t>& tokens) const {
    if (tokens.empty()) return 0.0;
    double s = 0.0;
    for (auto t : tokens) s += similarity[t / kGrid][t % kGrid];
    return s / static_cast<double>(tokens.size());
  }
};

/// Per-token cosine similarity between the reference-view latent of a state
/// and the (optionally fused) latent of the same state seen at theta.
inline HeatmapResult token_heatmap(const FusionModule* fusion, const EncoderSpec& encoder, const Scene& scene,
                                   Vec2 gripper, double theta_deg) {
  require(std::abs(theta_deg) <= 90.0, ErrorKind::InvalidArgument, "heatmap angle must satisfy |theta| <= 90");
  const LatentVec zr = encoder.encode(render(scene, gripper, ViewSpec::reference()));
  LatentVec za = encoder.encode(render(scene, gripper, ViewSpec::at(theta_deg)));
  if (fusion) za = fuse(*fusion, za);
  HeatmapResult h;
  h.theta_deg = theta_deg;
  h.scene_seed = scene.seed;
  h.fused = fusion != nullptr;
  for (std::size_t t = 0; t < kTokens; ++t) {
    bool degenerate = false;
    h.similarity[t / kGrid][t % kGrid] = detail::row_cos(zr.token(t), za.token(t), &degenerate);
    h.degenerate[t / kGrid][t % kGrid] = degenerate;
  }
  return h;
}

/// Tokens whose patch shows target-disc pixels in the reference render.
inline std::vector<std::size_t> target_tokens(const Scene& scene, Vec2 gripper) {
  const Image img = render(scene, gripper, ViewSpec::reference());
  const Rgb& c = scene.target().color;
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < kTokens; ++t) {
    bool hit = false;
    for (std::size_t y = 0; y < kPatch && !hit; ++y)
      for (std::size_t x = 0; x < kPatch && !hit; ++x) {
        const int row = static_cast<int>((t / kGrid) * kPatch + y), col = static_cast<int>((t % kGrid) * kPatch + x);
        hit = img.at(row, col, 0) == c[0] && img.at(row, col, 1) == c[1] && img.at(row, col, 2) == c[2];
      }
    if (hit) out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation report (filled by run_ablations)

struct AblationRow {
  std::string table;       // "alignment_loss", "involvement", "parameter_update"
  std::string label;       // row label as printed
  double reference_rate = 0.0; // reference annotation, percent
  AlignKind align_kind = AlignKind::COS;
  bool progressive = true;
  bool freeze_policy_stage3 = false;
  std::vector<double> seed_rates; // mean success per seed
  std::vector<std::string> failures;

  double mean() const {
    if (seed_rates.empty()) return 0.0;
    double s = 0.0;
    for (double r : seed_rates) s += r;
    return s / static_cast<double>(seed_rates.size());
  }
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<SweepResult> sweeps; // one per (unique arm, seed)
};

namespace detail {

inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * fraction);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

} // namespace detail

/// Three two-row tables in the layout
///
///   <Item header>        | Mean Success Rate | Reference
///   ---------------------+-------------------+----------
///   COS                  | 61.23%            | 86.42%
///
/// followed by whether the measured ordering agrees with the reference ordering.
inline std::string format_ablation_tables(const AblationReport& report) {
  struct TableSpec {
    const char* key;
    const char* title;
    const char* header;
  };
  static constexpr TableSpec tables[] = {
      {"alignment_loss", "Ablation: alignment loss item", "Alignment Loss Item"},
      {"involvement", "Ablation: multiview data involvement strategy", "Involvement Strategy"},
      {"parameter_update", "Ablation: parameters updating strategy", "Involvement Strategy"},
  };
  std::ostringstream os;
  for (const auto& t : tables) {
    std::vector<const AblationRow*> rows;
    for (const auto& r : report.rows)
      if (r.table == t.key) rows.push_back(&r);
    os << t.title << "\n";
    os << detail::pad(t.header, 22) << "| " << detail::pad("Mean Success Rate", 18) << "| Reference\n";
    os << std::string(22, '-') << "+" << std::string(19, '-') << "+----------\n";
    for (const auto* r : rows) {
      const std::string measured = r->seed_rates.empty() ? "failed" : detail::percent(r->mean());
      os << detail::pad(r->label, 22) << "| " << detail::pad(measured, 18) << "| " << detail::percent(r->reference_rate / 100.0)
         << "\n";
    }
    if (rows.size() == 2 && !rows[0]->seed_rates.empty() && !rows[1]->seed_rates.empty()) {
      const bool reference_first = rows[0]->reference_rate > rows[1]->reference_rate;
      const bool ours_first = rows[0]->mean() > rows[1]->mean();
      const bool tie = rows[0]->mean() == rows[1]->mean();
      os << "direction: " << (tie ? "tie" : (reference_first == ours_first ? "agrees with reference" : "disagrees with reference"))
         << "\n";
    }
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Export

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_angle(double theta) {
  if (theta == std::round(theta)) return std::to_string(static_cast<long>(theta));
  return fmt_double(theta);
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  return os;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

} // namespace detail

inline constexpr const char* kSweepHeader = "arm,seed,theta_deg,episodes,successes,rate,mean_steps";
inline constexpr const char* kAlignmentHeader = "theta_deg,pairs,raw_mse,fused_mse,raw_cos,fused_cos";

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepResult>& results) {
  os << kSweepHeader << "\n";
  for (const auto& r : results)
    for (const auto& v : r.views)
      os << r.arm << ',' << r.seed << ',' << detail::fmt_double(v.theta_deg) << ',' << v.episodes << ',' << v.successes
         << ',' << detail::fmt_double(v.rate()) << ',' << detail::fmt_double(v.mean_steps) << "\n";
}

/// Rows regroup into results by consecutive (arm, seed).
inline std::vector<SweepResult> read_sweep_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kSweepHeader) throw Error(ErrorKind::Format, "sweep.csv: bad header");
  std::vector<SweepResult> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    require(f.size() == 7, ErrorKind::Format, "sweep.csv: expected 7 columns");
    const std::uint64_t seed = std::stoull(f[1]);
    if (out.empty() || out.back().arm != f[0] || out.back().seed != seed) out.push_back({f[0], seed, {}});
    ViewOutcome v{std::stod(f[2]), std::stoi(f[3]), std::stoi(f[4]), std::stod(f[6])};
    require(v.successes >= 0 && v.successes <= v.episodes, ErrorKind::Format, "sweep.csv: successes exceed episodes");
    out.back().views.push_back(v);
  }
  return out;
}

inline void write_alignment_csv(std::ostream& os, const std::vector<AlignmentRow>& rows) {
  os << kAlignmentHeader << "\n";
  for (const auto& r : rows)
    os << detail::fmt_double(r.theta_deg) << ',' << r.pairs << ',' << detail::fmt_double(r.raw_mse) << ','
       << detail::fmt_double(r.fused_mse) << ',' << detail::fmt_double(r.raw_cos) << ','
       << detail::fmt_double(r.fused_cos) << "\n";
}

inline constexpr int kHeatmapCell = 8; // pixels per token in the PPM

/// Similarity s in [-1, 1] -> (r, g, b) = ((s+1)/2, 0, (1-s)/2): +1 red, -1 blue.
inline Rgb heatmap_color(double s) {
  const float t = static_cast<float>((std::clamp(s, -1.0, 1.0) + 1.0) / 2.0);
  return {t, 0.0f, 1.0f - t};
}

inline std::vector<float> heatmap_pixels(const HeatmapResult& h) {
  const int side = static_cast<int>(kGrid) * kHeatmapCell;
  std::vector<float> px(static_cast<std::size_t>(side * side * 3));
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const Rgb c = heatmap_color(h.similarity[static_cast<std::size_t>(y / kHeatmapCell)][static_cast<std::size_t>(x / kHeatmapCell)]);
      for (int ch = 0; ch < 3; ++ch) px[static_cast<std::size_t>((y * side + x) * 3 + ch)] = c[static_cast<std::size_t>(ch)];
    }
  return px;
}

inline std::string heatmap_filename(const HeatmapResult& h) {
  return "heatmap_" + detail::fmt_angle(h.theta_deg) + (h.fused ? "_fused" : "") + ".ppm";
}

inline void write_heatmap_ppm(const std::filesystem::path& path, const HeatmapResult& h) {
  const int side = static_cast<int>(kGrid) * kHeatmapCell;
  write_ppm(path, side, side, heatmap_pixels(h));
}

/// Per-arm mean success by view, one column per arm.
inline std::string format_sweep_summary(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  if (results.empty()) return "no sweep results\n";
  os << detail::pad("theta_deg", 10);
  for (const auto& r : results) os << "| " << detail::pad(r.arm + "/s" + std::to_string(r.seed), 16);
  os << "\n";
  for (std::size_t v = 0; v < results.front().views.size(); ++v) {
    os << detail::pad(detail::fmt_angle(results.front().views[v].theta_deg), 10);
    for (const auto& r : results)
      os << "| " << detail::pad(v < r.views.size() ? detail::percent(r.views[v].rate()) : "-", 16);
    os << "\n";
  }
  os << detail::pad("mean", 10);
  for (const auto& r : results) os << "| " << detail::pad(detail::percent(r.mean_rate()), 16);
  os << "\n";
  return os.str();
}

struct EvalResults {
  std::vector<SweepResult> sweeps;
  std::vector<AlignmentRow> alignment;
  std::vector<HeatmapResult> heatmaps;
  std::optional<AblationReport> ablation;
};

/// Writes sweep.csv, alignment.csv, heatmap_<theta>[_fused].ppm and
/// summary.txt into out_dir. Empty inputs still produce header-only CSVs.
inline void export_results(const EvalResults& results, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  {
    auto os = detail::open_out(out_dir / "sweep.csv");
    write_sweep_csv(os, results.sweeps);
    if (!os) throw Error(ErrorKind::Io, "write failed: " + (out_dir / "sweep.csv").string());
  }
  {
    auto os = detail::open_out(out_dir / "alignment.csv");
    write_alignment_csv(os, results.alignment);
    if (!os) throw Error(ErrorKind::Io, "write failed: " + (out_dir / "alignment.csv").string());
  }
  for (const auto& h : results.heatmaps) write_heatmap_ppm(out_dir / heatmap_filename(h), h);
  auto os = detail::open_out(out_dir / "summary.txt");
  os << format_sweep_summary(results.sweeps);
  if (results.ablation) os << "\n" << format_ablation_tables(*results.ablation);
  if (!os) throw Error(ErrorKind::Io, "write failed: " + (out_dir / "summary.txt").string());
}

} // namespace lpaf
