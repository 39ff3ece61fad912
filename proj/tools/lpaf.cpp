// lpaf: command-line front end over the library, one subcommand per task.
//
// Every subcommand resolves its settings into one JSON document (defaults,
// then --config, then explicit flags), writes it to <out>/config.json and
// only then does any work, so `lpaf <cmd> --config <out>/config.json --out X`
// reproduces the run.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lpaf/ablation.hpp"
#include "lpaf/dataset_io.hpp"
#include "lpaf/evalkit.hpp"
#include "lpaf/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lpaf;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kMissingInput = 3, kDivergence = 4, kIoError = 5 };

int exit_code(ErrorKind k) {
  switch (k) {
  case ErrorKind::MissingInput:
    return kMissingInput;
  case ErrorKind::Divergence:
    return kDivergence;
  case ErrorKind::Io:
  case ErrorKind::Format:
    return kIoError;
  case ErrorKind::InvalidArgument:
  case ErrorKind::TaskOutOfRange:
    return kUsage;
  default:
    return kFailure;
  }
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::MissingInput, "missing file " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, "bad JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const json& cfg) {
  const std::string out = cfg.value("out", "");
  require(!out.empty(), ErrorKind::InvalidArgument, "an output directory is required (--out)");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out + ": " + ec.message());
  write_json(fs::path(out) / "config.json", cfg);
  return out;
}

// --- settings <-> JSON -----------------------------------------------------

json sweep_to_json(const SweepSpec& s) {
  return {{"viewpoints", s.viewpoints}, {"episodes", s.episodes_per_view}, {"horizon", s.horizon}, {"seed", s.seed}};
}

SweepSpec sweep_from_json(const json& j) {
  SweepSpec s;
  s.viewpoints = j.value("viewpoints", s.viewpoints);
  s.episodes_per_view = j.value("episodes", s.episodes_per_view);
  s.horizon = j.value("horizon", s.horizon);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

const std::vector<double> kHeldOutViews = {-90, -45, 0, 30, 45, 90};

// --- run directories ---------------------------------------------------------

struct DataDir {
  Dataset d_r, d_m;
  std::optional<Dataset> d_r_large, heldout;
};

DataDir load_data(const fs::path& dir, bool need_large) {
  require(fs::is_directory(dir), ErrorKind::MissingInput, "missing dataset directory " + dir.string());
  DataDir d;
  d.d_r = read_dataset(dir / "d_r.bin");
  d.d_m = read_dataset(dir / "d_m.bin");
  if (need_large || fs::exists(dir / "d_r_large.bin")) d.d_r_large = read_dataset(dir / "d_r_large.bin");
  if (fs::exists(dir / "heldout.bin")) d.heldout = read_dataset(dir / "heldout.bin");
  return d;
}

TrainedBundle load_bundle(const fs::path& dir) {
  const json meta = read_json(dir / "bundle.json");
  TrainedBundle b;
  b.arm = meta.at("arm").get<std::string>();
  b.config = stage_config_from_json(meta.at("config"));
  b.digests = meta.value("digests", std::map<std::string, std::string>{});
  b.policy.mlp = load_params((dir / "policy.lpafw").string());
  require(b.policy.mlp.in_dim() > kLatentDim, ErrorKind::Format, "policy checkpoint has the wrong input width");
  b.policy.task_count = b.policy.mlp.in_dim() - kLatentDim;
  if (fs::exists(dir / "fusion.lpafw")) {
    b.fusion = FusionModule{load_params((dir / "fusion.lpafw").string())};
    check_fusion_shape(*b.fusion);
  } else if (b.arm == "lpaf") {
    throw Error(ErrorKind::MissingInput, "missing fusion checkpoint in " + dir.string());
  }
  return b;
}

std::string losses_csv(const TrainedBundle& b) {
  std::string out = "epoch,stage,action_loss,align_loss\n";
  char buf[128];
  for (const auto& log : b.logs) {
    const std::size_t n = std::max(log.epoch_action.size(), log.epoch_align.size());
    for (std::size_t e = 0; e < n; ++e) {
      std::string a, g;
      if (log.has_action && e < log.epoch_action.size()) {
        std::snprintf(buf, sizeof buf, "%.17g", log.epoch_action[e]);
        a = buf;
      }
      if (log.has_align && e < log.epoch_align.size()) {
        std::snprintf(buf, sizeof buf, "%.17g", log.epoch_align[e]);
        g = buf;
      }
      out += std::to_string(e) + "," + log.stage + "," + a + "," + g + "\n";
    }
  }
  return out;
}

// --- subcommands -------------------------------------------------------------

int cmd_gen(const json& cfg) {
  const DatasetProtocol p = protocol_from_json(cfg.at("protocol"));
  const int per_task = cfg.value("heldout_per_task", 10);
  require(per_task >= 1, ErrorKind::InvalidArgument, "heldout_per_task must be >= 1");
  const fs::path out = prepare_out(cfg);

  const auto [d_r, d_m] = build_datasets(p);
  const Dataset large = build_reference_large(p);
  const Dataset held = build_paired_holdout(kHeldOutViews, p.s, per_task, p.seed, p.horizon);
  write_json(out / "protocol.json", to_json(p));
  write_dataset(out / "d_r.bin", d_r);
  write_dataset(out / "d_m.bin", d_m);
  write_dataset(out / "d_r_large.bin", large);
  write_dataset(out / "heldout.bin", held);

  if (d_m.trajectories.empty()) std::cerr << "warning: v = 0, D_M is empty; only reference-only training is possible\n";
  std::cout << "D_R: " << d_r.trajectories.size() << " trajectories, " << d_r.step_count() << " steps\n"
            << "D_M: " << d_m.trajectories.size() << " trajectories, " << d_m.paired_states.size()
            << " paired states\n"
            << "total: " << d_r.trajectories.size() + d_m.trajectories.size() << " trajectories\n"
            << "reference-only set: " << large.trajectories.size() << " trajectories\n"
            << "held-out pairs: " << held.paired_states.size() << "\n";
  return kOk;
}

int cmd_train(const json& cfg) {
  const std::string arm = cfg.value("arm", "lpaf");
  require(arm == "lpaf" || arm == "ref-only" || arm == "mixed", ErrorKind::InvalidArgument, "unknown arm: " + arm);
  const StageConfig sc = stage_config_from_json(cfg.at("stage"));
  const fs::path data_dir = cfg.value("data", "");
  const fs::path out = prepare_out(cfg);

  const DataDir data = load_data(data_dir, arm == "ref-only");
  const PreparedData prepared = prepare_data(data.d_r, data.d_m, data.d_r_large ? &*data.d_r_large : nullptr);
  const TrainedBundle b = train_arm(arm, sc, prepared);

  save_params((out / "policy.lpafw").string(), b.policy.mlp);
  if (b.fusion) save_params((out / "fusion.lpafw").string(), b.fusion->mlp);
  write_text(out / "losses.csv", losses_csv(b));
  write_json(out / "bundle.json", {{"arm", b.arm}, {"config", to_json(b.config)}, {"digests", b.digests}});
  std::string digest = "bundle " + b.digest() + "\n";
  for (const auto& [name, d] : b.digests) digest += name + " " + d + "\n";
  write_text(out / "digest.txt", digest);
  std::cout << "trained " << b.arm << " -> " << out.string() << "\n" << digest;
  return kOk;
}

int cmd_eval(const json& cfg) {
  const SweepSpec spec = sweep_from_json(cfg.at("sweep"));
  const std::string controller = cfg.value("controller", "policy");
  require(controller == "policy" || controller == "expert", ErrorKind::InvalidArgument,
          "controller must be policy or expert");
  const fs::path out = prepare_out(cfg);

  EvalResults results;
  if (controller == "expert") {
    results.sweeps.push_back(expert_sweep(spec));
  } else {
    const TrainedBundle b = load_bundle(cfg.value("run", ""));
    results.sweeps.push_back(sweep(b, spec));
    const std::string data = cfg.value("data", "");
    if (!data.empty()) {
      const Dataset held = read_dataset(fs::path(data) / "heldout.bin");
      results.alignment = alignment_report(b.fusion ? &*b.fusion : nullptr, EncoderSpec::standard(), held);
    }
  }
  export_results(results, out);
  std::cout << format_sweep_summary(results.sweeps);
  return kOk;
}

int cmd_ablate(const json& cfg) {
  const StageConfig base = stage_config_from_json(cfg.at("stage"));
  const SweepSpec spec = sweep_from_json(cfg.at("sweep"));
  const auto seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  require(!seeds.empty(), ErrorKind::InvalidArgument, "ablation needs at least one seed");
  const fs::path data_dir = cfg.value("data", "");
  const fs::path out = prepare_out(cfg);

  const DataDir data = load_data(data_dir, false);
  const PreparedData prepared = prepare_data(data.d_r, data.d_m, nullptr);
  const AblationReport report = run_ablations(base, prepared, seeds, spec);

  std::string rows = "table,label,reference_rate,align_kind,progressive,freeze_policy_stage3,mean_rate,seeds,failures\n";
  char buf[64];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.mean());
    std::string failures;
    for (const auto& f : r.failures) failures += (failures.empty() ? "" : "; ") + f;
    for (auto& c : failures)
      if (c == ',' || c == '\n') c = ' ';
    rows += r.table + "," + r.label + "," + std::to_string(r.reference_rate).substr(0, 5) + "," +
            std::string(to_string(r.align_kind)) + "," + (r.progressive ? "1" : "0") + "," +
            (r.freeze_policy_stage3 ? "1" : "0") + "," + (r.seed_rates.empty() ? "" : buf) + "," +
            std::to_string(r.seed_rates.size()) + "," + failures + "\n";
  }
  write_text(out / "ablation.csv", rows);
  EvalResults results;
  results.sweeps = report.sweeps;
  results.ablation = report;
  export_results(results, out);
  const std::string tables = format_ablation_tables(report);
  write_text(out / "ablation.txt", tables);
  std::cout << tables;
  return kOk;
}

int cmd_heatmap(const json& cfg) {
  const auto thetas = cfg.at("thetas").get<std::vector<double>>();
  require(!thetas.empty(), ErrorKind::InvalidArgument, "heatmap needs at least one angle");
  const bool fused = cfg.value("fused", false);
  const auto scene_seed = cfg.value("scene_seed", std::uint64_t{0});
  const int task = cfg.value("task", 0);
  const fs::path out = prepare_out(cfg);

  std::optional<FusionModule> fusion;
  if (fused) {
    const fs::path run = cfg.value("run", "");
    require(!run.empty(), ErrorKind::MissingInput, "--fused needs a trained run (--run)");
    require(fs::exists(run / "fusion.lpafw"), ErrorKind::MissingInput,
            "missing fusion checkpoint " + (run / "fusion.lpafw").string());
    fusion = FusionModule{load_params((run / "fusion.lpafw").string())};
    check_fusion_shape(*fusion);
  }
  const Scene scene = sample_scene(task, scene_seed);
  const auto target = target_tokens(scene, scene.gripper_start);
  for (double theta : thetas) {
    const auto raw = token_heatmap(nullptr, EncoderSpec::standard(), scene, scene.gripper_start, theta);
    write_heatmap_ppm(out / heatmap_filename(raw), raw);
    std::printf("theta %g target-token similarity raw %.4f", theta, raw.mean_over(target));
    if (fusion) {
      const auto f = token_heatmap(&*fusion, EncoderSpec::standard(), scene, scene.gripper_start, theta);
      write_heatmap_ppm(out / heatmap_filename(f), f);
      std::printf(" fused %.4f", f.mean_over(target));
    }
    std::printf("\n");
  }
  return kOk;
}

// --- flag plumbing -------------------------------------------------------------

/// Sets cfg[path...] = value only when the flag was given on the command line.
template <class T>
void overlay(json& cfg, const CLI::Option* opt, const json::json_pointer& at, const T& value) {
  if (opt->count() > 0) cfg[at] = value;
}

/// CLI11 converts an empty token to 0, so an empty list must be caught here.
void require_nonempty_list(const CLI::Option* opt) {
  if (opt->count() == 0) return;
  for (const auto& r : opt->results())
    require(!r.empty(), ErrorKind::InvalidArgument, opt->get_name() + " needs a non-empty comma-separated list");
}

bool on_off(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw Error(ErrorKind::InvalidArgument, "expected on or off, got " + s);
}

json base_config(const std::string& command, const std::string& config_path) {
  json cfg;
  if (!config_path.empty()) {
    cfg = read_json(config_path);
    require(cfg.value("command", command) == command, ErrorKind::InvalidArgument,
            "config " + config_path + " belongs to '" + cfg.value("command", "") + "'");
  }
  cfg["command"] = command;
  return cfg;
}

void fill_defaults(json& cfg, const json& defaults) {
  for (const auto& [k, v] : defaults.items()) {
    if (!cfg.contains(k))
      cfg[k] = v;
    else if (v.is_object() && cfg[k].is_object())
      fill_defaults(cfg[k], v);
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space perspective alignment testbed"};
  app.require_subcommand(1);

  std::string config, out, data, run, arm = "lpaf", align = "cos", progressive = "on", freeze = "off",
                                      controller = "policy";
  DatasetProtocol p;
  int heldout_per_task = 10;
  StageConfig sc;
  SweepSpec sw;
  std::vector<double> views, thetas{0, 45, 90};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t scene_seed = 0;
  int task = 0;
  bool fused = false;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", config, "re-run from a persisted config.json");
    c->add_option("--out", out, "output directory");
  };
  struct StageOpts {
    CLI::Option *e1, *e2, *e3, *batch, *lr12, *lr3, *seed, *align, *prog, *freeze, *weight;
  };
  auto stage_flags = [&](CLI::App* c) {
    return StageOpts{c->add_option("--epochs1", sc.epochs_stage1),  c->add_option("--epochs2", sc.epochs_stage2),
                     c->add_option("--epochs3", sc.epochs_stage3),  c->add_option("--batch", sc.batch_size),
                     c->add_option("--lr12", sc.lr_stage12),        c->add_option("--lr3", sc.lr_stage3),
                     c->add_option("--seed", sc.seed),              c->add_option("--align", align, "cos|mse"),
                     c->add_option("--progressive", progressive, "on|off"),
                     c->add_option("--freeze-stage3", freeze, "on|off"),
                     c->add_option("--align-weight", sc.align_weight)};
  };
  struct SweepOpts {
    CLI::Option *views, *episodes, *horizon, *seed;
  };
  auto sweep_flags = [&](CLI::App* c, CLI::Option* seed) {
    return SweepOpts{c->add_option("--views", views, "comma-separated angles, e.g. --views=-30,0,30")->delimiter(','),
                     c->add_option("--episodes", sw.episodes_per_view), c->add_option("--horizon", sw.horizon), seed};
  };

  auto* gen = app.add_subcommand("gen", "build D_R, D_M, the reference-only set and held-out pairs");
  common(gen);
  auto* g_a = gen->add_option("--a", p.a_deg, "angular interval in degrees");
  auto* g_v = gen->add_option("--v", p.v, "auxiliary view count (even)");
  auto* g_s = gen->add_option("--s", p.s, "task count");
  auto* g_j = gen->add_option("--j", p.j, "trajectories per task per view");
  auto* g_seed = gen->add_option("--seed", p.seed);
  auto* g_h = gen->add_option("--horizon", p.horizon);
  auto* g_held = gen->add_option("--heldout-per-task", heldout_per_task);

  auto* train = app.add_subcommand("train", "train one arm: lpaf, ref-only or mixed");
  common(train);
  auto* t_data = train->add_option("--data", data, "dataset directory from gen");
  auto* t_arm = train->add_option("--arm", arm, "lpaf|ref-only|mixed");
  const StageOpts t_stage = stage_flags(train);

  auto* eval = app.add_subcommand("eval", "viewpoint sweep and alignment report");
  common(eval);
  auto* e_run = eval->add_option("--run", run, "trained run directory");
  auto* e_data = eval->add_option("--data", data, "dataset directory (held-out pairs)");
  auto* e_ctrl = eval->add_option("--controller", controller, "policy|expert");
  const SweepOpts e_sweep = sweep_flags(eval, eval->add_option("--seed", sw.seed));

  auto* ablate = app.add_subcommand("ablate", "loss / involvement / update ablations");
  common(ablate);
  auto* a_data = ablate->add_option("--data", data, "dataset directory from gen");
  auto* a_seeds = ablate->add_option("--seeds", seeds, "comma-separated training seeds")->delimiter(',');
  const StageOpts a_stage = stage_flags(ablate);
  const SweepOpts a_sweep = sweep_flags(ablate, ablate->add_option("--sweep-seed", sw.seed));

  auto* heat = app.add_subcommand("heatmap", "token-similarity heatmaps, raw and fused");
  common(heat);
  auto* h_run = heat->add_option("--run", run, "trained run directory");
  auto* h_thetas = heat->add_option("--thetas", thetas, "comma-separated angles")->delimiter(',');
  auto* h_seed = heat->add_option("--scene-seed", scene_seed);
  auto* h_task = heat->add_option("--task", task);
  auto* h_fused = heat->add_flag("--fused", fused, "also emit fused heatmaps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  auto stage_json = [&](json& cfg, const StageOpts& o) {
    fill_defaults(cfg, {{"stage", to_json(StageConfig{})}});
    const json::json_pointer s("/stage");
    overlay(cfg, o.e1, s / "epochs_stage1", sc.epochs_stage1);
    overlay(cfg, o.e2, s / "epochs_stage2", sc.epochs_stage2);
    overlay(cfg, o.e3, s / "epochs_stage3", sc.epochs_stage3);
    overlay(cfg, o.batch, s / "batch_size", sc.batch_size);
    overlay(cfg, o.lr12, s / "lr_stage12", sc.lr_stage12);
    overlay(cfg, o.lr3, s / "lr_stage3", sc.lr_stage3);
    overlay(cfg, o.seed, s / "seed", sc.seed);
    overlay(cfg, o.weight, s / "align_weight", sc.align_weight);
    if (o.align->count()) cfg[s / "align_kind"] = std::string(to_string(parse_align_kind(align)));
    if (o.prog->count()) cfg[s / "progressive"] = on_off(progressive);
    if (o.freeze->count()) cfg[s / "freeze_policy_stage3"] = on_off(freeze);
  };
  auto sweep_json = [&](json& cfg, const SweepOpts& o) {
    fill_defaults(cfg, {{"sweep", sweep_to_json(SweepSpec{})}});
    const json::json_pointer s("/sweep");
    require_nonempty_list(o.views);
    overlay(cfg, o.views, s / "viewpoints", views);
    overlay(cfg, o.episodes, s / "episodes", sw.episodes_per_view);
    overlay(cfg, o.horizon, s / "horizon", sw.horizon);
    overlay(cfg, o.seed, s / "seed", sw.seed);
  };

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    json cfg = base_config(name, config);
    if (!out.empty()) cfg["out"] = out;

    if (name == "gen") {
      fill_defaults(cfg, {{"protocol", to_json(DatasetProtocol{})}, {"heldout_per_task", 10}});
      const json::json_pointer s("/protocol");
      overlay(cfg, g_a, s / "a_deg", p.a_deg);
      overlay(cfg, g_v, s / "v", p.v);
      overlay(cfg, g_s, s / "s", p.s);
      overlay(cfg, g_j, s / "j", p.j);
      overlay(cfg, g_seed, s / "seed", p.seed);
      overlay(cfg, g_h, s / "horizon", p.horizon);
      overlay(cfg, g_held, json::json_pointer("/heldout_per_task"), heldout_per_task);
      return cmd_gen(cfg);
    }
    if (name == "train") {
      fill_defaults(cfg, {{"arm", "lpaf"}, {"data", ""}});
      overlay(cfg, t_data, json::json_pointer("/data"), data);
      overlay(cfg, t_arm, json::json_pointer("/arm"), arm);
      stage_json(cfg, t_stage);
      return cmd_train(cfg);
    }
    if (name == "eval") {
      fill_defaults(cfg, {{"run", ""}, {"data", ""}, {"controller", "policy"}});
      overlay(cfg, e_run, json::json_pointer("/run"), run);
      overlay(cfg, e_data, json::json_pointer("/data"), data);
      overlay(cfg, e_ctrl, json::json_pointer("/controller"), controller);
      sweep_json(cfg, e_sweep);
      return cmd_eval(cfg);
    }
    if (name == "ablate") {
      fill_defaults(cfg, {{"data", ""}, {"seeds", std::vector<std::uint64_t>{0, 1, 2}}});
      overlay(cfg, a_data, json::json_pointer("/data"), data);
      require_nonempty_list(a_seeds);
    overlay(cfg, a_seeds, json::json_pointer("/seeds"), seeds);
      stage_json(cfg, a_stage);
      sweep_json(cfg, a_sweep);
      return cmd_ablate(cfg);
    }
    fill_defaults(cfg, {{"run", ""}, {"thetas", thetas}, {"scene_seed", 0}, {"task", 0}, {"fused", false}});
    overlay(cfg, h_run, json::json_pointer("/run"), run);
    require_nonempty_list(h_thetas);
    overlay(cfg, h_thetas, json::json_pointer("/thetas"), thetas);
    overlay(cfg, h_seed, json::json_pointer("/scene_seed"), scene_seed);
    overlay(cfg, h_task, json::json_pointer("/task"), task);
    if (h_fused->count()) cfg["fused"] = true;
    return cmd_heatmap(cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "error: bad config: " << e.what() << "\n";
    return kUsage;
  }
}
