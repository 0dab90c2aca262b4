// Command-line driver: dataset generation, training, tracking, evaluation
// and ablation sweeps over one shared configuration document.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "trackkit/config.hpp"
#include "trackkit/eval.hpp"
#include "trackkit/io.hpp"
#include "trackkit/threading.hpp"
#include "trackkit/tracker.hpp"
#include "trackkit/training.hpp"

namespace fs = std::filesystem;
using namespace trackkit;

namespace {

struct GlobalArgs {
  std::string workdir = ".";
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : fs::path(workdir) / path;
  }

  RunConfig load() const {
    nlohmann::json doc = nlohmann::json::object();
    if (!config_file.empty()) {
      doc = nlohmann::json::parse(read_file_text(resolve(config_file)));
      if (!doc.is_object()) throw ConfigError("config root must be an object");
    }
    for (const auto& o : overrides) apply_override(doc, o);
    RunConfig cfg = parse_run_config(doc);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

void cmd_gen_data(const GlobalArgs& g, const std::string& out, bool force) {
  const RunConfig cfg = g.load();
  const fs::path root = g.resolve(out);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) {
      throw ConfigError("output exists, refusing to overwrite (use --force): " + root.string());
    }
    fs::remove_all(root);
  }
  const auto pool = default_model_pool(cfg.scenegen.model_samples);
  for (const std::string split : {"train", "test_clean", "test_occluded"}) {
    generate_dataset_split(cfg.scenegen, pool, split, cfg.seed, root / split);
    std::cerr << "wrote " << (root / split).string() << "\n";
  }
  write_resolved_config(root / "resolved_config.json", cfg);
}

void cmd_train(const GlobalArgs& g, const std::string& dataset, const std::string& out,
               const std::string& resume) {
  const RunConfig cfg = g.load();
  const Dataset ds = load_dataset(g.resolve(dataset));
  const fs::path out_dir = g.resolve(out);
  fs::create_directories(out_dir);
  write_resolved_config(out_dir / "resolved_config.json", cfg);

  std::optional<fs::path> resume_path;
  if (!resume.empty()) resume_path = g.resolve(resume);

  const auto result =
      train(ds, cfg.agent.shape(), cfg.agent.steps(), cfg.training,
            Rng::substream(cfg.seed, "train").next_u64(), out_dir, resume_path);
  if (!result.metrics.empty()) {
    const auto& m = result.metrics.back();
    std::cerr << "epoch " << m.epoch << " bc=" << m.bc_loss << " ppo=" << m.ppo_loss
              << " match=" << m.expert_match_rate << "\n";
  }
  std::cerr << "weights: " << (out_dir / "weights.bin").string() << "\n";
}

void cmd_track(const GlobalArgs& g, const std::string& dataset, const std::string& weights,
               const std::string& policy_name, const std::string& out) {
  const RunConfig cfg = g.load();
  const Dataset ds = load_dataset(g.resolve(dataset));
  const TrackPolicy policy = track_policy_from_string(policy_name);

  PolicyF params;
  const PolicyF* params_ptr = nullptr;
  if (policy == TrackPolicy::Agent) {
    if (weights.empty()) throw ConfigError("agent policy requires --weights");
    params = load_weights(g.resolve(weights));
    if (!(params.shape == cfg.agent.shape())) {
      throw DataError("weights do not match the configured agent (fusion mode or widths differ)");
    }
    params_ptr = &params;
  }

  const fs::path out_dir = g.resolve(out);
  fs::create_directories(out_dir);
  write_resolved_config(out_dir / "resolved_config.json", cfg);
  const auto summary = run_tracking(ds, policy, params_ptr, cfg.tracker, cfg.agent.steps(),
                                    Rng::substream(cfg.seed, "track").next_u64(), out_dir);
  std::cerr << "tracked " << summary.total_frames << " frames, " << summary.total_reinits
            << " reinits -> " << out_dir.string() << "\n";
}

void cmd_eval(const GlobalArgs& g, const std::string& traces, const std::string& dataset,
              const std::string& out) {
  const RunConfig cfg = g.load();
  const Dataset ds = load_dataset(g.resolve(dataset));
  const EvalReport report =
      evaluate_run(g.resolve(traces), ds, cfg.eval.max_threshold, cfg.eval.n_thresholds);
  const std::string table = report_table(report);
  std::cout << table;
  if (!out.empty()) {
    const fs::path out_dir = g.resolve(out);
    fs::create_directories(out_dir);
    atomic_write_file(out_dir / "report.txt", table);
    write_report_json(out_dir / "report.json", report);
    write_resolved_config(out_dir / "resolved_config.json", cfg);
  }
}

void cmd_ablate(const GlobalArgs& g, const std::string& dataset,
                const std::string& weights_hybrid, const std::string& weights_early,
                const std::string& weights_late, const std::string& out, bool resume) {
  const RunConfig cfg = g.load();
  const Dataset ds = load_dataset(g.resolve(dataset));
  const fs::path out_dir = g.resolve(out);
  fs::create_directories(out_dir);
  write_resolved_config(out_dir / "resolved_config.json", cfg);

  struct Variant {
    std::string fusion;
    std::string weights;
  };
  std::vector<Variant> variants;
  if (!weights_hybrid.empty()) variants.push_back({"hybrid", weights_hybrid});
  if (!weights_early.empty()) variants.push_back({"early", weights_early});
  if (!weights_late.empty()) variants.push_back({"late", weights_late});
  if (variants.empty()) throw ConfigError("ablate needs at least one weights file");

  struct Cell {
    std::string fusion;
    std::string reinit;
    double theta_vis = 0.0;
    double theta_step = 0.0;
  };
  std::vector<Cell> grid;
  for (const auto& v : variants) {
    grid.push_back({v.fusion, "never", 0, 0});
    for (const int n : {30, 90, 120}) {
      grid.push_back({v.fusion, "every-" + std::to_string(n), 0, 0});
    }
    for (double tv = 0.1; tv < 0.95; tv += 0.2) {
      for (const double ts : {0.005, 0.01, 0.02, 0.04}) {
        grid.push_back({v.fusion, "auto", tv, ts});
      }
    }
  }

  std::ostringstream sweep;
  sweep << "fusion,reinit_policy,theta_vis,theta_step,add_auc,adi_auc,reinits\n";
  for (const auto& cell : grid) {
    std::ostringstream tag;
    tag << cell.fusion << '_' << cell.reinit;
    if (cell.reinit == "auto") {
      tag << '_' << fmt_double(cell.theta_vis) << '_' << fmt_double(cell.theta_step);
    }
    const fs::path run_dir = out_dir / tag.str();
    const fs::path report_path = run_dir / "report.json";
    if (!(resume && fs::exists(report_path))) {
      RunConfig run_cfg = cfg;
      run_cfg.agent.fusion = cell.fusion;
      run_cfg.tracker.theta_vis = cell.theta_vis;
      run_cfg.tracker.theta_step = cell.theta_step;
      if (cell.reinit.rfind("every-", 0) == 0) {
        run_cfg.tracker.reinit_policy = "every-n";
        run_cfg.tracker.reinit_every = std::stoi(cell.reinit.substr(6));
      } else {
        run_cfg.tracker.reinit_policy = cell.reinit;
      }
      std::string weights;
      for (const auto& v : variants) {
        if (v.fusion == cell.fusion) weights = v.weights;
      }
      PolicyF params = load_weights(g.resolve(weights));
      if (!(params.shape.mode == fusion_mode_from_string(cell.fusion))) {
        throw DataError("weights fusion mode does not match " + cell.fusion);
      }
      fs::create_directories(run_dir);
      run_tracking(ds, TrackPolicy::Agent, &params, run_cfg.tracker, run_cfg.agent.steps(),
                   Rng::substream(run_cfg.seed, "track").next_u64(), run_dir);
      const EvalReport report =
          evaluate_run(run_dir, ds, cfg.eval.max_threshold, cfg.eval.n_thresholds);
      write_report_json(report_path, report);
      std::cerr << "ablate " << tag.str() << " add_auc=" << report.aggregate_add_auc
                << " reinits=" << report.total_reinits << "\n";
    }
    const auto rj = nlohmann::json::parse(read_file_text(report_path));
    sweep << cell.fusion << ',' << cell.reinit << ',' << fmt_double(cell.theta_vis) << ','
          << fmt_double(cell.theta_step) << ','
          << fmt_double(rj["aggregate"]["add_auc"].get<double>()) << ','
          << fmt_double(rj["aggregate"]["adi_auc"].get<double>()) << ','
          << rj["aggregate"]["reinits"].get<int>() << '\n';
  }
  atomic_write_file(out_dir / "sweep.csv", sweep.str());
  std::cerr << "sweep: " << (out_dir / "sweep.csv").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depth-only 6D object pose tracking toolkit"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--workdir", g.workdir, "root for all relative paths");
  app.add_option("--config", g.config_file, "JSON configuration file");
  app.add_option("--set", g.overrides, "override config entries, section.key=value");
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override the root seed");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset splits");
  std::string gen_out = "data";
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output directory (under --workdir)");
  gen->add_flag("--force", gen_force, "replace an existing dataset");

  auto* tr = app.add_subcommand("train", "train an alignment agent");
  std::string tr_dataset = "data/train", tr_out = "runs/train", tr_resume;
  tr->add_option("--dataset", tr_dataset, "training dataset directory");
  tr->add_option("--out", tr_out, "output directory for logs and checkpoints");
  tr->add_option("--resume", tr_resume, "trainer_state.bin to resume from");

  auto* tk = app.add_subcommand("track", "track every object of a dataset");
  std::string tk_dataset = "data/test_clean", tk_weights, tk_policy = "agent",
              tk_out = "runs/track";
  tk->add_option("--dataset", tk_dataset, "dataset directory");
  tk->add_option("--weights", tk_weights, "agent weights file");
  tk->add_option("--policy", tk_policy, "agent | expert | icp");
  tk->add_option("--out", tk_out, "output directory for traces");

  auto* ev = app.add_subcommand("eval", "aggregate a tracking run into a report");
  std::string ev_traces = "runs/track", ev_dataset = "data/test_clean", ev_out;
  ev->add_option("--traces", ev_traces, "directory with trace CSVs");
  ev->add_option("--dataset", ev_dataset, "dataset the run tracked");
  ev->add_option("--out", ev_out, "optional output directory for the report");

  auto* ab = app.add_subcommand("ablate", "fusion x reinitialization sweep");
  std::string ab_dataset = "data/test_occluded", ab_h, ab_e, ab_l, ab_out = "runs/ablate";
  bool ab_resume = true;
  ab->add_option("--dataset", ab_dataset, "dataset directory");
  ab->add_option("--weights-hybrid", ab_h, "hybrid-fusion weights");
  ab->add_option("--weights-early", ab_e, "early-fusion weights");
  ab->add_option("--weights-late", ab_l, "late-fusion weights");
  ab->add_option("--out", ab_out, "sweep output directory");
  ab->add_flag("--resume,!--no-resume", ab_resume, "skip grid cells with existing reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (seed_opt->count() > 0) g.seed = seed_value;
    if (gen->parsed()) cmd_gen_data(g, gen_out, gen_force);
    if (tr->parsed()) cmd_train(g, tr_dataset, tr_out, tr_resume);
    if (tk->parsed()) cmd_track(g, tk_dataset, tk_weights, tk_policy, tk_out);
    if (ev->parsed()) cmd_eval(g, ev_traces, ev_dataset, ev_out);
    if (ab->parsed()) cmd_ablate(g, ab_dataset, ab_h, ab_e, ab_l, ab_out, ab_resume);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
