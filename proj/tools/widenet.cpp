#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "widenet/widenet.hpp"

using namespace widenet;
namespace fs = std::filesystem;

namespace {

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + tok + "' is not an integer");
    }
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

ExperimentConfig load_with_overrides(const std::string& path, const std::string& mode,
                                     const std::optional<std::uint64_t>& seed, long steps) {
  ExperimentConfig cfg = load_config(path);
  if (!mode.empty()) cfg.run.mode = parse_run_mode(mode);
  if (seed) cfg.seeds = {*seed};
  if (steps >= 0) cfg.run.gradient_steps = steps;
  cfg.validate();
  return cfg;
}

int cmd_run(const std::string& config, const std::string& mode, const std::optional<std::uint64_t>& seed, long steps,
            const std::string& out) {
  ExperimentConfig cfg = load_with_overrides(config, mode, seed, steps);
  int failed = 0;
  for (std::uint64_t s : cfg.seeds) {
    const std::string dir = (fs::path(out) / ("seed" + std::to_string(s))).string();
    try {
      RunResult r = run_experiment(cfg, s, {.out_dir = dir});
      std::cout << fmt::format("seed {}: {} gradient steps, {} env steps, max return {:.2f}{} -> {}\n", s,
                               r.gradient_steps, r.env_steps, r.max_return, r.stopped_early ? " (early stop)" : "",
                               dir);
    } catch (const std::exception& e) {
      ++failed;
      spdlog::error("seed {} failed: {}", s, e.what());
    }
  }
  return failed == 0 ? 0 : 1;
}

int cmd_grid(const std::string& config, const std::string& units, const std::string& layers, const std::string& mode,
             long steps, const std::string& out) {
  ExperimentConfig cfg = load_with_overrides(config, mode, std::nullopt, steps);
  GridResult g = run_grid(parse_int_list(units, "--units"), parse_int_list(layers, "--layers"), cfg,
                          {.out_dir = out, .quiet = false});
  const std::string summary = (fs::path(out) / "summary.csv").string();
  std::cout << render_report(read_csv_table(summary)) << "summary: " << summary << '\n';
  return g.all_ok() ? 0 : 1;
}

int cmd_ablation(const std::string& config, long steps, const std::string& out) {
  ExperimentConfig cfg = load_with_overrides(config, "", std::nullopt, steps);
  AblationResult r = run_ablation(cfg, {.out_dir = out, .quiet = false});
  const std::string summary = (fs::path(out) / "ablation.csv").string();
  std::cout << render_report(read_csv_table(summary)) << "summary: " << summary << '\n';
  return r.all_ok() ? 0 : 1;
}

/// Splits a dataset or probe CSV (s0.., a0.., [q_hat]) into its blocks.
void split_sa(const Matrix& m, int sd, int ad, bool with_q, Matrix& s, Matrix& a, Matrix* q) {
  const Index want = sd + ad + (with_q ? 1 : 0);
  if (m.cols() != want)
    throw ShapeError("dataset has " + std::to_string(m.cols()) + " columns, expected " + std::to_string(want));
  if (m.rows() < 1) throw ShapeError("dataset is empty");
  s = m.leftCols(sd);
  a = m.middleCols(sd, ad);
  if (q) *q = m.rightCols(1);
}

int cmd_surface(const std::string& checkpoint, const std::string& dataset, const std::string& out, int critic,
                const std::optional<int>& resolution, const std::optional<double>& range, std::uint64_t seed) {
  auto [cfg, L] = load_learner(checkpoint);
  Matrix s, a, q;
  split_sa(read_matrix_csv(dataset), L->env_spec.state_dim, L->env_spec.action_dim, true, s, a, &q);
  SurfaceOptions opt;
  opt.resolution = resolution.value_or(cfg.diagnostics.surface_resolution);
  const double r = range.value_or(cfg.diagnostics.surface_range);
  opt.lo = -r;
  opt.hi = r;
  opt.seed = seed;
  Matrix z_sa = L->ofe.encode_state_action(s, a);
  SurfaceGrid g = loss_surface(L->agent->critic(critic - 1), z_sa, q, opt);
  write_surface_csv(g, out);
  std::cout << fmt::format("{}x{} grid, J_Q at centre {:.6g}, {} non-finite cells -> {}\n", g.a.size(), g.b.size(),
                           g.center, g.nonfinite_cells, out);
  return 0;
}

int cmd_rank(const std::string& checkpoint, const std::string& probe, const std::optional<double>& delta) {
  auto [cfg, L] = load_learner(checkpoint);
  Matrix s, a;
  split_sa(read_matrix_csv(probe), L->env_spec.state_dim, L->env_spec.action_dim, false, s, a, nullptr);
  const double d = delta.value_or(cfg.diagnostics.rank_delta);
  for (int k = 0; k < 2; ++k)
    std::cout << fmt::format("effective_rank_q{} = {}\n", k + 1, effective_rank(collect_features(*L->agent, L->ofe, s, a, k), d));
  return 0;
}

int cmd_report(const std::vector<std::string>& files) {
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (files.size() > 1) std::cout << (i ? "\n" : "") << files[i] << '\n';
    std::cout << render_report(read_csv_table(files[i]));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"widenet: wide and deep networks for off-policy RL"};
  app.require_subcommand(1);

  std::string config, mode, out = "runs", units, layers, checkpoint, dataset, probe, kind = "sac";
  std::optional<std::uint64_t> seed;
  std::optional<int> resolution;
  std::optional<double> range, delta;
  long steps = -1;
  int critic = 1;
  std::uint64_t surface_seed = 0;
  bool reference = false;
  std::vector<std::string> files;

  auto* run = app.add_subcommand("run", "Run every seed of a config (or just --seed)");
  run->add_option("--config", config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", mode, "Override run.mode")->check(CLI::IsMember({"sync", "async"}));
  run->add_option("--seed", seed, "Run only this seed");
  run->add_option("--gradient-steps", steps, "Override run.gradient_steps");
  run->add_option("--out", out, "Output directory")->capture_default_str();

  auto* grid = app.add_subcommand("grid", "Width x depth grid over the agent blocks");
  grid->add_option("--config", config, "Base config JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--units", units, "Comma-separated unit counts, e.g. 128,256,512")->required();
  grid->add_option("--layers", layers, "Comma-separated layer counts, e.g. 1,2,4")->required();
  grid->add_option("--mode", mode, "Override run.mode")->check(CLI::IsMember({"sync", "async"}));
  grid->add_option("--gradient-steps", steps, "Override run.gradient_steps");
  grid->add_option("--out", out, "Output directory")->capture_default_str();

  auto* abl = app.add_subcommand("ablation", "Full vs the four ablated variants");
  abl->add_option("--config", config, "Full config JSON")->required()->check(CLI::ExistingFile);
  abl->add_option("--gradient-steps", steps, "Override run.gradient_steps");
  abl->add_option("--out", out, "Output directory")->capture_default_str();

  auto* surf = app.add_subcommand("surface", "Loss surface of a trained critic");
  surf->add_option("--checkpoint", checkpoint, "checkpoint.bin of a run")->required()->check(CLI::ExistingFile);
  surf->add_option("--dataset", dataset, "surface_dataset.csv of the run")->required()->check(CLI::ExistingFile);
  surf->add_option("--out", out, "Grid CSV (a,b,loss)")->required();
  surf->add_option("--critic", critic, "Twin critic index")->check(CLI::Range(1, 2))->capture_default_str();
  surf->add_option("--resolution", resolution, "Points per axis (default from config)");
  surf->add_option("--range", range, "Coefficient range [-r, r] (default from config)");
  surf->add_option("--seed", surface_seed, "Seed of the random directions")->capture_default_str();

  auto* rank = app.add_subcommand("rank", "Effective rank of critic features on a probe batch");
  rank->add_option("--checkpoint", checkpoint, "checkpoint.bin of a run")->required()->check(CLI::ExistingFile);
  rank->add_option("--probe", probe, "rank_probe.csv of the run")->required()->check(CLI::ExistingFile);
  rank->add_option("--delta", delta, "Threshold delta (default from config)");

  auto* report = app.add_subcommand("report", "Render summary CSVs as aligned tables");
  report->add_option("files", files, "summary.csv / ablation.csv files")->required()->check(CLI::ExistingFile);

  auto* defaults = app.add_subcommand("defaults", "Print the default config or its reference");
  defaults->add_flag("--reference", reference, "Markdown reference of every key");
  defaults->add_option("--kind", kind, "Agent kind for the defaults")->check(CLI::IsMember({"sac", "td3"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, mode, seed, steps, out);
    if (*grid) return cmd_grid(config, units, layers, mode, steps, out);
    if (*abl) return cmd_ablation(config, steps, out);
    if (*surf) return cmd_surface(checkpoint, dataset, out, critic, resolution, range, surface_seed);
    if (*rank) return cmd_rank(checkpoint, probe, delta);
    if (*report) return cmd_report(files);
    if (*defaults) {
      if (reference) {
        std::cout << config_reference();
      } else {
        ExperimentConfig c;
        c.agent = AgentConfig::defaults(parse_agent_kind(kind));
        std::cout << dump_config(c) << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
