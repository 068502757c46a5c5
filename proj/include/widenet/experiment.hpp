#pragma once

#include <filesystem>
#include <iomanip>

#include "widenet/distributed.hpp"

namespace widenet {

// -- per-cell aggregation --

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  double max_return = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct CellSummary {
  std::string label;
  std::vector<SeedOutcome> seeds;

  int runs() const { return static_cast<int>(seeds.size()); }
  int failed() const {
    int n = 0;
    for (auto& s : seeds) n += s.ok ? 0 : 1;
    return n;
  }
  /// Mean and population std of the per-seed max returns over successful seeds.
  std::pair<double, double> stats() const {
    std::vector<double> v;
    for (auto& s : seeds)
      if (s.ok) v.push_back(s.max_return);
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double q = 0;
    for (double x : v) q += (x - m) * (x - m);
    return {m, std::sqrt(q / static_cast<double>(v.size()))};
  }
};

struct DriverOptions {
  std::string out_dir;  // required for grid and ablation outputs
  bool quiet = true;
  /// Replaces run_experiment, for tests of the orchestration itself.
  std::function<RunResult(const ExperimentConfig&, std::uint64_t, const RunOptions&)> runner;
};

/// Runs every seed of `cfg` into dir/seed<k>/ and writes dir/cell.csv.
/// A failing seed is recorded and the remaining seeds still run.
inline CellSummary run_cell(const ExperimentConfig& cfg, const std::string& label, const std::string& dir,
                            const DriverOptions& opt) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  CellSummary cell;
  cell.label = label;
  auto run = opt.runner ? opt.runner : [](const ExperimentConfig& c, std::uint64_t s, const RunOptions& o) {
    return run_experiment(c, s, o);
  };
  for (std::uint64_t seed : cfg.seeds) {
    SeedOutcome o;
    o.seed = seed;
    try {
      RunResult r = run(cfg, seed, {.out_dir = (fs::path(dir) / ("seed" + std::to_string(seed))).string(),
                                    .quiet = opt.quiet});
      o.ok = true;
      o.max_return = r.max_return;
    } catch (const std::exception& e) {
      o.error = e.what();
      spdlog::error("{} seed {} failed: {}", label, seed, e.what());
    }
    cell.seeds.push_back(o);
  }
  std::ofstream out(fs::path(dir) / "cell.csv");
  out.precision(17);
  out << "seed,status,max_return,error\n";
  for (auto& s : cell.seeds) {
    std::string err = s.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << s.seed << ',' << (s.ok ? "ok" : "failed") << ',';
    if (s.ok) out << s.max_return;
    out << ',' << err << '\n';
  }
  return cell;
}

// -- grid --

/// Width/depth setting applied to both actor and critic blocks.
inline ExperimentConfig with_width_depth(ExperimentConfig c, int units, int layers) {
  c.agent.actor.units = c.agent.critic.units = units;
  c.agent.actor.num_layers = c.agent.critic.num_layers = layers;
  c.name = c.name + "_u" + std::to_string(units) + "_l" + std::to_string(layers);
  return c;
}

struct GridRow {
  int units = 0;
  int layers = 0;
  CellSummary cell;
};

struct GridResult {
  std::vector<GridRow> rows;
  bool all_ok() const {
    for (auto& r : rows)
      if (r.cell.failed()) return false;
    return true;
  }
};

inline const char* kGridHeader = "units,layers,mean_max_return,std_max_return,runs,failed";

inline void write_grid_summary(const GridResult& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << kGridHeader << '\n';
  for (auto& r : g.rows) {
    auto [m, s] = r.cell.stats();
    out << r.units << ',' << r.layers << ',' << m << ',' << s << ',' << r.cell.runs() << ',' << r.cell.failed() << '\n';
  }
}

/// One run per (units, layers, seed); cells in out_dir/u<units>_l<layers>/.
inline GridResult run_grid(const std::vector<int>& units, const std::vector<int>& layers, const ExperimentConfig& base,
                           const DriverOptions& opt) {
  if (units.empty() || layers.empty()) throw ConfigError("grid: units and layers lists must be nonempty");
  for (int u : units)
    if (u < 1) throw ConfigError("grid: units must be >= 1");
  for (int l : layers)
    if (l < 0) throw ConfigError("grid: layers must be >= 0");
  if (opt.out_dir.empty()) throw ConfigError("grid: an output directory is required");
  namespace fs = std::filesystem;
  GridResult g;
  for (int u : units)
    for (int l : layers) {
      ExperimentConfig c = with_width_depth(base, u, l);
      const std::string label = "u" + std::to_string(u) + "_l" + std::to_string(l);
      g.rows.push_back({u, l, run_cell(c, label, (fs::path(opt.out_dir) / label).string(), opt)});
      write_grid_summary(g, (fs::path(opt.out_dir) / "summary.csv").string());
    }
  return g;
}

// -- ablation --

inline const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"Full", "w/o Ape-X", "w/o OFENet", "w/o Larger NN", "w/o DenseNet"};
  return names;
}

/// The five variants, derived from a Full base configuration.
inline std::vector<std::pair<std::string, ExperimentConfig>> derive_ablation(const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  out.emplace_back("Full", base);

  ExperimentConfig apex = base;  // single actor, single env, plain replay
  apex.run.n_core = 1;
  apex.run.n_env = 1;
  apex.run.mode = RunMode::sync;
  apex.replay.mode = ReplayMode::uniform;
  out.emplace_back("w/o Ape-X", apex);

  ExperimentConfig ofe = base;
  ofe.ofenet.enabled = false;
  out.emplace_back("w/o OFENet", ofe);

  ExperimentConfig small = base;
  small.ofenet.units_s = small.ofenet.units_sa = base.ablation.small_units;
  small.agent.actor.units = small.agent.critic.units = base.ablation.small_units;
  out.emplace_back("w/o Larger NN", small);

  ExperimentConfig mlp = base;
  mlp.agent.actor.kind = mlp.agent.critic.kind = BlockKind::mlp;
  out.emplace_back("w/o DenseNet", mlp);
  return out;
}

/// Flattened keys whose values differ between two configurations.
inline std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
  std::vector<std::pair<std::string, json>> fa, fb;
  flatten_keys(to_json(a), "", fa);
  flatten_keys(to_json(b), "", fb);
  std::map<std::string, json> ma(fa.begin(), fa.end()), mb(fb.begin(), fb.end());
  std::vector<std::string> out;
  for (auto& [k, v] : ma)
    if (!mb.count(k) || mb[k] != v) out.push_back(k);
  for (auto& [k, v] : mb)
    if (!ma.count(k)) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string variant_dir(const std::string& name) {
  std::string s;
  for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c)) : '_';
  return s;
}

struct AblationResult {
  std::string env;
  std::vector<std::pair<std::string, CellSummary>> variants;
  bool all_ok() const {
    for (auto& v : variants)
      if (v.second.failed()) return false;
    return true;
  }
};

inline const char* kAblationHeader = "env,variant,mean_max_return,std_max_return,runs,failed";

inline void write_ablation_summary(const AblationResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << kAblationHeader << '\n';
  for (auto& [name, cell] : r.variants) {
    auto [m, s] = cell.stats();
    out << r.env << ',' << name << ',' << m << ',' << s << ',' << cell.runs() << ',' << cell.failed() << '\n';
  }
}

/// Runs the five variants with the base seeds into out_dir/<variant>/.
inline AblationResult run_ablation(const ExperimentConfig& base, const DriverOptions& opt) {
  if (opt.out_dir.empty()) throw ConfigError("ablation: an output directory is required");
  namespace fs = std::filesystem;
  AblationResult res;
  res.env = base.env.name;
  for (auto& [name, cfg] : derive_ablation(base)) {
    const fs::path dir = fs::path(opt.out_dir) / variant_dir(name);
    res.variants.emplace_back(name, run_cell(cfg, name, dir.string(), opt));
    write_ablation_summary(res, (fs::path(opt.out_dir) / "ablation.csv").string());
  }
  return res;
}

// -- report --

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string c;
  while (std::getline(ss, c, ',')) out.push_back(c);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": empty file");
  t.header = split_csv_line(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  return t;
}

inline std::string format_number(const std::string& s, int digits = 1) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return s;
    if (std::isnan(v)) return "nan";
    std::ostringstream o;
    if (v == std::floor(v) && std::abs(v) < 1e15) {
      o << static_cast<long long>(v);
    } else {
      o << std::fixed << std::setprecision(digits) << v;
    }
    return o.str();
  } catch (const std::exception&) {
    return s;
  }
}

/// Terminal columns of a UTF-8 string (one per code point).
inline std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size(), 0);
  for (std::size_t i = 0; i < header.size(); ++i) w[i] = display_width(header[i]);
  for (auto& r : rows)
    for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], display_width(r[i]));
  std::ostringstream o;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::string c = i < cells.size() ? cells[i] : "";
      const std::string pad(w[i] - display_width(c), ' ');
      if (i) o << "  ";
      o << (i == 0 ? c + pad : pad + c);
    }
    o << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  o << std::string(total + 2 * (w.size() - 1), '-') << '\n';
  for (auto& r : rows) line(r);
  return o.str();
}

/// Aligned text for a grid or ablation summary CSV. Ablation summaries are
/// pivoted to environment rows by variant columns of "mean ± std".
inline std::string render_report(const CsvTable& t) {
  const int env = t.column("env"), var = t.column("variant"), mean = t.column("mean_max_return"),
            sd = t.column("std_max_return");
  if (env >= 0 && var >= 0 && mean >= 0 && sd >= 0) {
    std::vector<std::string> envs, variants;
    std::map<std::pair<std::string, std::string>, std::string> cell;
    for (auto& r : t.rows) {
      const std::string& e = r.at(static_cast<std::size_t>(env));
      const std::string& v = r.at(static_cast<std::size_t>(var));
      if (std::find(envs.begin(), envs.end(), e) == envs.end()) envs.push_back(e);
      if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
      cell[{e, v}] = format_number(r.at(static_cast<std::size_t>(mean))) + " ± " +
                     format_number(r.at(static_cast<std::size_t>(sd)));
    }
    std::vector<std::string> header{"env"};
    header.insert(header.end(), variants.begin(), variants.end());
    std::vector<std::vector<std::string>> rows;
    for (auto& e : envs) {
      std::vector<std::string> row{e};
      for (auto& v : variants) row.push_back(cell.count({e, v}) ? cell[{e, v}] : "-");
      rows.push_back(row);
    }
    return render_table(header, rows);
  }
  std::vector<std::vector<std::string>> rows;
  for (auto& r : t.rows) {
    std::vector<std::string> row;
    for (auto& c : r) row.push_back(format_number(c));
    rows.push_back(row);
  }
  return render_table(t.header, rows);
}

}  // namespace widenet
