#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "widenet/agents.hpp"
#include "widenet/checkpoint.hpp"
#include "widenet/config.hpp"
#include "widenet/diagnostics.hpp"
#include "widenet/envs.hpp"
#include "widenet/ofenet.hpp"
#include "widenet/replay.hpp"

namespace widenet {

// -- seeding --

/// SplitMix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return mix_seed(mix_seed(mix_seed(mix_seed(base) ^ a) ^ b) ^ c);
}

// Stream tags, so the derived seeds never collide across purposes.
enum SeedStream : std::uint64_t { kInit = 1, kLearner, kCollector, kEnvReset, kProbe, kSurface };

// -- snapshots --

/// Immutable copy of what a collector needs to act: φ_s (with its input
/// normaliser) followed by the actor, flattened.
struct ParameterSnapshot {
  long version = 0;
  std::vector<double> flat;
  std::chrono::steady_clock::time_point time;
};

using SnapshotPtr = std::shared_ptr<const ParameterSnapshot>;

/// Latest published snapshot. Readers get either the old or the new pointer.
class SnapshotBoard {
 public:
  SnapshotPtr latest() const {
    std::lock_guard lock(mu_);
    return current_;
  }

  /// Publishes `flat` as version (previous + 1); the first publication is version 0.
  SnapshotPtr publish(std::vector<double> flat) {
    auto snap = std::make_shared<ParameterSnapshot>();
    snap->flat = std::move(flat);
    snap->time = std::chrono::steady_clock::now();
    std::lock_guard lock(mu_);
    snap->version = current_ ? current_->version + 1 : 0;
    current_ = snap;
    return current_;
  }

  long version() const {
    std::lock_guard lock(mu_);
    return current_ ? current_->version : -1;
  }

 private:
  mutable std::mutex mu_;
  SnapshotPtr current_;
};

/// Collector-side policy: private copies of the state encoder and actor,
/// refreshed from snapshots.
class PolicyRunner {
 public:
  PolicyRunner(const OfeNet& ofe, const Network& actor, AgentConfig cfg, ActionBounds bounds)
      : ofe_(ofe), actor_(actor), cfg_(std::move(cfg)), bounds_(std::move(bounds)) {}

  static std::vector<double> snapshot_of(OfeNet& ofe, Network& actor) {
    std::vector<double> flat = flatten(ofe.state_encoder_parameters());
    const auto a = flatten(actor.parameters());
    flat.insert(flat.end(), a.begin(), a.end());
    return flat;
  }

  void load(const ParameterSnapshot& snap) {
    ParamList params = ofe_.state_encoder_parameters();
    for (auto* p : actor_.parameters()) params.push_back(p);
    unflatten(params, snap.flat);
    version_ = snap.version;
  }

  /// Refreshes from `snap` if it is newer than what is loaded.
  void sync(const SnapshotPtr& snap) {
    if (snap && snap->version != version_) load(*snap);
  }

  long version() const { return version_; }
  const ActionBounds& bounds() const { return bounds_; }

  Matrix act(const Matrix& states, bool stochastic, Rng& rng) {
    Matrix z = ofe_.encode_state(states, Mode::eval);
    return head_to_action(cfg_.kind, actor_.forward(z, Mode::eval), cfg_, bounds_, stochastic, rng);
  }

 private:
  OfeNet ofe_;
  Network actor_;
  AgentConfig cfg_;
  ActionBounds bounds_;
  long version_ = -1;
};

// -- transition queue --

/// Bounded FIFO between collectors and the learner. Producers block while
/// the queue is full; the learner only ever drains without waiting.
class TransitionQueue {
 public:
  explicit TransitionQueue(std::size_t capacity) : capacity_(capacity) {}

  /// Returns false if the queue was closed while waiting.
  bool push(std::vector<Transition>&& items) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || q_.size() < capacity_; });
    if (closed_) return false;
    for (auto& t : items) q_.push_back(std::move(t));
    lock.unlock();
    not_empty_.notify_one();
    return true;
  }

  std::vector<Transition> drain() {
    std::vector<Transition> out;
    {
      std::lock_guard lock(mu_);
      out.reserve(q_.size());
      while (!q_.empty()) {
        out.push_back(std::move(q_.front()));
        q_.pop_front();
      }
    }
    not_full_.notify_all();
    return out;
  }

  /// Blocks until something is queued, the queue is closed or `timeout` passes.
  void wait_nonempty(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    not_empty_.wait_for(lock, timeout, [&] { return closed_ || !q_.empty(); });
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<Transition> q_;
  bool closed_ = false;
  mutable std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
};

// -- collectors --

/// Shared counters and the async pacing gate.
struct CollectorShared {
  std::atomic<long> env_steps{0};
  std::atomic<long> gradient_steps{0};
  std::atomic<bool> stop{false};
  std::mutex gate_mu;
  std::condition_variable gate;
  long warmup = 0;
  double ratio = 4.0;

  /// Async collectors may step while env_steps < warmup + ratio·gradient_steps.
  long allowance() const {
    return warmup + static_cast<long>(ratio * static_cast<double>(gradient_steps.load()));
  }

  void notify() {
    { std::lock_guard lock(gate_mu); }
    gate.notify_all();
  }
};

/// One worker: n_env environments stepped as a batch with the latest snapshot.
class Collector {
 public:
  Collector(int worker, int n_env, const std::function<std::unique_ptr<Env>()>& make, std::uint64_t seed,
            PolicyRunner runner, const SnapshotBoard& board, CollectorShared& shared)
      : worker_(worker), seed_(seed), runner_(std::move(runner)), board_(board), shared_(shared),
        rng_(derive_seed(seed, kCollector, static_cast<std::uint64_t>(worker))) {
    for (int i = 0; i < n_env; ++i) {
      envs_.push_back(make());
      episodes_.push_back(0);
    }
    const int sd = envs_[0]->spec().state_dim;
    states_.resize(n_env, sd);
    for (int i = 0; i < n_env; ++i) states_.row(i) = reset(i);
  }

  int n_env() const { return static_cast<int>(envs_.size()); }
  long completed_episodes() const { return completed_; }

  /// Steps every environment once and returns the transitions.
  std::vector<Transition> step() {
    runner_.sync(board_.latest());
    const long version = runner_.version();
    const Index n = states_.rows();
    const long before = shared_.env_steps.load();
    Matrix actions = warmup_policy(before, shared_.warmup) == Behavior::random
                         ? runner_.bounds().random(n, rng_)
                         : runner_.act(states_, true, rng_);
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      Env& env = *envs_[static_cast<std::size_t>(i)];
      StepResult r = env.step(actions.row(i));
      Transition t;
      t.s = states_.row(i);
      t.a = actions.row(i);
      t.r = r.reward;
      t.s_next = r.state;
      t.done = r.terminal;
      t.version = version;
      out.push_back(std::move(t));
      if (r.done()) {
        ++completed_;
        states_.row(i) = reset(static_cast<int>(i));
      } else {
        states_.row(i) = r.state;
      }
    }
    shared_.env_steps.fetch_add(n);
    return out;
  }

 private:
  Matrix reset(int i) {
    const auto k = static_cast<std::size_t>(i);
    const std::uint64_t s = derive_seed(seed_, kEnvReset, static_cast<std::uint64_t>(worker_) * 65536u + k,
                                        static_cast<std::uint64_t>(episodes_[k]++));
    return envs_[k]->reset(s);
  }

  int worker_;
  std::uint64_t seed_;
  PolicyRunner runner_;
  const SnapshotBoard& board_;
  CollectorShared& shared_;
  Rng rng_;
  std::vector<std::unique_ptr<Env>> envs_;
  std::vector<long> episodes_;
  Matrix states_;
  long completed_ = 0;
};

// -- evaluation --

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> returns;
};

using BatchPolicy = std::function<Matrix(const Matrix& states)>;
using EnvFactory = std::function<std::unique_ptr<Env>()>;

/// Runs `episodes` deterministic episodes side by side; episode i resets
/// with seed derive_seed(seed, i). Std is the population std over episodes.
inline EvalResult evaluate(const BatchPolicy& policy, const EnvFactory& make, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw InvalidArgument("evaluate: episodes must be >= 1");
  std::vector<std::unique_ptr<Env>> envs;
  for (int i = 0; i < episodes; ++i) envs.push_back(make());
  const int sd = envs[0]->spec().state_dim;
  Matrix states(episodes, sd);
  for (int i = 0; i < episodes; ++i)
    states.row(i) = envs[static_cast<std::size_t>(i)]->reset(derive_seed(seed, static_cast<std::uint64_t>(i)));
  EvalResult out;
  out.returns.assign(static_cast<std::size_t>(episodes), 0.0);
  std::vector<int> live(static_cast<std::size_t>(episodes));
  std::iota(live.begin(), live.end(), 0);
  while (!live.empty()) {
    Matrix s(static_cast<Index>(live.size()), sd);
    for (std::size_t k = 0; k < live.size(); ++k) s.row(static_cast<Index>(k)) = states.row(live[k]);
    Matrix a = policy(s);
    std::vector<int> next;
    for (std::size_t k = 0; k < live.size(); ++k) {
      const int i = live[k];
      StepResult r = envs[static_cast<std::size_t>(i)]->step(a.row(static_cast<Index>(k)));
      out.returns[static_cast<std::size_t>(i)] += r.reward;
      states.row(i) = r.state;
      if (!r.done()) next.push_back(i);
    }
    live.swap(next);
  }
  double sum = 0.0;
  for (double r : out.returns) sum += r;
  out.mean = sum / episodes;
  double sq = 0.0;
  for (double r : out.returns) sq += (r - out.mean) * (r - out.mean);
  out.std = std::sqrt(sq / episodes);
  return out;
}

inline EvalResult evaluate(PolicyRunner& runner, const EnvConfig& env, int episodes, std::uint64_t seed) {
  Rng unused(0);
  return evaluate([&](const Matrix& s) { return runner.act(s, false, unused); },
                  [&] { return make_env(env); }, episodes, seed);
}

// -- metrics --

struct MetricsRow {
  long gradient_step = 0;
  long env_steps = 0;
  double avg_return = 0.0;
  double return_std = 0.0;
  std::optional<double> aux_loss, critic_loss, actor_loss;
  std::optional<int> effective_rank_q1;
  std::optional<double> staleness_mean;
};

inline const char* kMetricsHeader =
    "gradient_step,env_steps,avg_return,return_std,aux_loss,critic_loss,actor_loss,effective_rank_q1,staleness_mean";

inline std::string format_row(const MetricsRow& r) {
  std::ostringstream o;
  o.precision(17);
  auto opt = [&](const auto& v) {
    o << ',';
    if (v) o << *v;
  };
  o << r.gradient_step << ',' << r.env_steps << ',' << r.avg_return << ',' << r.return_std;
  opt(r.aux_loss);
  opt(r.critic_loss);
  opt(r.actor_loss);
  opt(r.effective_rank_q1);
  opt(r.staleness_mean);
  return o.str();
}

/// Appends rows to metrics.csv as they are produced, so a crash still leaves
/// every completed row on disk.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path) : out_(std::make_unique<std::ofstream>(path)) {
    if (!*out_) throw Error("cannot write metrics to " + path);
    *out_ << kMetricsHeader << '\n';
    out_->flush();
  }
  void write(const MetricsRow& r) {
    if (!out_) return;
    *out_ << format_row(r) << '\n';
    out_->flush();
  }

 private:
  std::unique_ptr<std::ofstream> out_;
};

// -- the run --

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  long gradient_steps = 0;
  long env_steps = 0;
  double max_return = -std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  double staleness_mean = 0.0;
  long staleness_max = 0;
  long consumed = 0;
  long snapshots_published = 0;
  /// env_steps observed at gradient step k (index k), k = 0..gradient_steps.
  std::vector<long> env_steps_at;
  /// Seconds spent inside gradient steps (drain, sample, updates, publish).
  double learner_seconds = 0.0;
  double wall_seconds = 0.0;
  double gradient_rate() const { return learner_seconds > 0 ? static_cast<double>(gradient_steps) / learner_seconds : 0; }
};

/// Collector threads allowed by WIDENET_THREADS (unset or invalid: no cap).
inline int thread_cap(int wanted) {
  if (const char* v = std::getenv("WIDENET_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(v, &end, 10);
    if (end != v && cap >= 1) return static_cast<int>(std::min<long>(wanted, cap));
    spdlog::warn("ignoring invalid WIDENET_THREADS='{}'", v);
  }
  return wanted;
}

inline ActionBounds bounds_of(const EnvSpec& spec) { return ActionBounds{spec.action_low, spec.action_high}; }

inline void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                             const std::vector<const Matrix*>& blocks) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  const Index n = blocks.empty() ? 0 : blocks[0]->rows();
  for (Index r = 0; r < n; ++r) {
    bool first = true;
    for (auto* b : blocks)
      for (Index c = 0; c < b->cols(); ++c) {
        out << (first ? "" : ",") << (*b)(r, c);
        first = false;
      }
    out << '\n';
  }
}

/// Reads a numeric CSV with a header line into a matrix.
inline Matrix read_matrix_csv(const std::string& path, std::vector<std::string>* header = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": empty file");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) {
      try {
        row.push_back(std::stod(c));
      } catch (const std::exception&) {
        throw Error(path + ": non-numeric field '" + c + "'");
      }
    }
    if (row.size() != cols.size()) throw Error(path + ": row width differs from header");
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  if (header) *header = cols;
  return m;
}

inline std::vector<std::string> sa_header(int sd, int ad, const std::string& extra = "") {
  std::vector<std::string> h;
  for (int i = 0; i < sd; ++i) h.push_back("s" + std::to_string(i));
  for (int i = 0; i < ad; ++i) h.push_back("a" + std::to_string(i));
  if (!extra.empty()) h.push_back(extra);
  return h;
}

/// Learner-owned state of one run.
struct Learner {
  EnvSpec env_spec;
  OfeNet ofe;
  std::unique_ptr<Agent> agent;
  PrioritizedBuffer buffer;
  Rng rng;

  Learner(const ExperimentConfig& cfg, std::uint64_t seed)
      : env_spec(make_env(cfg.env)->spec()),
        buffer(env_spec.state_dim, env_spec.action_dim, cfg.replay),
        rng(derive_seed(seed, kLearner)) {
    Rng init(derive_seed(seed, kInit));
    ofe = OfeNet(env_spec.state_dim, env_spec.action_dim, cfg.ofenet, init);
    agent = make_agent(cfg.agent, ofe.state_feature_dim(), ofe.state_action_feature_dim(), bounds_of(env_spec), init);
  }

  PolicyRunner runner() const { return PolicyRunner(ofe, agent->actor(), agent->config(), bounds_of(env_spec)); }
  std::vector<double> snapshot() { return PolicyRunner::snapshot_of(ofe, agent->actor()); }

  ParamList checkpoint_parameters() {
    ParamList out = ofe.all_parameters();
    for (auto* p : agent->all_parameters()) out.push_back(p);
    return out;
  }
};

/// Rebuilds a learner from a checkpoint written by run_experiment.
inline std::pair<ExperimentConfig, std::unique_ptr<Learner>> load_learner(const std::string& checkpoint_path) {
  Checkpoint ck = read_checkpoint(checkpoint_path);
  ExperimentConfig cfg = parse_config(ck.config_json);
  if (config_hash(cfg) != ck.config_hash) throw Error("checkpoint: config hash mismatch in " + checkpoint_path);
  auto learner = std::make_unique<Learner>(cfg, ck.seed);
  restore_parameters(ck, learner->checkpoint_parameters());
  return {cfg, std::move(learner)};
}

struct RunOptions {
  std::string out_dir;  // empty: keep everything in memory
  bool quiet = false;
  /// Overrides the collectors' environment construction (must match cfg.env's spec).
  std::function<std::unique_ptr<Env>()> collector_env;
};

/// One learner plus n_core collectors. In sync mode the collectors are
/// stepped on the learner thread, one batch step each per gradient step.
inline RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& opt = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const auto wall0 = std::chrono::steady_clock::now();
  const bool sync = cfg.run.mode == RunMode::sync;
  if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);
  auto out_path = [&](const std::string& f) { return (fs::path(opt.out_dir) / f).string(); };

  Learner L(cfg, seed);
  const int sd = L.env_spec.state_dim, ad = L.env_spec.action_dim;
  SnapshotBoard board;
  CollectorShared shared;
  const long batch = cfg.agent.batch_size;
  const long start = std::max<long>(cfg.agent.warmup_steps, batch);
  shared.warmup = start;
  shared.ratio = cfg.run.collect_ratio;

  RunResult res;
  res.seed = seed;
  board.publish(L.snapshot());
  res.snapshots_published = 1;

  if (!opt.out_dir.empty()) {
    ExperimentConfig resolved = cfg;
    resolved.seeds = {seed};
    std::ofstream(out_path("resolved_config.json")) << dump_config(resolved) << '\n';
    json seeds = {{"seed", seed},
                  {"eval_seed", cfg.eval.seed},
                  {"init_stream", derive_seed(seed, kInit)},
                  {"learner_stream", derive_seed(seed, kLearner)},
                  {"probe_stream", derive_seed(seed, kProbe)},
                  {"surface_stream", derive_seed(seed, kSurface)},
                  {"collector_streams", json::array()},
                  {"env_reset_rule", "derive_seed(seed, kEnvReset, worker*65536 + env, episode)"}};
    for (int w = 0; w < cfg.run.n_core; ++w)
      seeds["collector_streams"].push_back(derive_seed(seed, kCollector, static_cast<std::uint64_t>(w)));
    std::ofstream(out_path("seeds.json")) << seeds.dump(2) << '\n';
  }
  MetricsWriter writer = opt.out_dir.empty() ? MetricsWriter() : MetricsWriter(out_path("metrics.csv"));

  std::function<std::unique_ptr<Env>()> make_worker_env =
      opt.collector_env ? opt.collector_env : [&] { return make_env(cfg.env); };
  std::vector<std::unique_ptr<Collector>> collectors;
  for (int w = 0; w < cfg.run.n_core; ++w)
    collectors.push_back(
        std::make_unique<Collector>(w, cfg.run.n_env, make_worker_env, seed, L.runner(), board, shared));

  TransitionQueue queue(static_cast<std::size_t>(std::max(cfg.run.queue_capacity, cfg.run.n_env)));
  std::mutex err_mu;
  std::exception_ptr collector_error;
  std::vector<std::thread> threads;

  auto stop_threads = [&] {
    shared.stop = true;
    queue.close();
    shared.notify();
    for (auto& t : threads)
      if (t.joinable()) t.join();
    threads.clear();
  };

  if (!sync) {
    const int n_threads = thread_cap(cfg.run.n_core);
    for (int k = 0; k < n_threads; ++k) {
      threads.emplace_back([&, k, n_threads] {
        try {
          while (!shared.stop) {
            for (int w = k; w < cfg.run.n_core && !shared.stop; w += n_threads) {
              {
                std::unique_lock lock(shared.gate_mu);
                shared.gate.wait(lock, [&] { return shared.stop || shared.env_steps.load() < shared.allowance(); });
              }
              if (shared.stop) break;
              if (!queue.push(collectors[static_cast<std::size_t>(w)]->step())) return;
            }
          }
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!collector_error) collector_error = std::current_exception();
          shared.stop = true;
          queue.close();
        }
      });
    }
  }

  // Consumed transitions: staleness against the current snapshot version.
  double stale_sum_interval = 0.0;
  long stale_n_interval = 0;
  double stale_sum_total = 0.0;
  auto consume = [&](std::vector<Transition>&& items) {
    const long v = board.version();
    for (auto& t : items) {
      const long s = v - t.version;
      stale_sum_interval += static_cast<double>(s);
      stale_sum_total += static_cast<double>(s);
      ++stale_n_interval;
      ++res.consumed;
      res.staleness_max = std::max(res.staleness_max, s);
      L.buffer.add(t);
    }
  };
  auto sync_collect = [&] {
    for (auto& c : collectors) consume(c->step());
  };
  auto check_collectors = [&] {
    std::lock_guard lock(err_mu);
    if (collector_error) std::rethrow_exception(collector_error);
  };

  // Interval accumulators for the metrics row.
  double aux_sum = 0, critic_sum = 0, actor_sum = 0;
  long n_upd = 0, n_actor = 0;
  Matrix probe_s, probe_a;
  Rng eval_rng(0);

  PolicyRunner eval_runner = L.runner();
  auto emit_row = [&](long step, bool with_rank) {
    eval_runner.load(ParameterSnapshot{board.version(), L.snapshot(), {}});
    EvalResult ev = evaluate(eval_runner, cfg.env, cfg.eval.episodes, cfg.eval.seed);
    MetricsRow row;
    row.gradient_step = step;
    row.env_steps = shared.env_steps.load();
    row.avg_return = ev.mean;
    row.return_std = ev.std;
    if (n_upd > 0) {
      row.aux_loss = aux_sum / static_cast<double>(n_upd);
      row.critic_loss = critic_sum / static_cast<double>(n_upd);
    }
    if (n_actor > 0) row.actor_loss = actor_sum / static_cast<double>(n_actor);
    if (stale_n_interval > 0) row.staleness_mean = stale_sum_interval / static_cast<double>(stale_n_interval);
    if (with_rank && probe_s.rows() > 0)
      row.effective_rank_q1 = effective_rank(collect_features(*L.agent, L.ofe, probe_s, probe_a, 0),
                                             cfg.diagnostics.rank_delta);
    aux_sum = critic_sum = actor_sum = 0;
    n_upd = n_actor = 0;
    stale_sum_interval = 0;
    stale_n_interval = 0;
    res.max_return = std::max(res.max_return, ev.mean);
    res.rows.push_back(row);
    writer.write(row);
    if (!opt.quiet)
      spdlog::info("[seed {}] step {} env_steps {} return {:.2f} +- {:.2f}", seed, step, row.env_steps, ev.mean,
                   ev.std);
    return ev.mean;
  };

  try {
    // Fill the buffer before learning.
    while (static_cast<long>(L.buffer.size()) < start) {
      if (sync) {
        sync_collect();
      } else {
        queue.wait_nonempty(std::chrono::milliseconds(50));
        check_collectors();
        consume(queue.drain());
      }
    }
    {
      // Fixed probe batch for effective rank, drawn once.
      Rng probe_rng(derive_seed(seed, kProbe));
      std::uniform_int_distribution<std::size_t> pick(0, L.buffer.size() - 1);
      std::vector<std::size_t> slots(static_cast<std::size_t>(cfg.diagnostics.rank_probe_size));
      for (auto& s : slots) s = pick(probe_rng);
      Batch pb = L.buffer.gather(slots);
      probe_s = pb.s;
      probe_a = pb.a;
    }
    res.env_steps_at.push_back(shared.env_steps.load());
    const double ret0 = emit_row(0, true);
    const bool done0 = cfg.run.stop_return && ret0 >= *cfg.run.stop_return;
    res.stopped_early = done0 && cfg.run.gradient_steps > 0;

    const long T = done0 ? 0 : cfg.run.gradient_steps;
    const double beta0 = cfg.replay.beta, beta1 = cfg.replay.beta_final;
    for (long step = 1; step <= T; ++step) {
      const auto t0 = std::chrono::steady_clock::now();
      if (sync) {
        sync_collect();
      } else {
        check_collectors();
        consume(queue.drain());
      }
      L.buffer.set_beta(T > 1 ? beta0 + (beta1 - beta0) * static_cast<double>(step - 1) / static_cast<double>(T - 1)
                              : beta1);
      SampleResult sample = L.buffer.sample(static_cast<std::size_t>(batch), L.rng);
      aux_sum += L.ofe.update(sample.batch);
      UpdateResult u = L.agent->update(sample.batch, sample.is_weights, L.ofe, L.rng);
      L.buffer.update_priorities(sample.indices, u.critic.td_errors);
      critic_sum += u.critic.loss;
      ++n_upd;
      if (u.actor_loss) {
        actor_sum += *u.actor_loss;
        ++n_actor;
      }
      if (step % cfg.run.publish_interval == 0) {
        board.publish(L.snapshot());
        ++res.snapshots_published;
      }
      shared.gradient_steps = step;
      if (!sync) shared.notify();
      res.gradient_steps = step;
      res.learner_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.env_steps_at.push_back(shared.env_steps.load());

      const bool rank_due = step % cfg.diagnostics.rank_interval == 0 || step == T;
      if (step % cfg.eval.interval == 0 || rank_due) {
        const double ret = emit_row(step, rank_due);
        if (cfg.run.stop_return && ret >= *cfg.run.stop_return) {
          res.stopped_early = step < T;
          break;
        }
      }
    }
  } catch (...) {
    stop_threads();
    spdlog::error("[seed {}] run aborted at gradient step {}; {} metric rows flushed", seed, res.gradient_steps,
                  res.rows.size());
    throw;
  }
  stop_threads();
  check_collectors();

  res.env_steps = shared.env_steps.load();
  res.staleness_mean = res.consumed ? stale_sum_total / static_cast<double>(res.consumed) : 0.0;

  if (!opt.out_dir.empty()) {
    Checkpoint ck;
    ck.config_json = dump_config(cfg);
    ck.config_hash = config_hash(cfg);
    ck.seed = seed;
    add_parameters(ck, L.checkpoint_parameters());
    write_checkpoint(out_path("checkpoint.bin"), ck);
    write_matrix_csv(out_path("rank_probe.csv"), sa_header(sd, ad), {&probe_s, &probe_a});

    // (s, a, Q̂) tuples with Q̂ from the final target networks, for loss surfaces.
    Rng srng(derive_seed(seed, kSurface));
    std::uniform_int_distribution<std::size_t> pick(0, L.buffer.size() - 1);
    std::vector<std::size_t> slots(static_cast<std::size_t>(cfg.diagnostics.surface_dataset_size));
    for (auto& s : slots) s = pick(srng);
    Batch b = L.buffer.gather(slots);
    Matrix q_hat = L.agent->critic_targets(b, L.ofe, srng);
    write_matrix_csv(out_path("surface_dataset.csv"), sa_header(sd, ad, "q_hat"), {&b.s, &b.a, &q_hat});
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return res;
}

// -- throughput --

struct ThroughputResult {
  double learner_only_rate = 0.0;  // gradient steps / s without collectors
  double async_rate = 0.0;         // gradient steps / s with collectors attached
  double ratio() const { return learner_only_rate > 0 ? async_rate / learner_only_rate : 0.0; }
  RunResult async_run;
};

/// Gradient-step rate of the bare learner on a randomly filled buffer.
inline double learner_only_rate(const ExperimentConfig& cfg, std::uint64_t seed, long steps) {
  Learner L(cfg, seed);
  auto env = make_env(cfg.env);
  Rng rng(derive_seed(seed, kCollector, 999));
  const long fill = std::max<long>(cfg.agent.warmup_steps, cfg.agent.batch_size);
  Matrix s = env->reset(seed);
  const ActionBounds b = bounds_of(env->spec());
  for (long i = 0; i < fill; ++i) {
    Matrix a = b.random(1, rng);
    StepResult r = env->step(a);
    L.buffer.add(Transition{s, a, r.reward, r.state, r.terminal, 0});
    s = r.done() ? env->reset(seed + static_cast<std::uint64_t>(i)) : r.state;
  }
  SnapshotBoard board;
  const auto t0 = std::chrono::steady_clock::now();
  for (long k = 0; k < steps; ++k) {
    SampleResult smp = L.buffer.sample(static_cast<std::size_t>(cfg.agent.batch_size), L.rng);
    L.ofe.update(smp.batch);
    UpdateResult u = L.agent->update(smp.batch, smp.is_weights, L.ofe, L.rng);
    L.buffer.update_priorities(smp.indices, u.critic.td_errors);
    if ((k + 1) % cfg.run.publish_interval == 0) board.publish(L.snapshot());
  }
  return static_cast<double>(steps) / std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline ThroughputResult throughput_benchmark(ExperimentConfig cfg, std::uint64_t seed, long steps) {
  cfg.run.gradient_steps = steps;
  cfg.run.mode = RunMode::async;
  cfg.run.stop_return.reset();
  cfg.eval.interval = steps + 1;  // evaluation only at the ends
  cfg.diagnostics.rank_interval = steps + 1;
  ThroughputResult r;
  r.learner_only_rate = learner_only_rate(cfg, seed, steps);
  r.async_run = run_experiment(cfg, seed, {.quiet = true});
  r.async_rate = r.async_run.gradient_rate();
  return r;
}

/// Smallest env-step increase over any window of `window` gradient steps.
inline long min_window_env_steps(const std::vector<long>& env_steps_at, long window) {
  long best = std::numeric_limits<long>::max();
  for (std::size_t k = 0; k + static_cast<std::size_t>(window) < env_steps_at.size(); ++k)
    best = std::min(best, env_steps_at[k + static_cast<std::size_t>(window)] - env_steps_at[k]);
  return best;
}

}  // namespace widenet
