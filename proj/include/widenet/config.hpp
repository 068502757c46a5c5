#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "widenet/agents.hpp"
#include "widenet/envs.hpp"
#include "widenet/ofenet.hpp"
#include "widenet/replay.hpp"

namespace widenet {

using json = nlohmann::ordered_json;

enum class RunMode { async, sync };

inline std::string to_string(RunMode m) { return m == RunMode::async ? "async" : "sync"; }
inline RunMode parse_run_mode(const std::string& s) {
  if (s == "async") return RunMode::async;
  if (s == "sync") return RunMode::sync;
  throw ConfigError("unknown run mode '" + s + "' (expected async|sync)");
}

inline std::string to_string(ReplayMode m) { return m == ReplayMode::prioritized ? "prioritized" : "uniform"; }
inline ReplayMode parse_replay_mode(const std::string& s) {
  if (s == "prioritized") return ReplayMode::prioritized;
  if (s == "uniform") return ReplayMode::uniform;
  throw ConfigError("unknown replay mode '" + s + "' (expected prioritized|uniform)");
}

struct RunConfig {
  int n_core = 2;
  int n_env = 32;
  long gradient_steps = 30000;
  int publish_interval = 1;
  RunMode mode = RunMode::async;
  // Async collectors pause once env_steps > warmup + collect_ratio·gradient_steps.
  double collect_ratio = 4.0;
  int queue_capacity = 4096;
  std::optional<double> stop_return;  // end the run early once an evaluation reaches this

  bool operator==(const RunConfig&) const = default;

  void validate() const {
    if (n_core < 1) throw ConfigError("run.n_core must be >= 1");
    if (n_env < 1) throw ConfigError("run.n_env must be >= 1");
    if (gradient_steps < 0) throw ConfigError("run.gradient_steps must be >= 0");
    if (publish_interval < 1) throw ConfigError("run.publish_interval must be >= 1");
    if (!(collect_ratio > 0)) throw ConfigError("run.collect_ratio must be positive");
    if (queue_capacity < 1) throw ConfigError("run.queue_capacity must be >= 1");
  }
};

struct EvalConfig {
  long interval = 1000;
  int episodes = 10;
  std::uint64_t seed = 1000000007;

  bool operator==(const EvalConfig&) const = default;
};

struct DiagnosticsConfig {
  long rank_interval = 5000;
  int rank_probe_size = 2048;
  double rank_delta = 0.01;
  int surface_dataset_size = 1024;
  int surface_resolution = 25;
  double surface_range = 1.0;

  bool operator==(const DiagnosticsConfig&) const = default;
};

struct AblationConfig {
  int small_units = 256;

  bool operator==(const AblationConfig&) const = default;
};

/// Everything a run needs. Parsed from JSON with unknown keys rejected.
struct ExperimentConfig {
  std::string name = "full";
  EnvConfig env;
  AgentConfig agent = AgentConfig::defaults(AgentKind::sac);
  OfeNetConfig ofenet;
  ReplayOptions replay;
  RunConfig run;
  EvalConfig eval;
  DiagnosticsConfig diagnostics;
  AblationConfig ablation;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    agent.validate();
    run.validate();
    if (seeds.empty()) throw ConfigError("seeds must be nonempty");
    if (eval.interval < 1) throw ConfigError("eval.interval must be >= 1");
    if (eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
    if (diagnostics.rank_interval < 1) throw ConfigError("diagnostics.rank_interval must be >= 1");
    if (!(diagnostics.rank_delta > 0 && diagnostics.rank_delta < 1))
      throw ConfigError("diagnostics.rank_delta must lie in (0,1)");
    if (replay.capacity < static_cast<std::size_t>(agent.batch_size))
      throw ConfigError("replay.capacity must be at least agent.batch_size");
    if (!(replay.beta >= 0 && replay.beta_final >= 0)) throw ConfigError("replay betas must be non-negative");
    if (ablation.small_units < 1) throw ConfigError("ablation.small_units must be >= 1");
    if (env.dynamics && env.name != "linsys") throw ConfigError("dynamics override is only valid for env 'linsys'");
  }
};

// -- serialisation --

namespace detail {

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a nonempty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ConfigError(path + ": rows must be nonempty arrays");
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw ConfigError(path + ": ragged matrix");
    for (std::size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) throw ConfigError(path + ": non-numeric entry");
      m(static_cast<Index>(i), static_cast<Index>(k)) = j[i][k].get<double>();
    }
  }
  return m;
}

/// Reads keys of one JSON object into a struct; finish() rejects any key
/// that was not consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected a boolean");
        out = it->template get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0)
            throw ConfigError("expected a non-negative integer");
        }
        out = it->template get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
        out = it->template get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("expected a string");
        out = it->template get<std::string>();
      } else {
        static_assert(sizeof(T) == 0, "unsupported config field type");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      seen_.insert(key);
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  /// Sub-object, if present.
  const json* child(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) unknown.push_back(it.key());
    if (unknown.empty()) return;
    std::string msg = where() + ": unknown key(s):";
    for (auto& k : unknown) msg += " '" + k + "'";
    throw ConfigError(msg);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::string sub(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

}  // namespace detail

inline json to_json(const ConnectivitySpec& s) {
  return {{"kind", to_string(s.kind)},
          {"layers", s.num_layers},
          {"units", s.units},
          {"activation", to_string(s.activation)},
          {"batch_norm", s.batch_norm}};
}

inline void from_json(const json& j, ConnectivitySpec& s, const std::string& path) {
  detail::Reader r(j, path);
  std::string kind = to_string(s.kind), act = to_string(s.activation);
  r.get("kind", kind);
  r.get("layers", s.num_layers);
  r.get("units", s.units);
  r.get("activation", act);
  r.get("batch_norm", s.batch_norm);
  r.finish();
  s.kind = parse_block_kind(kind);
  s.activation = parse_activation(act);
  if (s.num_layers < 0) throw ConfigError(path + ".layers must be >= 0");
  if (s.units < 1) throw ConfigError(path + ".units must be >= 1");
}

inline json to_json(const AdamOptions& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

inline void from_json(const json& j, AdamOptions& a, const std::string& path) {
  detail::Reader r(j, path);
  r.get("lr", a.lr);
  r.get("beta1", a.beta1);
  r.get("beta2", a.beta2);
  r.get("eps", a.eps);
  r.finish();
  if (!(a.lr > 0)) throw ConfigError(path + ".lr must be positive");
}

inline json to_json(const OfeNetConfig& c) {
  return {{"enabled", c.enabled},
          {"kind", to_string(c.kind)},
          {"layers_s", c.layers_s},
          {"units_s", c.units_s},
          {"layers_sa", c.layers_sa},
          {"units_sa", c.units_sa},
          {"activation", to_string(c.activation)},
          {"batch_norm", c.batch_norm},
          {"tau", c.tau},
          {"adam", to_json(c.adam)},
          {"normalize_inputs", c.normalize_inputs}};
}

inline void from_json(const json& j, OfeNetConfig& c, const std::string& path) {
  detail::Reader r(j, path);
  std::string kind = to_string(c.kind), act = to_string(c.activation);
  r.get("enabled", c.enabled);
  r.get("kind", kind);
  r.get("layers_s", c.layers_s);
  r.get("units_s", c.units_s);
  r.get("layers_sa", c.layers_sa);
  r.get("units_sa", c.units_sa);
  r.get("activation", act);
  r.get("batch_norm", c.batch_norm);
  r.get("tau", c.tau);
  if (auto* a = r.child("adam")) from_json(*a, c.adam, detail::sub(path, "adam"));
  r.get("normalize_inputs", c.normalize_inputs);
  r.finish();
  c.kind = parse_block_kind(kind);
  c.activation = parse_activation(act);
  if (c.layers_s < 0 || c.layers_sa < 0) throw ConfigError(path + ": layer counts must be >= 0");
  if (c.units_s < 1 || c.units_sa < 1) throw ConfigError(path + ": units must be >= 1");
  if (!(c.tau >= 0 && c.tau <= 1)) throw ConfigError(path + ".tau must lie in [0,1]");
}

inline json to_json(const AgentConfig& c) {
  json j = {{"kind", to_string(c.kind)},
            {"actor", to_json(c.actor)},
            {"critic", to_json(c.critic)},
            {"gamma", c.gamma},
            {"tau", c.tau},
            {"batch_size", c.batch_size},
            {"huber_delta", c.huber_delta},
            {"actor_adam", to_json(c.actor_adam)},
            {"critic_adam", to_json(c.critic_adam)},
            {"alpha_adam", to_json(c.alpha_adam)},
            {"initial_alpha", c.initial_alpha},
            {"auto_alpha", c.auto_alpha},
            {"target_entropy", c.target_entropy ? json(*c.target_entropy) : json(nullptr)},
            {"log_std_min", c.log_std_min},
            {"log_std_max", c.log_std_max},
            {"policy_noise", c.policy_noise},
            {"noise_clip", c.noise_clip},
            {"policy_delay", c.policy_delay},
            {"exploration_noise", c.exploration_noise},
            {"warmup_steps", c.warmup_steps},
            {"joint_finetune", c.joint_finetune}};
  return j;
}

/// Defaults depend on the agent kind, so "kind" is read first.
inline void from_json(const json& j, AgentConfig& c, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  if (j.contains("kind")) {
    if (!j["kind"].is_string()) throw ConfigError(path + ".kind: expected a string");
    const AgentKind k = parse_agent_kind(j["kind"].get<std::string>());
    if (k != c.kind) c = AgentConfig::defaults(k);
  }
  detail::Reader r(j, path);
  std::string kind = to_string(c.kind);
  r.get("kind", kind);
  if (auto* a = r.child("actor")) from_json(*a, c.actor, detail::sub(path, "actor"));
  if (auto* a = r.child("critic")) from_json(*a, c.critic, detail::sub(path, "critic"));
  r.get("gamma", c.gamma);
  r.get("tau", c.tau);
  r.get("batch_size", c.batch_size);
  r.get("huber_delta", c.huber_delta);
  if (auto* a = r.child("actor_adam")) from_json(*a, c.actor_adam, detail::sub(path, "actor_adam"));
  if (auto* a = r.child("critic_adam")) from_json(*a, c.critic_adam, detail::sub(path, "critic_adam"));
  if (auto* a = r.child("alpha_adam")) from_json(*a, c.alpha_adam, detail::sub(path, "alpha_adam"));
  r.get("initial_alpha", c.initial_alpha);
  r.get("auto_alpha", c.auto_alpha);
  r.get("target_entropy", c.target_entropy);
  r.get("log_std_min", c.log_std_min);
  r.get("log_std_max", c.log_std_max);
  r.get("policy_noise", c.policy_noise);
  r.get("noise_clip", c.noise_clip);
  r.get("policy_delay", c.policy_delay);
  r.get("exploration_noise", c.exploration_noise);
  r.get("warmup_steps", c.warmup_steps);
  r.get("joint_finetune", c.joint_finetune);
  r.finish();
  c.validate();
}

inline json to_json(const ReplayOptions& o) {
  return {{"capacity", o.capacity}, {"mode", to_string(o.mode)},     {"alpha", o.alpha},
          {"beta", o.beta},         {"beta_final", o.beta_final},   {"priority_eps", o.priority_eps}};
}

inline void from_json(const json& j, ReplayOptions& o, const std::string& path) {
  detail::Reader r(j, path);
  std::string mode = to_string(o.mode);
  r.get("capacity", o.capacity);
  r.get("mode", mode);
  r.get("alpha", o.alpha);
  r.get("beta", o.beta);
  r.get("beta_final", o.beta_final);
  r.get("priority_eps", o.priority_eps);
  r.finish();
  o.mode = parse_replay_mode(mode);
  if (o.capacity < 1) throw ConfigError(path + ".capacity must be >= 1");
  if (o.alpha < 0) throw ConfigError(path + ".alpha must be >= 0");
  if (!(o.priority_eps > 0)) throw ConfigError(path + ".priority_eps must be positive");
}

inline json to_json(const RunConfig& c) {
  return {{"n_core", c.n_core},
          {"n_env", c.n_env},
          {"gradient_steps", c.gradient_steps},
          {"publish_interval", c.publish_interval},
          {"mode", to_string(c.mode)},
          {"collect_ratio", c.collect_ratio},
          {"queue_capacity", c.queue_capacity},
          {"stop_return", c.stop_return ? json(*c.stop_return) : json(nullptr)}};
}

inline void from_json(const json& j, RunConfig& c, const std::string& path) {
  detail::Reader r(j, path);
  std::string mode = to_string(c.mode);
  r.get("n_core", c.n_core);
  r.get("n_env", c.n_env);
  r.get("gradient_steps", c.gradient_steps);
  r.get("publish_interval", c.publish_interval);
  r.get("mode", mode);
  r.get("collect_ratio", c.collect_ratio);
  r.get("queue_capacity", c.queue_capacity);
  r.get("stop_return", c.stop_return);
  r.finish();
  c.mode = parse_run_mode(mode);
  c.validate();
}

inline json to_json(const EvalConfig& c) {
  return {{"interval", c.interval}, {"episodes", c.episodes}, {"seed", c.seed}};
}

inline void from_json(const json& j, EvalConfig& c, const std::string& path) {
  detail::Reader r(j, path);
  r.get("interval", c.interval);
  r.get("episodes", c.episodes);
  r.get("seed", c.seed);
  r.finish();
}

inline json to_json(const DiagnosticsConfig& c) {
  return {{"rank_interval", c.rank_interval},
          {"rank_probe_size", c.rank_probe_size},
          {"rank_delta", c.rank_delta},
          {"surface_dataset_size", c.surface_dataset_size},
          {"surface_resolution", c.surface_resolution},
          {"surface_range", c.surface_range}};
}

inline void from_json(const json& j, DiagnosticsConfig& c, const std::string& path) {
  detail::Reader r(j, path);
  r.get("rank_interval", c.rank_interval);
  r.get("rank_probe_size", c.rank_probe_size);
  r.get("rank_delta", c.rank_delta);
  r.get("surface_dataset_size", c.surface_dataset_size);
  r.get("surface_resolution", c.surface_resolution);
  r.get("surface_range", c.surface_range);
  r.finish();
}

inline json to_json(const LinearDynamics& d) {
  return {{"A", detail::matrix_to_json(d.A)},
          {"B", detail::matrix_to_json(d.B)},
          {"noise", d.noise},
          {"action_bound", d.action_bound},
          {"max_steps", d.max_steps}};
}

inline void from_json(const json& j, LinearDynamics& d, const std::string& path) {
  detail::Reader r(j, path);
  if (auto* a = r.child("A")) d.A = detail::matrix_from_json(*a, detail::sub(path, "A"));
  if (auto* b = r.child("B")) d.B = detail::matrix_from_json(*b, detail::sub(path, "B"));
  r.get("noise", d.noise);
  r.get("action_bound", d.action_bound);
  r.get("max_steps", d.max_steps);
  r.finish();
  if (d.A.rows() != d.A.cols() || d.B.rows() != d.A.rows())
    throw ConfigError(path + ": A must be square and B must have A's row count");
  if (d.noise < 0) throw ConfigError(path + ".noise must be >= 0");
  if (!(d.action_bound > 0)) throw ConfigError(path + ".action_bound must be positive");
  if (d.max_steps < 1) throw ConfigError(path + ".max_steps must be >= 1");
}

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["env"] = c.env.name;
  if (c.env.dynamics) j["dynamics"] = to_json(*c.env.dynamics);
  j["agent"] = to_json(c.agent);
  j["ofenet"] = to_json(c.ofenet);
  j["replay"] = to_json(c.replay);
  j["run"] = to_json(c.run);
  j["eval"] = to_json(c.eval);
  j["diagnostics"] = to_json(c.diagnostics);
  j["ablation"] = {{"small_units", c.ablation.small_units}};
  j["seeds"] = c.seeds;
  return j;
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::Reader r(j, "");
  r.get("name", c.name);
  r.get("env", c.env.name);
  if (auto* d = r.child("dynamics")) {
    LinearDynamics dyn = LinearDynamics::defaults();
    from_json(*d, dyn, "dynamics");
    c.env.dynamics = dyn;
  }
  if (auto* a = r.child("agent")) from_json(*a, c.agent, "agent");
  if (auto* o = r.child("ofenet")) from_json(*o, c.ofenet, "ofenet");
  if (auto* o = r.child("replay")) from_json(*o, c.replay, "replay");
  if (auto* o = r.child("run")) from_json(*o, c.run, "run");
  if (auto* o = r.child("eval")) from_json(*o, c.eval, "eval");
  if (auto* o = r.child("diagnostics")) from_json(*o, c.diagnostics, "diagnostics");
  if (auto* o = r.child("ablation")) {
    detail::Reader ar(*o, "ablation");
    ar.get("small_units", c.ablation.small_units);
    ar.finish();
  }
  if (auto* s = r.child("seeds")) {
    if (!s->is_array()) throw ConfigError("seeds: expected an array of non-negative integers");
    c.seeds.clear();
    for (auto& v : *s) {
      if (!v.is_number_unsigned()) throw ConfigError("seeds: expected non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  r.finish();
  if (c.env.name != "pendulum" && c.env.name != "pointmass" && c.env.name != "linsys")
    throw ConfigError("env: unknown environment '" + c.env.name + "' (expected pendulum|pointmass|linsys)");
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string dump_config(const ExperimentConfig& c) { return to_json(c).dump(2); }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Hash of the canonical (compact) JSON form.
inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(to_json(c).dump()); }

/// Documentation for every key of the default configuration.
inline const std::map<std::string, std::string>& config_descriptions() {
  static const std::map<std::string, std::string> d = {
      {"name", "Label of the configuration (ablation variants overwrite it)."},
      {"env", "Environment: pendulum | pointmass | linsys."},
      {"dynamics", "linsys only: object with A, B, noise, action_bound, max_steps."},
      {"agent.kind", "sac | td3. Selects kind-specific defaults before the other agent keys apply."},
      {"agent.actor.kind", "Actor block connectivity: mlp | resnet | densenet | d2rl."},
      {"agent.actor.layers", "Hidden layers in the actor block (N_layer)."},
      {"agent.actor.units", "Units per actor layer (N_unit)."},
      {"agent.actor.activation", "relu | swish | tanh | identity."},
      {"agent.actor.batch_norm", "Batch normalisation after each dense layer (off for SAC, on for TD3)."},
      {"agent.critic.kind", "Critic block connectivity."},
      {"agent.critic.layers", "Hidden layers in each critic."},
      {"agent.critic.units", "Units per critic layer."},
      {"agent.critic.activation", "Critic activation."},
      {"agent.critic.batch_norm", "Batch normalisation in the critics."},
      {"agent.gamma", "Discount factor."},
      {"agent.tau", "Polyak coefficient for target networks."},
      {"agent.batch_size", "Minibatch size per gradient step."},
      {"agent.huber_delta", "Huber threshold of the critic loss."},
      {"agent.actor_adam.lr", "Actor Adam learning rate."},
      {"agent.actor_adam.beta1", "Actor Adam beta1."},
      {"agent.actor_adam.beta2", "Actor Adam beta2."},
      {"agent.actor_adam.eps", "Actor Adam epsilon."},
      {"agent.critic_adam.lr", "Critic Adam learning rate."},
      {"agent.critic_adam.beta1", "Critic Adam beta1."},
      {"agent.critic_adam.beta2", "Critic Adam beta2."},
      {"agent.critic_adam.eps", "Critic Adam epsilon."},
      {"agent.alpha_adam.lr", "SAC temperature Adam learning rate."},
      {"agent.alpha_adam.beta1", "SAC temperature Adam beta1."},
      {"agent.alpha_adam.beta2", "SAC temperature Adam beta2."},
      {"agent.alpha_adam.eps", "SAC temperature Adam epsilon."},
      {"agent.initial_alpha", "SAC initial entropy temperature."},
      {"agent.auto_alpha", "SAC: tune the temperature toward the target entropy."},
      {"agent.target_entropy", "SAC target entropy; null means -action_dim."},
      {"agent.log_std_min", "SAC lower clamp of the policy log standard deviation."},
      {"agent.log_std_max", "SAC upper clamp of the policy log standard deviation."},
      {"agent.policy_noise", "TD3 target policy smoothing noise (fraction of the action half-range)."},
      {"agent.noise_clip", "TD3 clip of the smoothing noise."},
      {"agent.policy_delay", "TD3 critic updates per actor update."},
      {"agent.exploration_noise", "TD3 Gaussian exploration noise (fraction of the action half-range)."},
      {"agent.warmup_steps", "Environment steps of uniform-random actions before learning (SAC 10000, TD3 100000)."},
      {"agent.joint_finetune", "Must be false: RL losses do not update the feature extractor."},
      {"ofenet.enabled", "Use the OFENet feature extractor; false feeds raw s and [s, a] to the agent."},
      {"ofenet.kind", "Encoder connectivity (densenet in the reference setup)."},
      {"ofenet.layers_s", "Layers of the state encoder."},
      {"ofenet.units_s", "Units per state-encoder layer."},
      {"ofenet.layers_sa", "Layers of the state-action encoder."},
      {"ofenet.units_sa", "Units per state-action-encoder layer."},
      {"ofenet.activation", "Encoder activation."},
      {"ofenet.batch_norm", "Batch normalisation in the encoders."},
      {"ofenet.tau", "Polyak coefficient of the target extractor."},
      {"ofenet.adam.lr", "Extractor Adam learning rate."},
      {"ofenet.adam.beta1", "Extractor Adam beta1."},
      {"ofenet.adam.beta2", "Extractor Adam beta2."},
      {"ofenet.adam.eps", "Extractor Adam epsilon."},
      {"ofenet.normalize_inputs", "Standardise encoder inputs with running state statistics."},
      {"replay.capacity", "Ring buffer capacity."},
      {"replay.mode", "prioritized | uniform."},
      {"replay.alpha", "Priority exponent."},
      {"replay.beta", "Initial importance-sampling exponent."},
      {"replay.beta_final", "Importance-sampling exponent reached linearly at the last gradient step."},
      {"replay.priority_eps", "Added to |TD error| so priorities stay positive."},
      {"run.n_core", "Collector workers."},
      {"run.n_env", "Environments stepped together by each worker."},
      {"run.gradient_steps", "Learner gradient steps per run."},
      {"run.publish_interval", "Gradient steps between policy snapshot publications."},
      {"run.mode", "async (collector threads) | sync (one collect step per gradient step on one thread)."},
      {"run.collect_ratio", "Async: collectors pause once env steps exceed warmup + ratio x gradient steps."},
      {"run.queue_capacity", "Bounded transition queue between collectors and learner."},
      {"run.stop_return", "End a run once an evaluation average return reaches this value; null disables."},
      {"eval.interval", "Gradient steps between evaluations."},
      {"eval.episodes", "Deterministic evaluation episodes per evaluation."},
      {"eval.seed", "Base seed of evaluation environments (independent of training seeds)."},
      {"diagnostics.rank_interval", "Gradient steps between effective-rank measurements."},
      {"diagnostics.rank_probe_size", "Fixed probe batch size for effective rank."},
      {"diagnostics.rank_delta", "Threshold delta of the effective rank."},
      {"diagnostics.surface_dataset_size", "Stored (s, a, Q-hat) tuples for loss surfaces."},
      {"diagnostics.surface_resolution", "Grid points per axis of a loss surface."},
      {"diagnostics.surface_range", "Surface coefficients span [-range, range]."},
      {"ablation.small_units", "Units used by the 'w/o Larger NN' variant."},
      {"seeds", "Seeds; each seed is one run."},
  };
  return d;
}

inline void flatten_keys(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten_keys(it.value(), detail::sub(prefix, it.key()), out);
  } else {
    out.emplace_back(prefix, j);
  }
}

/// Markdown table of every key of the default configuration.
inline std::string config_reference() {
  std::vector<std::pair<std::string, json>> keys;
  flatten_keys(to_json(ExperimentConfig{}), "", keys);
  const auto& desc = config_descriptions();
  std::ostringstream out;
  out << "# Configuration reference\n\n"
      << "Generated by `widenet defaults --reference`. Unknown keys are rejected.\n\n"
      << "| key | default | description |\n|---|---|---|\n";
  for (auto& [k, v] : keys) {
    auto it = desc.find(k);
    out << "| `" << k << "` | `" << v.dump() << "` | " << (it == desc.end() ? "" : it->second) << " |\n";
  }
  auto it = desc.find("dynamics");
  out << "| `dynamics` | absent | " << it->second << " |\n";
  return out.str();
}

}  // namespace widenet
