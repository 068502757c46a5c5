#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "widenet/core/tensor.hpp"

namespace widenet {

struct Transition {
  Matrix s;       // 1 × state_dim
  Matrix a;       // 1 × action_dim
  double r = 0.0;
  Matrix s_next;  // 1 × state_dim
  bool done = false;  // terminal only; time-limit truncation is not done
  long version = 0;   // snapshot version of the policy that acted
};

/// Column-stacked transitions; r and done are n × 1.
struct Batch {
  Matrix s, a, r, s_next, done;
  Index size() const { return s.rows(); }
};

/// Slot plus the insertion stamp it held when sampled, so that priority
/// updates for overwritten entries can be detected.
struct ReplayIndex {
  std::size_t slot = 0;
  std::uint64_t stamp = 0;
  bool operator==(const ReplayIndex&) const = default;
};

struct SampleResult {
  Batch batch;
  std::vector<ReplayIndex> indices;
  Matrix is_weights;  // n × 1, max-normalised
  std::vector<long> versions;
};

/// Binary tree of partial sums (and minima) over a power-of-two leaf array.
/// Parents are recomputed from their children on every write, so the root
/// never accumulates drift from incremental deltas.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity = 1) {
    leaves_ = 1;
    while (leaves_ < capacity) leaves_ <<= 1;
    sum_.assign(2 * leaves_, 0.0);
    min_.assign(2 * leaves_, std::numeric_limits<double>::infinity());
  }

  void set(std::size_t i, double value) {
    std::size_t k = i + leaves_;
    sum_[k] = value;
    min_[k] = value;
    for (k >>= 1; k >= 1; k >>= 1) {
      sum_[k] = sum_[2 * k] + sum_[2 * k + 1];
      min_[k] = std::min(min_[2 * k], min_[2 * k + 1]);
    }
  }

  double get(std::size_t i) const { return sum_[i + leaves_]; }
  double total() const { return sum_[1]; }
  double min() const { return min_[1]; }

  /// Smallest leaf i with prefix_sum(0..i] > mass.
  std::size_t find(double mass) const {
    std::size_t k = 1;
    while (k < leaves_) {
      const std::size_t left = 2 * k;
      if (mass < sum_[left]) {
        k = left;
      } else {
        mass -= sum_[left];
        k = left + 1;
      }
    }
    return k - leaves_;
  }

 private:
  std::size_t leaves_;
  std::vector<double> sum_, min_;
};

enum class ReplayMode { prioritized, uniform };

struct ReplayOptions {
  std::size_t capacity = 100000;
  ReplayMode mode = ReplayMode::prioritized;
  double alpha = 0.6;
  double beta = 0.4;
  double beta_final = 1.0;  // annealed linearly over the run by the learner
  double priority_eps = 1e-6;

  bool operator==(const ReplayOptions&) const = default;
};

/// Ring-buffer replay with proportional prioritisation:
///   P(i) = p_i^α / Σ_j p_j^α,   w_i = (N·P(i))^{−β} / max_j w_j
/// Sampling is stratified: one draw per equal-mass segment. Uniform mode
/// consumes the same random stream and picks the same indices as
/// prioritised mode with α = 0, with unit weights.
class PrioritizedBuffer {
 public:
  PrioritizedBuffer(int state_dim, int action_dim, ReplayOptions opts = {})
      : state_dim_(state_dim), action_dim_(action_dim), opts_(opts), tree_(opts.capacity) {
    if (opts.capacity < 1) throw ConfigError("replay capacity must be >= 1");
    if (opts.alpha < 0) throw ConfigError("replay alpha must be >= 0");
    if (!(opts.priority_eps > 0)) throw ConfigError("replay priority epsilon must be > 0");
    stamps_.assign(opts.capacity, 0);
    priorities_.assign(opts.capacity, 0.0);
    versions_.assign(opts.capacity, 0);
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return opts_.capacity; }
  const ReplayOptions& options() const { return opts_; }
  ReplayMode mode() const { return opts_.mode; }
  double beta() const { return opts_.beta; }
  void set_beta(double beta) { opts_.beta = beta; }
  double max_priority() const { return max_priority_; }
  long stale_updates() const { return stale_updates_; }

  /// Root of the sum tree: Σ p_i^α over live entries.
  double total_priority() const { return tree_.total(); }
  double priority(std::size_t slot) const { return priorities_.at(slot); }
  double leaf_mass(std::size_t slot) const { return tree_.get(slot); }

  ReplayIndex add(const Transition& t, std::optional<double> initial_priority = {}) {
    require_cols(t.s, state_dim_, "replay add state");
    require_cols(t.s_next, state_dim_, "replay add next state");
    require_cols(t.a, action_dim_, "replay add action");
    if (!std::isfinite(t.r)) throw InvalidArgument("replay add: non-finite reward");
    const double p = initial_priority.value_or(max_priority_);
    if (!(p > 0) || !std::isfinite(p)) throw InvalidArgument("replay add: priority must be positive, got " + std::to_string(p));

    const std::size_t slot = cursor_;
    if (size_ < opts_.capacity) grow();
    auto put = [&](std::vector<double>& dst, const Matrix& src, int dim) {
      std::copy_n(src.data(), dim, dst.data() + slot * static_cast<std::size_t>(dim));
    };
    put(s_, t.s, state_dim_);
    put(a_, t.a, action_dim_);
    put(s_next_, t.s_next, state_dim_);
    r_[slot] = t.r;
    done_[slot] = t.done ? 1.0 : 0.0;
    versions_[slot] = t.version;
    stamps_[slot] = ++next_stamp_;
    set_priority(slot, p);

    cursor_ = (cursor_ + 1) % opts_.capacity;
    size_ = std::min(size_ + 1, opts_.capacity);
    return ReplayIndex{slot, stamps_[slot]};
  }

  SampleResult sample(std::size_t batch_size, Rng& rng) const {
    if (size_ == 0) throw StateError("replay sample: buffer is empty");
    if (batch_size < 1 || batch_size > size_)
      throw StateError("replay sample: batch of " + std::to_string(batch_size) + " from " + std::to_string(size_) +
                       " entries");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::size_t> slots(batch_size);
    const bool uniform_mode = opts_.mode == ReplayMode::uniform;
    const double total = uniform_mode ? static_cast<double>(size_) : tree_.total();
    const double segment = total / static_cast<double>(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const double mass = (static_cast<double>(i) + unit(rng)) * segment;
      std::size_t slot = uniform_mode ? static_cast<std::size_t>(mass) : tree_.find(mass);
      slots[i] = std::min(slot, size_ - 1);
    }

    SampleResult out;
    out.batch = gather(slots);
    out.is_weights = Matrix::Ones(static_cast<Index>(batch_size), 1);
    if (!uniform_mode) {
      const double min_mass = tree_.min();
      for (std::size_t i = 0; i < batch_size; ++i)
        out.is_weights(static_cast<Index>(i), 0) = std::pow(tree_.get(slots[i]) / min_mass, -opts_.beta);
    }
    for (auto s : slots) {
      out.indices.push_back(ReplayIndex{s, stamps_[s]});
      out.versions.push_back(versions_[s]);
    }
    return out;
  }

  /// p_i ← |td_i| + ε. Entries overwritten since sampling are skipped and
  /// counted in stale_updates().
  void update_priorities(std::span<const ReplayIndex> indices, std::span<const double> td_errors) {
    if (indices.size() != td_errors.size())
      throw InvalidArgument("update_priorities: " + std::to_string(indices.size()) + " indices vs " +
                            std::to_string(td_errors.size()) + " errors");
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& idx = indices[i];
      if (!std::isfinite(td_errors[i])) throw NumericError("update_priorities: non-finite TD error");
      if (idx.slot >= size_ || stamps_[idx.slot] != idx.stamp) {
        ++stale_updates_;
        continue;
      }
      set_priority(idx.slot, std::abs(td_errors[i]) + opts_.priority_eps);
    }
  }

  /// Batch of the given slots, in order.
  Batch gather(std::span<const std::size_t> slots) const {
    const Index n = static_cast<Index>(slots.size());
    Batch b{Matrix(n, state_dim_), Matrix(n, action_dim_), Matrix(n, 1), Matrix(n, state_dim_), Matrix(n, 1)};
    for (Index i = 0; i < n; ++i) {
      const std::size_t s = slots[static_cast<std::size_t>(i)];
      for (int k = 0; k < state_dim_; ++k) {
        b.s(i, k) = s_[s * state_dim_ + k];
        b.s_next(i, k) = s_next_[s * state_dim_ + k];
      }
      for (int k = 0; k < action_dim_; ++k) b.a(i, k) = a_[s * action_dim_ + k];
      b.r(i, 0) = r_[s];
      b.done(i, 0) = done_[s];
    }
    return b;
  }

 private:
  void set_priority(std::size_t slot, double p) {
    priorities_[slot] = p;
    max_priority_ = std::max(max_priority_, p);
    tree_.set(slot, opts_.mode == ReplayMode::uniform ? 1.0 : std::pow(p, opts_.alpha));
  }

  void grow() {
    const std::size_t n = size_ + 1;
    s_.resize(n * state_dim_);
    s_next_.resize(n * state_dim_);
    a_.resize(n * action_dim_);
    r_.resize(n);
    done_.resize(n);
  }

  int state_dim_, action_dim_;
  ReplayOptions opts_;
  SumTree tree_;
  std::vector<double> s_, a_, s_next_, r_, done_;
  std::vector<std::uint64_t> stamps_;
  std::vector<double> priorities_;
  std::vector<long> versions_;
  std::size_t size_ = 0, cursor_ = 0;
  std::uint64_t next_stamp_ = 0;
  double max_priority_ = 1.0;
  long stale_updates_ = 0;
};

}  // namespace widenet
