#pragma once

#include <chrono>
#include <deque>
#include <memory>
#include <optional>

#include "dop/algo/policies.hpp"
#include "dop/envs/matrix_game.hpp"
#include "dop/envs/tabular.hpp"
#include "dop/harness/metrics.hpp"

namespace dop::algo {

using harness::MetricRecord;
using harness::MetricSink;

// Exact Q_tot over all joint actions at the initial state, when the
// environment is a one-shot game whose reward table is the action value.
inline std::optional<Vector> truth_table(const envs::Environment& env) {
  if (env.spec().name != "matrix_game") return std::nullopt;
  const int n = env.spec().n_agents, A = env.spec().action_space.size;
  const long J = envs::joint_count(n, A);
  Vector t(J);
  for (long j = 0; j < J; ++j) t[j] = envs::MatrixGame::payoff(envs::unflatten_joint(j, n, A));
  return t;
}

inline bool is_matrix_game(const envs::Environment& env) { return env.spec().name == "matrix_game"; }

// Uniform sampling with replacement from a bounded FIFO.
template <typename T>
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity = 1) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("buffer capacity must be positive");
  }
  void push(T item) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(item));
  }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t capacity() const { return capacity_; }
  const T& operator[](std::size_t i) const { return items_[i]; }
  const T& back() const { return items_.back(); }
  void clear() { items_.clear(); }

  std::vector<const T*> sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw StateError("cannot sample from an empty buffer");
    std::vector<const T*> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(&items_[uniform_index(rng, items_.size())]);
    return out;
  }
  // The most recent min(n, size) items, oldest first.
  std::vector<const T*> latest(std::size_t n) const {
    std::vector<const T*> out;
    const std::size_t m = std::min(n, items_.size());
    for (std::size_t k = items_.size() - m; k < items_.size(); ++k) out.push_back(&items_[k]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
};

class WallClock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Settings shared by every trainer.
struct RunSettings {
  std::string run_id;
  std::uint64_t seed = 0;
  long total_steps = 10000;
  long metric_period = 500;
  int eval_episodes = 1;
  int variance_samples = 0;  // 0 disables the gradient-variance probe
  bool record_wall_clock = false;
};

class Trainer {
 public:
  virtual ~Trainer() = default;
  // Trains for settings().total_steps environment steps.
  virtual void run(const MetricSink& sink) = 0;
  virtual long steps() const = 0;
};

// Decides when a metric row is due and accumulates training returns
// between rows.
class MetricClock {
 public:
  explicit MetricClock(long period) : period_(period), next_(period) {
    if (period < 1) throw ConfigError("metric_period must be >= 1");
  }
  void add_return(double r) {
    sum_ += r;
    ++count_;
  }
  bool due(long steps) const { return steps >= next_; }
  std::optional<double> take_return() {
    std::optional<double> r;
    if (count_ > 0) r = sum_ / count_;
    sum_ = 0.0;
    count_ = 0;
    return r;
  }
  void advance(long steps) {
    while (next_ <= steps) next_ += period_;
  }

 private:
  long period_, next_;
  double sum_ = 0.0;
  long count_ = 0;
};

inline void require_finite(double v, const char* what, long step) {
  if (!std::isfinite(v)) throw TrainingError(std::string("non-finite ") + what, step);
}

// Plays one episode with a discrete policy callback; returns the episode.
template <typename ActFn>
envs::Episode rollout_discrete(envs::Environment& env, Rng& env_rng, int window, ActFn&& choose) {
  const auto& spec = env.spec();
  envs::Episode ep;
  auto res = env.reset(env_rng);
  ObservationHistory hist(spec.n_agents, window);
  hist.reset(res.observations);
  for (int t = 0; t < spec.episode_limit; ++t) {
    envs::EpisodeStep st;
    st.observations = res.observations;
    st.state = res.state;
    ActResult a = choose(hist.inputs());
    st.actions = a.actions;
    st.behavior_probs = a.behavior_probs;
    res = env.step(std::span<const int>(st.actions));
    st.reward = res.reward;
    ep.steps.push_back(std::move(st));
    hist.push(res.observations);
    if (res.done()) break;
  }
  ep.final_observations = res.observations;
  ep.final_state = res.state;
  ep.terminated = res.terminated;
  return ep;
}

}  // namespace dop::algo
