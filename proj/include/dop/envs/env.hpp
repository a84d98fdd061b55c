#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dop/core/errors.hpp"
#include "dop/core/rng.hpp"
#include "dop/core/types.hpp"

namespace dop::envs {

struct ActionSpace {
  enum class Kind { Discrete, Continuous };

  Kind kind = Kind::Discrete;
  int size = 0;  // number of actions (discrete)
  int dim = 0;   // action dimension (continuous)
  Vector low;
  Vector high;

  static ActionSpace discrete(int n) {
    ActionSpace s;
    s.kind = Kind::Discrete;
    s.size = n;
    return s;
  }
  static ActionSpace continuous(int dim, double lo, double hi) {
    ActionSpace s;
    s.kind = Kind::Continuous;
    s.dim = dim;
    s.low = Vector::Constant(dim, lo);
    s.high = Vector::Constant(dim, hi);
    return s;
  }
  bool is_discrete() const { return kind == Kind::Discrete; }
};

struct EnvSpec {
  std::string name;
  int n_agents = 2;
  ActionSpace action_space;
  int obs_dim = 1;
  int state_dim = 1;
  int episode_limit = 1;
  double gamma = 0.99;

  void validate() const {
    if (n_agents < 2) throw ConfigError(name + ": n_agents must be >= 2");
    if (episode_limit < 1) throw ConfigError(name + ": episode_limit must be >= 1");
    if (obs_dim < 1 || state_dim < 1) throw ConfigError(name + ": obs/state dims must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError(name + ": gamma must lie in [0, 1)");
    if (action_space.is_discrete()) {
      if (action_space.size < 1) throw ConfigError(name + ": empty discrete action space");
    } else {
      if (action_space.dim < 1) throw ConfigError(name + ": continuous action dim must be positive");
      for (int d = 0; d < action_space.dim; ++d)
        if (!(action_space.low[d] < action_space.high[d]))
          throw ConfigError(name + ": action box needs low < high");
    }
  }
};

struct StepResult {
  std::vector<Vector> observations;
  Vector state;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;

  bool done() const { return terminated || truncated; }
};

// A Dec-POMDP instance. Discrete environments override step(span<const int>),
// continuous ones override step(const JointContinuous&).
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual StepResult reset(Rng& rng) = 0;
  virtual StepResult step(std::span<const int> /*joint_action*/) {
    throw UnsupportedError(spec().name + " has a continuous action space");
  }
  virtual StepResult step(const JointContinuous& /*joint_action*/) {
    throw UnsupportedError(spec().name + " has a discrete action space");
  }
  virtual std::unique_ptr<Environment> clone() const = 0;

  // Steps taken since the last reset.
  virtual int t() const = 0;
};

// One timestep of a discrete-action episode.
struct EpisodeStep {
  std::vector<Vector> observations;
  Vector state;
  JointDiscrete actions;
  // Probability the behaviour policy assigned to each agent's taken action.
  std::vector<double> behavior_probs;
  double reward = 0.0;
};

struct Episode {
  std::vector<EpisodeStep> steps;
  std::vector<Vector> final_observations;
  Vector final_state;
  bool terminated = false;
  // Version of the policy parameters that generated this episode.
  long policy_version = 0;

  int length() const { return static_cast<int>(steps.size()); }
  double total_reward(double gamma = 1.0) const {
    double g = 0.0, disc = 1.0;
    for (const auto& s : steps) {
      g += disc * s.reward;
      disc *= gamma;
    }
    return g;
  }
  void validate_behavior() const {
    for (const auto& s : steps) {
      if (s.behavior_probs.size() != s.actions.size())
        throw DataError("episode step is missing behaviour probabilities");
      for (double p : s.behavior_probs)
        if (!(p > 0.0)) throw DataError("behaviour probability must be strictly positive");
    }
  }
};

inline double clip(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

}  // namespace dop::envs
