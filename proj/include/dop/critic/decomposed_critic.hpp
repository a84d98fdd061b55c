#pragma once

#include <span>
#include <vector>

#include "dop/core/errors.hpp"
#include "dop/core/rng.hpp"
#include "dop/nn/checkpoint.hpp"
#include "dop/nn/mlp.hpp"
#include "dop/nn/optim.hpp"

namespace dop::critic {

using nn::Grad;
using nn::Mlp;
using nn::ParamRefs;
using nn::Tape;

struct CriticConfig {
  int n_agents = 2;
  int state_dim = 1;
  bool discrete = true;
  int n_actions = 2;   // discrete
  int action_dim = 1;  // continuous
  std::vector<int> hidden{64, 64};
  // One utility network per agent instead of a shared one with an agent-id input.
  bool per_agent_networks = false;
  // Divide the absolute mixing weights by their sum.
  bool normalize_mixing = true;
};

// Decomposition of one (state, joint action) pair.
struct CriticEval {
  double q_tot = 0.0;
  std::vector<double> q_local;  // Q_i(s, a_i)
  std::vector<double> k;        // mixing weights
  double b = 0.0;
};

// Counts local utility reads made while computing an expectation.
struct ReadCounter {
  long reads = 0;
};

enum class Params { Online, Target };

// Linearly decomposed centralised critic
//   Q_tot(s, a) = sum_i k_i(s) Q_i(s, a_i) + b(s),   k_i >= 0.
// Utility networks see the global state, an agent one-hot and (continuous
// case) the agent's own action. Mixing weights come from a linear network
// with absolute output; the bias from a separate linear network. A full
// target copy of every network is kept alongside the online parameters.
class DecomposedCritic {
 public:
  struct Nets {
    std::vector<Mlp> utility;
    Mlp k_net;
    Mlp b_net;
  };

  // Cached forward pass over a batch of B samples.
  struct Pass {
    int batch = 0;
    std::vector<Tape> util_tapes;
    Tape k_tape, b_tape;
    Matrix raw_k;                     // n x B, |.| of the mixing network output
    Matrix k;                         // n x B, (normalised) mixing weights
    RowVector bias;                   // 1 x B
    std::vector<Matrix> values;       // discrete: per agent, |A| x B (all local actions)
    Matrix local;                     // n x B, Q_i at the taken actions
    RowVector q_tot;                  // 1 x B
    std::vector<JointDiscrete> discrete_actions;
    Params which = Params::Online;
  };

  DecomposedCritic() = default;

  DecomposedCritic(CriticConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (cfg_.n_agents < 1) throw ConfigError("critic: n_agents must be positive");
    const int in = utility_input_dim();
    std::vector<int> widths{in};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    widths.push_back(cfg_.discrete ? cfg_.n_actions : 1);
    const int n_util = cfg_.per_agent_networks ? cfg_.n_agents : 1;
    for (int i = 0; i < n_util; ++i) online_.utility.emplace_back(widths, nn::Activation::Identity, rng);
    online_.k_net = Mlp({cfg_.state_dim, cfg_.n_agents}, nn::Activation::Absolute, rng);
    online_.b_net = Mlp({cfg_.state_dim, 1}, nn::Activation::Identity, rng);
    target_ = online_;
  }

  const CriticConfig& config() const { return cfg_; }
  int n_agents() const { return cfg_.n_agents; }
  int n_actions() const { return cfg_.n_actions; }
  bool discrete() const { return cfg_.discrete; }
  int utility_input_dim() const {
    return cfg_.state_dim + cfg_.n_agents + (cfg_.discrete ? 0 : cfg_.action_dim);
  }

  Nets& nets(Params w = Params::Online) { return w == Params::Online ? online_ : target_; }
  const Nets& nets(Params w = Params::Online) const { return w == Params::Online ? online_ : target_; }

  ParamRefs param_refs(Params w = Params::Online) {
    ParamRefs r;
    Nets& n = nets(w);
    for (auto& u : n.utility) r.add(u.params());
    r.add(n.k_net.params());
    r.add(n.b_net.params());
    return r;
  }

  void sync_target() { target_ = online_; }
  void soft_update_target(double alpha) {
    ParamRefs t = param_refs(Params::Target);
    ParamRefs o = param_refs(Params::Online);
    nn::soft_update(t, o, alpha);
  }

  // ---- discrete critic -------------------------------------------------

  // Evaluates every local action value at the given states (columns).
  Pass forward_values(const Matrix& states, Params w = Params::Online) const {
    require(cfg_.discrete, "forward_values needs a discrete critic");
    Pass p = begin_pass(states, w);
    const Nets& n = nets(w);
    const int B = p.batch, N = cfg_.n_agents;
    p.values.assign(N, Matrix());
    if (cfg_.per_agent_networks) {
      p.util_tapes.resize(N);
      for (int i = 0; i < N; ++i) p.values[i] = n.utility[i].forward(utility_inputs(states, i), p.util_tapes[i]);
    } else {
      p.util_tapes.resize(1);
      Matrix x(utility_input_dim(), static_cast<Eigen::Index>(N) * B);
      for (int i = 0; i < N; ++i) x.middleCols(static_cast<Eigen::Index>(i) * B, B) = utility_inputs(states, i);
      const Matrix all = n.utility[0].forward(x, p.util_tapes[0]);
      for (int i = 0; i < N; ++i) p.values[i] = all.middleCols(static_cast<Eigen::Index>(i) * B, B);
    }
    return p;
  }

  // Full forward at (state, joint action) pairs.
  Pass forward(const Matrix& states, const std::vector<JointDiscrete>& actions, Params w = Params::Online) const {
    if (static_cast<Eigen::Index>(actions.size()) != states.cols())
      throw ShapeError("critic: one joint action per state column required");
    Pass p = forward_values(states, w);
    const int N = cfg_.n_agents;
    p.discrete_actions = actions;
    p.local.resize(N, p.batch);
    for (int b = 0; b < p.batch; ++b) {
      check_joint(actions[b]);
      for (int i = 0; i < N; ++i) p.local(i, b) = p.values[i](actions[b][i], b);
    }
    finish_q_tot(p);
    return p;
  }

  CriticEval eval(const Vector& state, std::span<const int> joint_action, Params w = Params::Online) const {
    const Pass p = forward(Matrix(state), {JointDiscrete(joint_action.begin(), joint_action.end())}, w);
    return to_eval(p, 0);
  }

  // sum_i k_i(s) E_{pi_i}[Q_i(s, .)] + b(s) for one column of a pass;
  // reads exactly n * |A| local values.
  double expected_q(const Pass& p, int col, const std::vector<Vector>& policies, ReadCounter* counter = nullptr) const {
    require(cfg_.discrete, "expected_q is undefined for continuous actions");
    if (static_cast<int>(policies.size()) != cfg_.n_agents) throw ShapeError("expected_q: one policy per agent");
    double acc = 0.0;
    for (int i = 0; i < cfg_.n_agents; ++i) {
      if (policies[i].size() != cfg_.n_actions) throw ShapeError("expected_q: policy size != |A|");
      double e = 0.0;
      for (int x = 0; x < cfg_.n_actions; ++x) e += policies[i][x] * p.values[i](x, col);
      if (counter) counter->reads += cfg_.n_actions;
      acc += p.k(i, col) * e;
    }
    return acc + p.bias[col];
  }

  double expected_q(const Vector& state, const std::vector<Vector>& policies, Params w = Params::Online,
                    ReadCounter* counter = nullptr) const {
    if (!cfg_.discrete) throw UnsupportedError("expected_q is undefined for continuous actions");
    const Pass p = forward_values(Matrix(state), w);
    return expected_q(p, 0, policies, counter);
  }

  // ---- continuous critic -----------------------------------------------

  Pass forward(const Matrix& states, const std::vector<JointContinuous>& actions, Params w = Params::Online) const {
    require(!cfg_.discrete, "continuous forward needs a continuous critic");
    if (static_cast<Eigen::Index>(actions.size()) != states.cols())
      throw ShapeError("critic: one joint action per state column required");
    Pass p = begin_pass(states, w);
    const Nets& n = nets(w);
    const int B = p.batch, N = cfg_.n_agents;
    for (const auto& ja : actions) {
      if (static_cast<int>(ja.size()) != N) throw ShapeError("critic: joint action arity != n_agents");
      for (const auto& a : ja)
        if (a.size() != cfg_.action_dim) throw ShapeError("critic: action dimension mismatch");
    }
    p.local.resize(N, B);
    auto inputs_for = [&](int i) {
      Matrix x = utility_inputs(states, i);
      for (int b = 0; b < B; ++b) x.col(b).tail(cfg_.action_dim) = actions[b][i];
      return x;
    };
    if (cfg_.per_agent_networks) {
      p.util_tapes.resize(N);
      for (int i = 0; i < N; ++i) p.local.row(i) = n.utility[i].forward(inputs_for(i), p.util_tapes[i]);
    } else {
      p.util_tapes.resize(1);
      Matrix x(utility_input_dim(), static_cast<Eigen::Index>(N) * B);
      for (int i = 0; i < N; ++i) x.middleCols(static_cast<Eigen::Index>(i) * B, B) = inputs_for(i);
      const Matrix all = n.utility[0].forward(x, p.util_tapes[0]);
      for (int i = 0; i < N; ++i) p.local.row(i) = all.middleCols(static_cast<Eigen::Index>(i) * B, B);
    }
    finish_q_tot(p);
    return p;
  }

  CriticEval eval(const Vector& state, const JointContinuous& joint_action, Params w = Params::Online) const {
    const Pass p = forward(Matrix(state), std::vector<JointContinuous>{joint_action}, w);
    return to_eval(p, 0);
  }

  // k_i(s) dQ_i(s, a_i)/da_i for every agent and sample of a continuous
  // pass: result[i] is action_dim x B.
  std::vector<Matrix> action_gradients(const Pass& p) const {
    require(!cfg_.discrete, "action gradients need a continuous critic");
    const Nets& n = nets(p.which);
    const int B = p.batch, N = cfg_.n_agents, D = cfg_.action_dim;
    std::vector<Matrix> out(N);
    if (cfg_.per_agent_networks) {
      for (int i = 0; i < N; ++i) {
        const auto bw = n.utility[i].backward(p.util_tapes[i], Matrix::Ones(1, B));
        out[i] = bw.input.bottomRows(D);
      }
    } else {
      const auto bw = n.utility[0].backward(p.util_tapes[0], Matrix::Ones(1, static_cast<Eigen::Index>(N) * B));
      for (int i = 0; i < N; ++i) out[i] = bw.input.bottomRows(D).middleCols(static_cast<Eigen::Index>(i) * B, B);
    }
    for (int i = 0; i < N; ++i)
      for (int b = 0; b < B; ++b) out[i].col(b) *= p.k(i, b);
    return out;
  }

  Vector grad_wrt_action(const Vector& state, const JointContinuous& joint_action, int agent,
                         Params w = Params::Online) const {
    if (cfg_.discrete) throw UnsupportedError("grad_wrt_action is undefined for discrete actions");
    if (agent < 0 || agent >= cfg_.n_agents) throw InputError("grad_wrt_action: agent index out of range");
    const Pass p = forward(Matrix(state), std::vector<JointContinuous>{joint_action}, w);
    return action_gradients(p)[agent].col(0);
  }

  // ---- training --------------------------------------------------------

  // Gradient of sum_b dq_tot[b] * Q_tot(s_b, a_b) w.r.t. the parameters
  // used by the pass, ordered as param_refs().
  Grad backward(const Pass& p, const RowVector& dq_tot) const {
    if (dq_tot.size() != p.batch) throw ShapeError("critic backward: upstream size != batch");
    const Nets& n = nets(p.which);
    const int B = p.batch, N = cfg_.n_agents;

    // dQ_tot / dQ_i = k_i
    Matrix d_local(N, B);
    for (int i = 0; i < N; ++i) d_local.row(i) = p.k.row(i).cwiseProduct(dq_tot);

    Grad g;
    auto util_upstream = [&](int i) {
      if (!cfg_.discrete) return Matrix(d_local.row(i));
      Matrix u = Matrix::Zero(cfg_.n_actions, B);
      for (int b = 0; b < B; ++b) u(p.discrete_actions[b][i], b) = d_local(i, b);
      return u;
    };
    if (cfg_.per_agent_networks) {
      for (int i = 0; i < N; ++i) g.append(n.utility[i].backward(p.util_tapes[i], util_upstream(i)).params);
    } else {
      Matrix up(n.utility[0].output_dim(), static_cast<Eigen::Index>(N) * B);
      for (int i = 0; i < N; ++i) up.middleCols(static_cast<Eigen::Index>(i) * B, B) = util_upstream(i);
      g.append(n.utility[0].backward(p.util_tapes[0], up).params);
    }

    // dQ_tot / dk_i = Q_i, then through the normalisation k = r / sum(r).
    Matrix d_k(N, B);
    for (int i = 0; i < N; ++i) d_k.row(i) = p.local.row(i).cwiseProduct(dq_tot);
    Matrix d_raw = d_k;
    if (cfg_.normalize_mixing) {
      for (int b = 0; b < B; ++b) {
        const double s = p.raw_k.col(b).sum();
        if (s > 0.0) d_raw.col(b) = (d_k.col(b).array() - d_k.col(b).dot(p.k.col(b))) / s;
      }
    }
    g.append(n.k_net.backward(p.k_tape, d_raw).params);
    g.append(n.b_net.backward(p.b_tape, Matrix(dq_tot)).params);
    return g;
  }

  // ---- checkpoints -----------------------------------------------------

  nn::Checkpoint checkpoint(Params w = Params::Online) const {
    nn::Checkpoint ck;
    const Nets& n = nets(w);
    for (std::size_t i = 0; i < n.utility.size(); ++i) nn::add_network(ck, "utility" + std::to_string(i), n.utility[i]);
    nn::add_network(ck, "mixer_k", n.k_net);
    nn::add_network(ck, "mixer_b", n.b_net);
    return ck;
  }
  void restore(const nn::Checkpoint& ck, Params w = Params::Online) {
    Nets& n = nets(w);
    for (std::size_t i = 0; i < n.utility.size(); ++i) nn::load_network(ck, "utility" + std::to_string(i), n.utility[i]);
    nn::load_network(ck, "mixer_k", n.k_net);
    nn::load_network(ck, "mixer_b", n.b_net);
  }

  static CriticEval to_eval(const Pass& p, int col) {
    CriticEval e;
    const int N = static_cast<int>(p.k.rows());
    e.q_tot = p.q_tot[col];
    e.b = p.bias[col];
    for (int i = 0; i < N; ++i) {
      e.q_local.push_back(p.local(i, col));
      e.k.push_back(p.k(i, col));
    }
    return e;
  }

 private:
  static void require(bool cond, const char* what) {
    if (!cond) throw UnsupportedError(std::string("critic: ") + what);
  }

  void check_joint(const JointDiscrete& a) const {
    if (static_cast<int>(a.size()) != cfg_.n_agents) throw ShapeError("critic: joint action arity != n_agents");
    for (int x : a)
      if (x < 0 || x >= cfg_.n_actions) throw InputError("critic: action index out of range");
  }

  Matrix utility_inputs(const Matrix& states, int agent) const {
    Matrix x = Matrix::Zero(utility_input_dim(), states.cols());
    x.topRows(cfg_.state_dim) = states;
    x.row(cfg_.state_dim + agent).setOnes();
    return x;
  }

  Pass begin_pass(const Matrix& states, Params w) const {
    if (states.rows() != cfg_.state_dim) throw ShapeError("critic: state dimension mismatch");
    Pass p;
    p.which = w;
    p.batch = static_cast<int>(states.cols());
    const Nets& n = nets(w);
    p.raw_k = n.k_net.forward(states, p.k_tape);
    p.bias = n.b_net.forward(states, p.b_tape).row(0);
    p.k = p.raw_k;
    if (cfg_.normalize_mixing) {
      for (int b = 0; b < p.batch; ++b) {
        const double s = p.raw_k.col(b).sum();
        if (s > 0.0) p.k.col(b) /= s;
      }
    }
    return p;
  }

  static void finish_q_tot(Pass& p) {
    p.q_tot = (p.k.array() * p.local.array()).colwise().sum().matrix() + p.bias;
  }

  CriticConfig cfg_;
  Nets online_;
  Nets target_;
};

}  // namespace dop::critic
