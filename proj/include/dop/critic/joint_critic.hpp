#pragma once

#include <vector>

#include "dop/core/errors.hpp"
#include "dop/core/rng.hpp"
#include "dop/critic/decomposed_critic.hpp"
#include "dop/nn/mlp.hpp"
#include "dop/nn/optim.hpp"

namespace dop::critic {

enum class JointMode {
  Scalar,          // Q_tot(s, a) from state and the whole joint action
  Counterfactual,  // |A| values Q_tot(s, (a_-i, .)) for agent i given the others
};

struct JointCriticConfig {
  int n_agents = 2;
  int state_dim = 1;
  bool discrete = true;
  int n_actions = 2;
  int action_dim = 1;
  std::vector<int> hidden{64, 64};
  JointMode mode = JointMode::Scalar;
};

inline Vector one_hot(int index, int size) {
  Vector v = Vector::Zero(size);
  v[index] = 1.0;
  return v;
}

inline JointContinuous one_hot_joint(const JointDiscrete& a, int n_actions) {
  JointContinuous out;
  for (int x : a) {
    if (x < 0 || x >= n_actions) throw InputError("joint critic: action index out of range");
    out.push_back(one_hot(x, n_actions));
  }
  return out;
}

// A single centralised network over the state and the joint action. In
// scalar mode the action part is the concatenation of per-agent encodings
// (one-hots, relaxed one-hots or continuous actions). In counterfactual mode
// the input is state, agent one-hot and the other agents' one-hots (own slot
// zeroed), and the output holds Q_tot for each of the agent's actions.
class JointCritic {
 public:
  struct Pass {
    Tape tape;
    Matrix out;
    Params which = Params::Online;
  };

  JointCritic() = default;
  JointCritic(JointCriticConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (cfg_.mode == JointMode::Counterfactual && !cfg_.discrete)
      throw UnsupportedError("counterfactual joint critic needs discrete actions");
    std::vector<int> w{input_dim()};
    w.insert(w.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    w.push_back(cfg_.mode == JointMode::Scalar ? 1 : cfg_.n_actions);
    online_ = Mlp(w, nn::Activation::Identity, rng);
    target_ = online_;
  }

  const JointCriticConfig& config() const { return cfg_; }
  int n_agents() const { return cfg_.n_agents; }
  int slot() const { return cfg_.discrete ? cfg_.n_actions : cfg_.action_dim; }
  int input_dim() const {
    const int acts = cfg_.n_agents * slot();
    return cfg_.state_dim + acts + (cfg_.mode == JointMode::Counterfactual ? cfg_.n_agents : 0);
  }

  Mlp& net(Params w = Params::Online) { return w == Params::Online ? online_ : target_; }
  const Mlp& net(Params w = Params::Online) const { return w == Params::Online ? online_ : target_; }
  ParamRefs param_refs(Params w = Params::Online) {
    ParamRefs r;
    r.add(net(w).params());
    return r;
  }
  void sync_target() { target_ = online_; }
  void soft_update_target(double alpha) { nn::soft_update(target_.params(), online_.params(), alpha); }

  // Scalar-mode input: state then each agent's encoded action.
  Matrix encode(const Matrix& states, const std::vector<JointContinuous>& actions) const {
    require_mode(JointMode::Scalar);
    check_batch(states, actions.size());
    Matrix x(input_dim(), states.cols());
    x.topRows(cfg_.state_dim) = states;
    for (Eigen::Index b = 0; b < states.cols(); ++b) {
      if (static_cast<int>(actions[b].size()) != cfg_.n_agents) throw ShapeError("joint critic: arity mismatch");
      for (int i = 0; i < cfg_.n_agents; ++i) {
        if (actions[b][i].size() != slot()) throw ShapeError("joint critic: action encoding size mismatch");
        x.col(b).segment(cfg_.state_dim + i * slot(), slot()) = actions[b][i];
      }
    }
    return x;
  }
  Matrix encode(const Matrix& states, const std::vector<JointDiscrete>& actions) const {
    std::vector<JointContinuous> enc;
    for (const auto& a : actions) enc.push_back(one_hot_joint(a, cfg_.n_actions));
    return encode(states, enc);
  }

  // Counterfactual-mode input for `agent`.
  Matrix encode_counterfactual(const Matrix& states, const std::vector<JointDiscrete>& actions, int agent) const {
    require_mode(JointMode::Counterfactual);
    check_batch(states, actions.size());
    Matrix x = Matrix::Zero(input_dim(), states.cols());
    x.topRows(cfg_.state_dim) = states;
    for (Eigen::Index b = 0; b < states.cols(); ++b) {
      x(cfg_.state_dim + agent, b) = 1.0;
      for (int j = 0; j < cfg_.n_agents; ++j) {
        const int a = actions[b][j];
        if (a < 0 || a >= cfg_.n_actions) throw InputError("joint critic: action index out of range");
        if (j != agent) x(cfg_.state_dim + cfg_.n_agents + j * cfg_.n_actions + a, b) = 1.0;
      }
    }
    return x;
  }

  Pass forward(const Matrix& inputs, Params w = Params::Online) const {
    Pass p;
    p.which = w;
    p.out = net(w).forward(inputs, p.tape);
    return p;
  }

  // Q_tot at discrete joint actions in either mode.
  RowVector q_tot(const Matrix& states, const std::vector<JointDiscrete>& actions, Params w = Params::Online) const {
    if (cfg_.mode == JointMode::Scalar) return net(w).forward(encode(states, actions)).row(0);
    const Matrix out = net(w).forward(encode_counterfactual(states, actions, 0));
    RowVector q(out.cols());
    for (Eigen::Index b = 0; b < out.cols(); ++b) q[b] = out(actions[b][0], b);
    return q;
  }
  RowVector q_tot(const Matrix& states, const std::vector<JointContinuous>& actions, Params w = Params::Online) const {
    return net(w).forward(encode(states, actions)).row(0);
  }

  nn::Backward backward(const Pass& p, const Matrix& upstream) const { return net(p.which).backward(p.tape, upstream); }

  // d(sum_b upstream[b] Q_tot) / d(agent i's encoded action), slot x B.
  Matrix action_input_grad(const nn::Backward& bw, int agent) const {
    require_mode(JointMode::Scalar);
    return bw.input.middleRows(cfg_.state_dim + agent * slot(), slot());
  }

 private:
  void require_mode(JointMode m) const {
    if (cfg_.mode != m) throw UnsupportedError("joint critic: operation not available in this mode");
  }
  void check_batch(const Matrix& states, std::size_t n) const {
    if (states.rows() != cfg_.state_dim) throw ShapeError("joint critic: state dimension mismatch");
    if (static_cast<std::size_t>(states.cols()) != n) throw ShapeError("joint critic: one action per state column");
  }

  JointCriticConfig cfg_;
  Mlp online_;
  Mlp target_;
};

}  // namespace dop::critic
