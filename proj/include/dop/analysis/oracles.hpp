#pragma once

// Brute-force reference computations. They enumerate joint actions with
// their own odometer and never call the decomposed expectation, the
// tree-backup recursion or the least-squares solver they are used to check.

#include <cmath>
#include <functional>
#include <vector>

#include "dop/core/errors.hpp"
#include "dop/core/types.hpp"

namespace dop::analysis {

// Calls f(joint) for every joint action, last agent varying fastest.
template <typename F>
void for_each_joint(int n_agents, int n_actions, F&& f) {
  JointDiscrete a(n_agents, 0);
  while (true) {
    f(static_cast<const JointDiscrete&>(a));
    int i = n_agents - 1;
    while (i >= 0 && ++a[i] == n_actions) a[i--] = 0;
    if (i < 0) return;
  }
}

inline double joint_prob(const std::vector<Vector>& pi, const JointDiscrete& a) {
  double p = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) p *= pi[i][a[i]];
  return p;
}

using JointQ = std::function<double(const JointDiscrete&)>;

// E_{a ~ prod_i pi_i} Q(a) by explicit summation over |A|^n joint actions.
inline double brute_force_expectation(const JointQ& q, const std::vector<Vector>& pi, long* reads = nullptr) {
  const int n = static_cast<int>(pi.size()), A = static_cast<int>(pi.front().size());
  double acc = 0.0;
  for_each_joint(n, A, [&](const JointDiscrete& a) {
    acc += joint_prob(pi, a) * q(a);
    if (reads) ++*reads;
  });
  return acc;
}

// Q_i^pi(a_i) = E_{a_-i ~ pi_-i} Q(a_i, a_-i)
inline std::vector<Vector> brute_force_local_values(const JointQ& q, const std::vector<Vector>& pi) {
  const int n = static_cast<int>(pi.size()), A = static_cast<int>(pi.front().size());
  std::vector<Vector> out(n, Vector::Zero(A));
  for_each_joint(n, A, [&](const JointDiscrete& a) {
    const double v = q(a);
    for (int i = 0; i < n; ++i) {
      double w = 1.0;
      for (int l = 0; l < n; ++l)
        if (l != i) w *= pi[l][a[l]];
      out[i][a[i]] += w * v;
    }
  });
  return out;
}

// Everything the tree-backup oracle needs about one episode.
struct OracleEpisode {
  std::vector<JointDiscrete> actions;
  std::vector<double> rewards;
  bool terminated = true;
  bool bootstrap_on_truncation = true;
  // q(t, a) = target Q_tot(s_t, a) for 0 <= t <= T
  std::function<double(int, const JointDiscrete&)> q;
  // pi(t) = per-agent target policies at step t, 0 <= t <= T
  std::function<std::vector<Vector>(int)> pi;
};

// Multi-agent tree backup with the expectation done over joint actions:
//   y = Q(t0, a_t0) + sum_{t=t0}^{min(t0+k,T)-1} gamma^(t-t0) c_t
//                    [r_t + gamma E_{a ~ pi_{t+1}} Q(t+1, a) - Q(t, a_t)]
//   c_t0 = 1,  c_t = c_{t-1} lambda pi(a_t | t)
inline double tree_backup_oracle(const OracleEpisode& ep, int t0, int k, double gamma, double lambda) {
  const int T = static_cast<int>(ep.actions.size());
  auto expectation = [&](int t) {
    if (t == T && (ep.terminated || !ep.bootstrap_on_truncation)) return 0.0;
    const auto p = ep.pi(t);
    return brute_force_expectation([&](const JointDiscrete& a) { return ep.q(t, a); }, p);
  };
  double y = ep.q(t0, ep.actions[t0]);
  for (int t = t0; t < std::min(t0 + k, T); ++t) {
    double c = 1.0;
    for (int l = t0 + 1; l <= t; ++l) c *= lambda * joint_prob(ep.pi(l), ep.actions[l]);
    y += std::pow(gamma, t - t0) * c * (ep.rewards[t] + gamma * expectation(t + 1) - ep.q(t, ep.actions[t]));
  }
  return y;
}

// Forward-view lambda-return: a (1 - lambda) lambda^(m-1) mixture of m-step
// returns, the last one carrying the remaining weight. q_along[t] is the
// bootstrap value at step t < T and end_value the one after the last step.
inline double lambda_return_oracle(const std::vector<double>& rewards, const std::vector<double>& q_along,
                                   double end_value, int t0, double gamma, double lambda) {
  const int T = static_cast<int>(rewards.size());
  const int H = T - t0;
  auto boot = [&](int t) { return t < T ? q_along[t] : end_value; };
  auto m_step = [&](int m) {
    double g = 0.0;
    for (int l = 0; l < m; ++l) g += std::pow(gamma, l) * rewards[t0 + l];
    return g + std::pow(gamma, m) * boot(t0 + m);
  };
  double y = 0.0;
  for (int m = 1; m < H; ++m) y += (1.0 - lambda) * std::pow(lambda, m - 1) * m_step(m);
  y += std::pow(lambda, H - 1) * m_step(H);
  return y;
}

}  // namespace dop::analysis
