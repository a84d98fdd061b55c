#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "dop/envs/tabular.hpp"

namespace dop::analysis {

// pi[i] is n_states x n_actions; row s is agent i's distribution in state s.
using TabularPolicy = std::vector<Matrix>;

struct PolicyValue {
  double J = 0.0;
  Vector V;                // n_states
  Matrix Q;                // n_states x |A|^n, Q_tot^pi
  std::vector<Matrix> Qi;  // per agent, n_states x |A|: E_{a_-i ~ pi_-i} Q_tot
  Vector occupancy;        // sum_t gamma^t P(s_t = s)
};

inline void check_policy(const envs::TabularDecMDP& mdp, const TabularPolicy& pi) {
  if (static_cast<int>(pi.size()) != mdp.n_agents) throw ShapeError("policy: one table per agent");
  for (const auto& p : pi)
    if (p.rows() != mdp.n_states || p.cols() != mdp.n_actions) throw ShapeError("policy: table shape");
}

// pi(j | s) for every state and flattened joint action.
inline Matrix joint_policy(const envs::TabularDecMDP& mdp, const TabularPolicy& pi) {
  const long J = mdp.n_joint();
  Matrix out(mdp.n_states, J);
  for (int s = 0; s < mdp.n_states; ++s)
    for (long j = 0; j < J; ++j) {
      const auto a = envs::unflatten_joint(j, mdp.n_agents, mdp.n_actions);
      double p = 1.0;
      for (int i = 0; i < mdp.n_agents; ++i) p *= pi[i](s, a[i]);
      out(s, j) = p;
    }
  return out;
}

inline Matrix state_transition(const envs::TabularDecMDP& mdp, const Matrix& pj) {
  const long J = mdp.n_joint();
  Matrix P = Matrix::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (long j = 0; j < J; ++j) P.row(s) += pj(s, j) * mdp.next_dist(s, j).transpose();
  return P;
}

inline Matrix q_from_v(const envs::TabularDecMDP& mdp, const Vector& V) {
  Matrix Q(mdp.n_states, mdp.n_joint());
  for (int s = 0; s < mdp.n_states; ++s)
    for (long j = 0; j < mdp.n_joint(); ++j) Q(s, j) = mdp.reward(s, j) + mdp.gamma * mdp.next_dist(s, j).dot(V);
  return Q;
}

inline std::vector<Matrix> local_values(const envs::TabularDecMDP& mdp, const TabularPolicy& pi, const Matrix& Q) {
  std::vector<Matrix> Qi(mdp.n_agents, Matrix::Zero(mdp.n_states, mdp.n_actions));
  for (int s = 0; s < mdp.n_states; ++s)
    for (long j = 0; j < mdp.n_joint(); ++j) {
      const auto a = envs::unflatten_joint(j, mdp.n_agents, mdp.n_actions);
      for (int i = 0; i < mdp.n_agents; ++i) {
        double w = 1.0;
        for (int l = 0; l < mdp.n_agents; ++l)
          if (l != i) w *= pi[l](s, a[l]);
        Qi[i](s, a[i]) += w * Q(s, j);
      }
    }
  return Qi;
}

// Exact evaluation by a direct solve of (I - gamma P_pi) V = r_pi.
inline PolicyValue exact_policy_value(const envs::TabularDecMDP& mdp, const TabularPolicy& pi) {
  envs::check_tabular_size(mdp.n_states, mdp.n_agents, mdp.n_actions);
  check_policy(mdp, pi);
  const Matrix pj = joint_policy(mdp, pi);
  const Matrix P = state_transition(mdp, pj);
  const Vector r = (pj.cwiseProduct(mdp.reward)).rowwise().sum();
  const Matrix I = Matrix::Identity(mdp.n_states, mdp.n_states);
  PolicyValue out;
  out.V = (I - mdp.gamma * P).partialPivLu().solve(r);
  out.Q = q_from_v(mdp, out.V);
  out.Qi = local_values(mdp, pi, out.Q);
  out.J = mdp.initial.dot(out.V);
  out.occupancy = (I - mdp.gamma * P.transpose()).partialPivLu().solve(mdp.initial);
  return out;
}

// Independent cross-check: iterate V <- r_pi + gamma P_pi V until the
// update is below tol.
inline Vector value_iteration(const envs::TabularDecMDP& mdp, const TabularPolicy& pi, double tol = 1e-12,
                              int max_iter = 100000) {
  envs::check_tabular_size(mdp.n_states, mdp.n_agents, mdp.n_actions);
  check_policy(mdp, pi);
  Vector V = Vector::Zero(mdp.n_states);
  for (int it = 0; it < max_iter; ++it) {
    Vector next = Vector::Zero(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s)
      for (long j = 0; j < mdp.n_joint(); ++j) {
        const auto a = envs::unflatten_joint(j, mdp.n_agents, mdp.n_actions);
        double p = 1.0;
        for (int i = 0; i < mdp.n_agents; ++i) p *= pi[i](s, a[i]);
        next[s] += p * (mdp.reward(s, j) + mdp.gamma * mdp.next_dist(s, j).dot(V));
      }
    const double diff = (next - V).cwiseAbs().maxCoeff();
    V = next;
    if (diff < tol) break;
  }
  return V;
}

// max |Q(s, j) - R(s, j) - gamma sum_s' P(s'|s, j) sum_j' pi(j'|s') Q(s', j')|
inline double bellman_residual(const envs::TabularDecMDP& mdp, const TabularPolicy& pi, const Matrix& Q) {
  const Matrix pj = joint_policy(mdp, pi);
  const Vector V = pj.cwiseProduct(Q).rowwise().sum();
  return (Q - q_from_v(mdp, V)).cwiseAbs().maxCoeff();
}

inline TabularPolicy softmax_policy(const std::vector<Matrix>& logits) {
  TabularPolicy pi;
  for (const auto& l : logits) {
    Matrix p(l.rows(), l.cols());
    for (Eigen::Index s = 0; s < l.rows(); ++s) {
      const RowVector e = (l.row(s).array() - l.row(s).maxCoeff()).exp().matrix();
      p.row(s) = e / e.sum();
    }
    pi.push_back(std::move(p));
  }
  return pi;
}

}  // namespace dop::analysis
