#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "dop/analysis/oracles.hpp"
#include "dop/analysis/policy_value.hpp"
#include "dop/core/rng.hpp"
#include "dop/critic/least_squares.hpp"

namespace dop::analysis {

inline constexpr double kTieTolerance = 1e-9;

struct BiasReport {
  double mean_abs_error = 0.0;
  long count = 0;
};

// Uniform mean of |estimate - truth| over all joint actions.
inline BiasReport bias_report(const Vector& estimate, const Vector& truth) {
  if (estimate.size() != truth.size()) throw ShapeError("bias_report: table sizes differ");
  if (truth.size() == 0) throw InputError("bias_report: empty table");
  return {(estimate - truth).cwiseAbs().mean(), static_cast<long>(truth.size())};
}

// Pairs (i, a, a') where the fitted order disagrees with the true order;
// pairs tied within tol on either side are skipped.
inline long order_preservation_check(const std::vector<Vector>& fitted, const std::vector<Vector>& truth,
                                     double tol = kTieTolerance) {
  if (fitted.size() != truth.size()) throw ShapeError("order check: agent count differs");
  long bad = 0;
  for (std::size_t i = 0; i < fitted.size(); ++i) {
    if (fitted[i].size() != truth[i].size()) throw ShapeError("order check: action count differs");
    for (Eigen::Index a = 0; a < truth[i].size(); ++a)
      for (Eigen::Index b = a + 1; b < truth[i].size(); ++b) {
        const double dt = truth[i][a] - truth[i][b], df = fitted[i][a] - fitted[i][b];
        if (std::abs(dt) <= tol || std::abs(df) <= tol) continue;
        if ((dt > 0) != (df > 0)) ++bad;
      }
  }
  return bad;
}

inline TabularPolicy random_softmax_policy(Rng& rng, int n_states, int n_agents, int n_actions, double scale = 1.0) {
  std::vector<Matrix> logits;
  for (int i = 0; i < n_agents; ++i) {
    Matrix l(n_states, n_actions);
    for (Eigen::Index k = 0; k < l.size(); ++k) l.data()[k] = normal(rng, 0.0, scale);
    logits.push_back(l);
  }
  return softmax_policy(logits);
}

inline std::vector<Vector> policy_at(const TabularPolicy& pi, int s) {
  std::vector<Vector> out;
  for (const auto& p : pi) out.push_back(p.row(s).transpose());
  return out;
}

struct Fact1Report {
  int instances = 0;
  long pairs = 0;
  long violations = 0;
  double max_residual = 0.0;
};

// Random tabular instances, random softmax policies and random positive
// mixing weights: fit the decomposed tables to Q_tot^pi in every state and
// compare local orderings with Q_i^pi.
inline Fact1Report fact1_sweep(std::uint64_t seed, int instances = 100) {
  Fact1Report rep;
  Rng rng(seed);
  for (int m = 0; m < instances; ++m) {
    const int S = 1 + static_cast<int>(uniform_index(rng, 4));
    const int n = 2 + static_cast<int>(uniform_index(rng, 2));
    const int A = 2 + static_cast<int>(uniform_index(rng, 2));
    const auto mdp = envs::random_tabular(rng(), S, n, A);
    const auto pi = random_softmax_policy(rng, S, n, A);
    const auto val = exact_policy_value(mdp, pi);
    for (int s = 0; s < S; ++s) {
      std::vector<double> k;
      for (int i = 0; i < n; ++i) k.push_back(uniform(rng, 0.1, 1.0));
      const Vector target = val.Q.row(s).transpose();
      const auto p = policy_at(pi, s);
      const auto fit = critic::fit_least_squares_tabular(target, p, k);
      const auto truth = brute_force_local_values(
          [&](const JointDiscrete& a) { return target[envs::flatten_joint(a, A)]; }, p);
      rep.violations += order_preservation_check(fit.q, truth);
      rep.pairs += static_cast<long>(n) * A * (A - 1) / 2;
      rep.max_residual = std::max(rep.max_residual, fit.residual);
    }
    ++rep.instances;
  }
  return rep;
}

struct Prop1Report {
  int instances = 0;
  int precondition_violations = 0;  // Monotone condition failed; not counted below
  int checked = 0;
  int improvement_failures = 0;
  double min_improvement = 0.0;  // over checked instances, J_new - J_old
};

// Whether Q(a) > Q(a') implies beta(a) >= beta(a') for every agent and
// state, Q ties within kTieTolerance ignored and beta compared with tol.
inline bool monotone_condition(const std::vector<std::vector<Vector>>& q, const std::vector<std::vector<Vector>>& beta,
                               double tol) {
  for (std::size_t s = 0; s < q.size(); ++s)
    for (std::size_t i = 0; i < q[s].size(); ++i)
      for (Eigen::Index a = 0; a < q[s][i].size(); ++a)
        for (Eigen::Index b = 0; b < q[s][i].size(); ++b)
          if (q[s][i][a] - q[s][i][b] > kTieTolerance && beta[s][i][a] < beta[s][i][b] - tol) return false;
  return true;
}

// One exact decomposed actor step on tabular softmax policies after the
// critic tables were fitted to Q_tot^pi:
//   logit_i(s, a) += delta d(s) k_i(s) pi_i(a|s) (Q_i(s, a) - sum_x pi_i(x|s) Q_i(s, x))
// then J(pi_new) is compared with J(pi_old) by exact evaluation.
inline Prop1Report prop1_sweep(std::uint64_t seed, int instances = 50, double delta = 1e-4) {
  Prop1Report rep;
  rep.min_improvement = 1e300;
  Rng rng(seed);
  for (int m = 0; m < instances; ++m) {
    const int S = 1 + static_cast<int>(uniform_index(rng, 4));
    const int n = 2;
    const int A = 2 + static_cast<int>(uniform_index(rng, 2));
    const auto mdp = envs::random_tabular(rng(), S, n, A);
    std::vector<Matrix> logits;
    for (int i = 0; i < n; ++i) {
      Matrix l(S, A);
      for (Eigen::Index k = 0; k < l.size(); ++k) l.data()[k] = normal(rng);
      logits.push_back(l);
    }
    const auto pi = softmax_policy(logits);
    const auto val = exact_policy_value(mdp, pi);

    std::vector<std::vector<Vector>> qfit(S);
    std::vector<Matrix> next = logits;
    for (int s = 0; s < S; ++s) {
      std::vector<double> k;
      for (int i = 0; i < n; ++i) k.push_back(uniform(rng, 0.1, 1.0));
      const auto p = policy_at(pi, s);
      const auto fit = critic::fit_least_squares_tabular(val.Q.row(s).transpose(), p, k);
      qfit[s] = fit.q;
      for (int i = 0; i < n; ++i) {
        const double base = p[i].dot(fit.q[i]);
        for (int a = 0; a < A; ++a)
          next[i](s, a) += delta * val.occupancy[s] * k[i] * p[i][a] * (fit.q[i][a] - base);
      }
    }
    const auto pi_new = softmax_policy(next);
    std::vector<std::vector<Vector>> beta(S);
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < n; ++i) beta[s].push_back((pi_new[i].row(s) - pi[i].row(s)).transpose() / delta);

    ++rep.instances;
    if (!monotone_condition(qfit, beta, 1e-7)) {
      ++rep.precondition_violations;
      continue;
    }
    ++rep.checked;
    const double gain = exact_policy_value(mdp, pi_new).J - val.J;
    rep.min_improvement = std::min(rep.min_improvement, gain);
    if (gain < -1e-9) ++rep.improvement_failures;
  }
  if (rep.checked == 0) rep.min_improvement = 0.0;
  return rep;
}

struct Fact2Report {
  std::vector<double> deltas;
  std::vector<double> max_errors;
  std::vector<double> ratios;  // error(delta) / error(delta / 2)
};

// A smooth, non-decomposable quadratic
//   Q(a) = c + g . a + 1/2 a' H a
// with dense H is fitted on delta-balls around fixed joint actions by
// k_i q_i(a_i) + b, where each q_i is quadratic in its own action
// (features 1, x, x^2 per action dimension, k_i > 0 fixed). The same unit
// sample set is scaled by delta for every radius, so the max fit error
// tracks the dropped cross terms, which are O(delta^2).
inline Fact2Report fact2_scaling(std::uint64_t seed, const std::vector<double>& deltas = {0.2, 0.1, 0.05},
                                 int n_agents = 3, int action_dim = 2, int centers = 5, int samples = 400) {
  Rng rng(seed);
  const int D = n_agents * action_dim;
  Matrix H(D, D);
  for (Eigen::Index k = 0; k < H.size(); ++k) H.data()[k] = normal(rng);
  H = (H + H.transpose()).eval() / 2.0;
  Vector g(D);
  for (int d = 0; d < D; ++d) g[d] = normal(rng);
  const double c = normal(rng);
  auto q = [&](const Vector& a) { return c + g.dot(a) + 0.5 * a.dot(H * a); };

  std::vector<Vector> unit;
  for (int m = 0; m < samples; ++m) {
    Vector u(D);
    for (int d = 0; d < D; ++d) u[d] = normal(rng);
    const double r = std::pow(uniform01(rng), 1.0 / D);
    unit.push_back(u / u.norm() * r);
  }
  std::vector<Vector> centre;
  for (int m = 0; m < centers; ++m) {
    Vector a(D);
    for (int d = 0; d < D; ++d) a[d] = uniform(rng, -1.0, 1.0);
    centre.push_back(a);
  }
  std::vector<double> k;
  for (int i = 0; i < n_agents; ++i) k.push_back(uniform(rng, 0.1, 1.0));

  Fact2Report rep;
  for (double delta : deltas) {
    double worst = 0.0;
    for (const auto& a0 : centre) {
      // Columns: bias, then per agent and dimension (k_i x, k_i x^2).
      const int F = 1 + 2 * D;
      Matrix X(samples, F);
      Vector y(samples);
      for (int m = 0; m < samples; ++m) {
        const Vector x = delta * unit[m];
        X(m, 0) = 1.0;
        for (int i = 0; i < n_agents; ++i)
          for (int d = 0; d < action_dim; ++d) {
            const int col = i * action_dim + d;
            X(m, 1 + 2 * col) = k[i] * x[col];
            X(m, 2 + 2 * col) = k[i] * x[col] * x[col];
          }
        y[m] = q(a0 + x);
      }
      const Vector w = X.colPivHouseholderQr().solve(y);
      worst = std::max(worst, (X * w - y).cwiseAbs().maxCoeff());
    }
    rep.deltas.push_back(delta);
    rep.max_errors.push_back(worst);
  }
  for (std::size_t d = 1; d < rep.max_errors.size(); ++d) rep.ratios.push_back(rep.max_errors[d - 1] / rep.max_errors[d]);
  return rep;
}

}  // namespace dop::analysis
