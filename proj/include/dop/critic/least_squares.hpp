#pragma once

#include <cmath>
#include <vector>

#include "dop/core/errors.hpp"
#include "dop/core/types.hpp"
#include "dop/envs/tabular.hpp"

namespace dop::critic {

struct LeastSquaresFit {
  std::vector<double> k;
  double b = 0.0;
  std::vector<Vector> q;  // q[i][a_i]
  double residual = 0.0;  // pi-weighted mean squared error
  int sweeps = 0;

  double q_tot(std::span<const int> joint) const {
    double v = b;
    for (std::size_t i = 0; i < q.size(); ++i) v += k[i] * q[i][joint[i]];
    return v;
  }
};

struct LeastSquaresOptions {
  int max_sweeps = 200;
  double tolerance = 1e-12;
};

// Minimises sum_a pi(a) (target(a) - sum_i k_i Q_i(a_i) - b)^2 over the
// local tables Q_i and the bias b with the mixing weights k held fixed, by
// exact coordinate minimisation (one agent's table at a time, then b).
// `targets` is indexed by flattened joint action (agent 0 outermost).
inline LeastSquaresFit fit_least_squares_tabular(const Vector& targets, const std::vector<Vector>& policies,
                                                 const std::vector<double>& k,
                                                 LeastSquaresOptions opt = {}) {
  const int n = static_cast<int>(policies.size());
  if (n < 1) throw InputError("least squares: no agents");
  if (static_cast<int>(k.size()) != n) throw ShapeError("least squares: one mixing weight per agent");
  const int A = static_cast<int>(policies[0].size());
  const long J = envs::joint_count(n, A);
  if (J > 100000) throw InputError("least squares: more than 1e5 joint actions");
  if (targets.size() != J) throw ShapeError("least squares: target table size != |A|^n");
  double ksum = 0.0;
  for (double ki : k) {
    if (ki < 0.0) throw InputError("least squares: mixing weights must be non-negative");
    ksum += ki;
  }
  if (!(ksum > 0.0)) throw InputError("least squares: mixing weights are all zero");
  for (const auto& p : policies) {
    if (p.size() != A) throw ShapeError("least squares: policies must share |A|");
    if ((p.array() < 0.0).any() || !(p.sum() > 0.0)) throw InputError("least squares: degenerate policy weights");
  }

  std::vector<JointDiscrete> joints(J);
  Vector weight(J);
  for (long j = 0; j < J; ++j) {
    joints[j] = envs::unflatten_joint(j, n, A);
    double w = 1.0;
    for (int i = 0; i < n; ++i) w *= policies[i][joints[j][i]];
    weight[j] = w;
  }
  if (!(weight.sum() > 0.0)) throw InputError("least squares: joint weights are all zero");

  LeastSquaresFit fit;
  fit.k = k;
  fit.q.assign(n, Vector::Zero(A));

  auto residual = [&] {
    double r = 0.0;
    for (long j = 0; j < J; ++j) {
      const double e = targets[j] - fit.q_tot(joints[j]);
      r += weight[j] * e * e;
    }
    return r / weight.sum();
  };

  double prev = residual();
  for (fit.sweeps = 1; fit.sweeps <= opt.max_sweeps; ++fit.sweeps) {
    for (int i = 0; i < n; ++i) {
      if (k[i] <= 0.0) continue;
      // Conditional expectation of the partial residual under pi_{-i}.
      Vector num = Vector::Zero(A), den = Vector::Zero(A);
      for (long j = 0; j < J; ++j) {
        double w_others = 1.0;
        for (int m = 0; m < n; ++m)
          if (m != i) w_others *= policies[m][joints[j][m]];
        const int ai = joints[j][i];
        const double partial = targets[j] - (fit.q_tot(joints[j]) - k[i] * fit.q[i][ai]);
        num[ai] += w_others * partial;
        den[ai] += w_others;
      }
      for (int a = 0; a < A; ++a)
        if (den[a] > 0.0) fit.q[i][a] = num[a] / (den[a] * k[i]);
    }
    double bnum = 0.0;
    for (long j = 0; j < J; ++j) bnum += weight[j] * (targets[j] - (fit.q_tot(joints[j]) - fit.b));
    fit.b = bnum / weight.sum();
    const double cur = residual();
    if (std::abs(prev - cur) < opt.tolerance) {
      fit.residual = cur;
      return fit;
    }
    prev = cur;
  }
  fit.sweeps = opt.max_sweeps;
  fit.residual = prev;
  return fit;
}

}  // namespace dop::critic
