#pragma once

#include <functional>
#include <vector>

#include "dop/core/errors.hpp"
#include "dop/core/rng.hpp"
#include "dop/core/types.hpp"

namespace dop::analysis {

// Trace of the unbiased sample covariance. Samples are shifted by the first
// one before accumulating, so identical samples give exactly zero.
inline double trace_covariance(const std::vector<Vector>& samples) {
  const std::size_t m = samples.size();
  if (m < 2) throw InputError("variance needs at least 2 samples");
  const Vector& ref = samples.front();
  Vector sum = Vector::Zero(ref.size()), sq = Vector::Zero(ref.size());
  for (const auto& x : samples) {
    if (x.size() != ref.size()) throw ShapeError("variance: sample dimension mismatch");
    const Vector d = x - ref;
    sum += d;
    sq += d.cwiseProduct(d);
  }
  const double dm = static_cast<double>(m);
  return ((sq - sum.cwiseProduct(sum) / dm) / (dm - 1.0)).sum();
}

struct GradientVarianceReport {
  std::vector<double> per_agent;  // pi_i-weighted mean over own actions
  std::vector<std::vector<double>> per_action;
  int samples = 0;
  long step = 0;

  double mean() const {
    double s = 0.0;
    for (double v : per_agent) s += v;
    return per_agent.empty() ? 0.0 : s / per_agent.size();
  }
  bool reportable() const { return samples >= 30; }
};

// Per-sample gradient of agent `agent` with its own action fixed to
// `own_action`; the callee draws the other agents' actions from `rng`.
using GradientSampler = std::function<Vector(int agent, int own_action, Rng& rng)>;

// For every agent i and own action a_i: trace of the covariance of the
// per-sample gradient over a_{-i} ~ pi_{-i}; aggregated over a_i with
// weights pi_i(a_i).
inline GradientVarianceReport gradient_variance(const std::vector<Vector>& policies, const GradientSampler& sampler,
                                                int n_samples, Rng& rng) {
  if (n_samples < 2) throw InputError("gradient_variance: n_samples must be >= 2");
  GradientVarianceReport r;
  r.samples = n_samples;
  for (int i = 0; i < static_cast<int>(policies.size()); ++i) {
    double agg = 0.0;
    std::vector<double> by_action;
    for (int a = 0; a < policies[i].size(); ++a) {
      std::vector<Vector> xs;
      xs.reserve(n_samples);
      for (int m = 0; m < n_samples; ++m) xs.push_back(sampler(i, a, rng));
      const double v = trace_covariance(xs);
      by_action.push_back(v);
      agg += policies[i][a] * v;
    }
    r.per_agent.push_back(agg);
    r.per_action.push_back(std::move(by_action));
  }
  return r;
}

}  // namespace dop::analysis
