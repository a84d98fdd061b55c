#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dop/nn/mlp.hpp"

namespace dop::nn {

inline constexpr double kFiniteDifferenceStep = 1e-5;

// |a - b| / max(|a|, |b|, floor). The floor keeps parameters whose true
// gradient is ~0 from dominating through finite-difference noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using BackwardFn = std::function<Grad(const Mlp&, const Matrix& input, const Matrix& upstream)>;

inline Grad reference_backward(const Mlp& net, const Matrix& input, const Matrix& upstream) {
  Tape tape;
  net.forward(input, tape);
  return net.backward(tape, upstream).params;
}

// Central-difference check of d(sum(upstream .* net(input)))/d(params)
// against `backward`. Returns the max relative error over all parameters.
inline double grad_check(const Mlp& net, const Matrix& input, const Matrix& upstream,
                         const BackwardFn& backward = reference_backward,
                         double h = kFiniteDifferenceStep) {
  const Grad analytic = backward(net, input, upstream);
  Mlp probe = net;
  double worst = 0.0;
  for (std::size_t t = 0; t < probe.params().size(); ++t) {
    Matrix& p = probe.params()[t];
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double orig = p.data()[k];
      p.data()[k] = orig + h;
      const double up = (upstream.array() * probe.forward(input).array()).sum();
      p.data()[k] = orig - h;
      const double down = (upstream.array() * probe.forward(input).array()).sum();
      p.data()[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[t].data()[k], numeric));
    }
  }
  return worst;
}

// Same check with a seeded random upstream so softmax heads get a
// non-degenerate objective.
inline double grad_check(const Mlp& net, const Matrix& input, std::uint64_t seed = 0) {
  Rng rng(seed);
  Matrix upstream(net.output_dim(), input.cols());
  for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream.data()[i] = uniform(rng, -1.0, 1.0);
  return grad_check(net, input, upstream);
}

// Central-difference check of the input gradient.
inline double input_grad_check(const Mlp& net, const Matrix& input, const Matrix& upstream,
                               double h = kFiniteDifferenceStep) {
  Tape tape;
  net.forward(input, tape);
  const Matrix analytic = net.backward(tape, upstream).input;
  Matrix x = input;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double orig = x.data()[k];
    x.data()[k] = orig + h;
    const double up = (upstream.array() * net.forward(x).array()).sum();
    x.data()[k] = orig - h;
    const double down = (upstream.array() * net.forward(x).array()).sum();
    x.data()[k] = orig;
    worst = std::max(worst, relative_error(analytic.data()[k], (up - down) / (2.0 * h)));
  }
  return worst;
}

}  // namespace dop::nn
