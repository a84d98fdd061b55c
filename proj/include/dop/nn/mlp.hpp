#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dop/core/errors.hpp"
#include "dop/core/rng.hpp"
#include "dop/nn/params.hpp"

namespace dop::nn {

enum class Activation { Identity, Absolute, Softmax, Tanh };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Absolute: return "absolute";
    case Activation::Softmax: return "softmax";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

// Column-wise softmax; each column of `logits` is one sample.
inline Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - m).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

// Cached activations from one forward pass, consumed by backward().
struct Tape {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activation of every layer
  std::vector<Matrix> post;  // post-activation of every layer
  bool valid = false;
};

struct Backward {
  Grad params;
  Matrix input;  // d(upstream . output) / d(input), same shape as the input batch
};

// Where backward() receives its upstream gradient.
enum class UpstreamAt { Output, PreActivation };

// Feed-forward network: ReLU hidden layers and a configurable output
// activation. Samples are columns. Parameters are laid out
// [W0, b0, W1, b1, ...] with W_l of shape (out x in) and b_l (out x 1).
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> widths, Activation output, Rng& rng) : widths_(std::move(widths)), output_(output) {
    if (widths_.size() < 2) throw ShapeError("Mlp needs at least input and output widths");
    for (int w : widths_)
      if (w < 1) throw ShapeError("Mlp layer widths must be positive");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Matrix w(out, in);
      Matrix b(out, 1);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uniform(rng, -bound, bound);
      for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, 0) = uniform(rng, -bound, bound);
      params_.push_back(std::move(w));
      params_.push_back(std::move(b));
    }
  }

  // Network with every weight and bias zero.
  static Mlp zeros(std::vector<int> widths, Activation output) {
    Rng rng(0);
    Mlp m(std::move(widths), output, rng);
    for (auto& t : m.params_.tensors()) t.setZero();
    return m;
  }

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  int n_layers() const { return static_cast<int>(widths_.size()) - 1; }
  const std::vector<int>& widths() const { return widths_; }
  Activation output_activation() const { return output_; }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  Matrix& weight(int l) { return params_[2 * l]; }
  Matrix& bias(int l) { return params_[2 * l + 1]; }
  const Matrix& weight(int l) const { return params_[2 * l]; }
  const Matrix& bias(int l) const { return params_[2 * l + 1]; }

  Matrix forward(const Matrix& x) const {
    check_input(x);
    Matrix h = x;
    for (int l = 0; l < n_layers(); ++l) {
      Matrix z = weight(l) * h;
      z.colwise() += bias(l).col(0);
      h = activate(z, l);
    }
    return h;
  }

  Matrix forward(const Matrix& x, Tape& tape) const {
    check_input(x);
    tape.input = x;
    tape.pre.assign(n_layers(), Matrix());
    tape.post.assign(n_layers(), Matrix());
    const Matrix* h = &tape.input;
    for (int l = 0; l < n_layers(); ++l) {
      tape.pre[l] = weight(l) * (*h);
      tape.pre[l].colwise() += bias(l).col(0);
      tape.post[l] = activate(tape.pre[l], l);
      h = &tape.post[l];
    }
    tape.valid = true;
    return tape.post.back();
  }

  Matrix forward(const Vector& x) const { return forward(Matrix(x)); }

  // Gradient of sum(upstream .* output) w.r.t. parameters and input.
  Backward backward(const Tape& tape, const Matrix& upstream, UpstreamAt at = UpstreamAt::Output) const {
    if (!tape.valid) throw StateError("Mlp::backward called without a cached forward pass");
    const Matrix& out = tape.post.back();
    if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
      throw ShapeError("Mlp::backward: upstream shape does not match output");

    Backward res;
    res.params = params_.zeros_like();
    const int L = n_layers();
    Matrix delta = (at == UpstreamAt::PreActivation) ? upstream : output_backward(tape, upstream);
    for (int l = L - 1; l >= 0; --l) {
      const Matrix& h_in = (l == 0) ? tape.input : tape.post[l - 1];
      res.params[2 * l].noalias() = delta * h_in.transpose();
      res.params[2 * l + 1] = delta.rowwise().sum();
      Matrix d_in = weight(l).transpose() * delta;
      if (l > 0) {
        d_in.array() *= (tape.pre[l - 1].array() > 0.0).cast<double>();
        delta = std::move(d_in);
      } else {
        res.input = std::move(d_in);
      }
    }
    return res;
  }

 private:
  void check_input(const Matrix& x) const {
    if (widths_.empty()) throw StateError("Mlp is uninitialised");
    if (x.rows() != input_dim())
      throw ShapeError("Mlp::forward: input width " + std::to_string(x.rows()) + " != " +
                       std::to_string(input_dim()));
  }

  Matrix activate(const Matrix& z, int layer) const {
    if (layer + 1 < n_layers()) return z.cwiseMax(0.0);
    switch (output_) {
      case Activation::Identity: return z;
      case Activation::Absolute: return z.cwiseAbs();
      case Activation::Softmax: return softmax_columns(z);
      case Activation::Tanh: return z.array().tanh().matrix();
    }
    return z;
  }

  Matrix output_backward(const Tape& tape, const Matrix& g) const {
    const Matrix& z = tape.pre.back();
    const Matrix& y = tape.post.back();
    switch (output_) {
      case Activation::Identity: return g;
      case Activation::Absolute:
        // Subgradient of |x| at 0 is 0.
        return (g.array() * z.array().sign()).matrix();
      case Activation::Softmax: {
        Matrix d(g.rows(), g.cols());
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
          const double dot = g.col(c).dot(y.col(c));
          d.col(c) = (y.col(c).array() * (g.col(c).array() - dot)).matrix();
        }
        return d;
      }
      case Activation::Tanh: return (g.array() * (1.0 - y.array().square())).matrix();
    }
    return g;
  }

  std::vector<int> widths_;
  Activation output_ = Activation::Identity;
  ParamSet params_;
};

}  // namespace dop::nn
