#pragma once

#include <cmath>
#include <sstream>

#include "dop/nn/params.hpp"

namespace dop::nn {

struct RmsPropConfig {
  double lr = 5e-4;
  double alpha = 0.99;
  double eps = 1e-8;
};

// RMSProp without momentum or weight decay:
//   v <- alpha v + (1 - alpha) g^2,   p <- p - lr g / (sqrt(v) + eps)
class RmsProp {
 public:
  RmsProp() = default;
  explicit RmsProp(RmsPropConfig cfg) : cfg_(cfg) {}

  const RmsPropConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const ParamSet& square_avg() const { return v_; }

  // Descent step. Pass the negated gradient to ascend.
  template <typename Params>
  void step(Params& params, const Grad& grad) {
    if (grad.size() != params.size()) throw ShapeError("RmsProp::step: tensor count mismatch");
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (grad[i].rows() != params[i].rows() || grad[i].cols() != params[i].cols())
        throw ShapeError("RmsProp::step: tensor shape mismatch");
      if (!grad[i].allFinite()) {
        std::ostringstream os;
        os << "RmsProp::step: non-finite gradient in tensor " << i << " (" << grad[i].rows() << "x"
           << grad[i].cols() << ")";
        throw TrainingError(os.str());
      }
    }
    if (v_.size() == 0) {
      for (std::size_t i = 0; i < grad.size(); ++i) v_.push_back(Matrix::Zero(grad[i].rows(), grad[i].cols()));
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
      v_[i].array() = cfg_.alpha * v_[i].array() + (1.0 - cfg_.alpha) * grad[i].array().square();
      params[i].array() -= cfg_.lr * grad[i].array() / (v_[i].array().sqrt() + cfg_.eps);
    }
  }

 private:
  RmsPropConfig cfg_;
  ParamSet v_;
};

// target <- alpha * online + (1 - alpha) * target
template <typename Target, typename Online>
void soft_update(Target& target, const Online& online, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("soft_update: alpha must lie in (0, 1]");
  if (target.size() != online.size()) throw ShapeError("soft_update: tensor count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].rows() != online[i].rows() || target[i].cols() != online[i].cols())
      throw ShapeError("soft_update: tensor shape mismatch");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (alpha == 1.0)
      target[i] = online[i];
    else
      target[i] = alpha * online[i] + (1.0 - alpha) * target[i];
  }
}

}  // namespace dop::nn
