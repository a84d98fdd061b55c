#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dop/core/errors.hpp"
#include "dop/core/types.hpp"

namespace dop::nn {

// An ordered list of real tensors. Used both for network parameters and
// for gradients that mirror them.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Matrix> t) : tensors_(std::move(t)) {}

  std::size_t size() const { return tensors_.size(); }
  Matrix& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix& operator[](std::size_t i) const { return tensors_[i]; }
  std::vector<Matrix>& tensors() { return tensors_; }
  const std::vector<Matrix>& tensors() const { return tensors_; }

  void push_back(Matrix m) { tensors_.push_back(std::move(m)); }
  void append(const ParamSet& other) {
    tensors_.insert(tensors_.end(), other.tensors_.begin(), other.tensors_.end());
  }

  ParamSet zeros_like() const {
    ParamSet z;
    for (const auto& t : tensors_) z.tensors_.push_back(Matrix::Zero(t.rows(), t.cols()));
    return z;
  }

  bool same_shape(const ParamSet& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (o[i].rows() != tensors_[i].rows() || o[i].cols() != tensors_[i].cols()) return false;
    return true;
  }

  void require_same_shape(const ParamSet& o, const char* what) const {
    if (!same_shape(o)) throw ShapeError(std::string(what) + ": parameter shapes differ");
  }

  ParamSet& operator+=(const ParamSet& o) {
    require_same_shape(o, "ParamSet +=");
    for (std::size_t i = 0; i < size(); ++i) tensors_[i] += o[i];
    return *this;
  }
  ParamSet& operator*=(double s) {
    for (auto& t : tensors_) t *= s;
    return *this;
  }
  friend ParamSet operator+(ParamSet a, const ParamSet& b) { return a += b; }
  friend ParamSet operator*(ParamSet a, double s) { return a *= s; }
  friend ParamSet operator*(double s, ParamSet a) { return a *= s; }

  long numel() const {
    long n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  Vector flatten() const {
    Vector v(numel());
    long off = 0;
    for (const auto& t : tensors_) {
      v.segment(off, t.size()) = Eigen::Map<const Vector>(t.data(), t.size());
      off += t.size();
    }
    return v;
  }

  void assign_flat(const Vector& v) {
    if (v.size() != numel()) throw ShapeError("ParamSet::assign_flat: size mismatch");
    long off = 0;
    for (auto& t : tensors_) {
      Eigen::Map<Vector>(t.data(), t.size()) = v.segment(off, t.size());
      off += t.size();
    }
  }

  bool all_finite() const {
    for (const auto& t : tensors_)
      if (!t.allFinite()) return false;
    return true;
  }

 private:
  std::vector<Matrix> tensors_;
};

using Grad = ParamSet;

// Non-owning view over the parameters of one or more networks, so a
// composite model can be optimised as a single parameter list.
class ParamRefs {
 public:
  void add(ParamSet& p) {
    for (auto& t : p.tensors()) refs_.push_back(&t);
  }
  std::size_t size() const { return refs_.size(); }
  Matrix& operator[](std::size_t i) { return *refs_[i]; }
  const Matrix& operator[](std::size_t i) const { return *refs_[i]; }

  ParamSet snapshot() const {
    ParamSet s;
    for (const auto* r : refs_) s.push_back(*r);
    return s;
  }
  void assign(const ParamSet& values) {
    if (values.size() != refs_.size()) throw ShapeError("ParamRefs::assign: tensor count mismatch");
    for (std::size_t i = 0; i < refs_.size(); ++i) {
      if (values[i].rows() != refs_[i]->rows() || values[i].cols() != refs_[i]->cols())
        throw ShapeError("ParamRefs::assign: tensor shape mismatch");
      *refs_[i] = values[i];
    }
  }

 private:
  std::vector<Matrix*> refs_;
};

}  // namespace dop::nn
