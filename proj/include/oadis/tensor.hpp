#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "oadis/errors.hpp"

namespace oadis {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename S>
struct TensorNodeT {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // allocated lazily, only when requires_grad
  bool requires_grad = false;
};

// Shared-value tensor handle. Values are written once by the producing op;
// gradients accumulate during backward replay.
template <typename S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT zeros(Shape shape) {
    TensorT t;
    t.n_ = std::make_shared<TensorNodeT<S>>();
    t.n_->shape = std::move(shape);
    t.n_->values.assign(shape_numel(t.n_->shape), S(0));
    return t;
  }

  static TensorT full(Shape shape, S value) {
    TensorT t = zeros(std::move(shape));
    for (S& v : t.n_->values) v = value;
    return t;
  }

  static TensorT from_data(Shape shape, std::vector<S> data) {
    if (shape_numel(shape) != data.size()) {
      throw ContractError("tensor: data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    }
    TensorT t;
    t.n_ = std::make_shared<TensorNodeT<S>>();
    t.n_->shape = std::move(shape);
    t.n_->values = std::move(data);
    return t;
  }

  static TensorT scalar(S value) { return from_data({1}, {value}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t numel() const { return n_->values.size(); }
  std::size_t rows() const { return n_->shape[0]; }
  std::size_t cols() const { return n_->shape.size() > 1 ? n_->shape[1] : 1; }

  std::vector<S>& values() { return n_->values; }
  const std::vector<S>& values() const { return n_->values; }
  S* data() { return n_->values.data(); }
  const S* data() const { return n_->values.data(); }

  S& at(std::size_t i) { return n_->values[i]; }
  S at(std::size_t i) const { return n_->values[i]; }
  S& at(std::size_t i, std::size_t j) { return n_->values[i * cols() + j]; }
  S at(std::size_t i, std::size_t j) const { return n_->values[i * cols() + j]; }

  bool requires_grad() const { return n_ && n_->requires_grad; }

  void set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    if (rg && n_->grad.size() != n_->values.size()) {
      n_->grad.assign(n_->values.size(), S(0));
    }
  }

  // Gradient buffer; allocates (zero-filled) on first access.
  std::vector<S>& grad() {
    if (n_->grad.size() != n_->values.size()) {
      n_->grad.assign(n_->values.size(), S(0));
    }
    return n_->grad;
  }

  const std::vector<S>& grad() const { return n_->grad; }

  void zero_grad() {
    if (!n_->grad.empty()) n_->grad.assign(n_->values.size(), S(0));
  }

  bool same_node(const TensorT& other) const { return n_ == other.n_; }

 private:
  std::shared_ptr<TensorNodeT<S>> n_;
};

// Reverse-mode tape. Ops append their backward closures in execution order;
// backward() replays them in reverse. Records are kept only while recording
// is enabled, so inference paths pay nothing.
template <typename S>
class TapeT {
 public:
  explicit TapeT(bool enabled = true) : enabled_(enabled) {}

  bool recording() const { return enabled_; }
  void set_recording(bool on) { enabled_ = on; }

  void push(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape. The loss must be scalar.
  void backward(TensorT<S> loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward: loss must be a scalar tensor");
    }
    loss.set_requires_grad(true);
    loss.grad()[0] = S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
  bool enabled_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace oadis
