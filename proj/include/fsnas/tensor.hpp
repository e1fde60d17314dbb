#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "fsnas/error.hpp"

namespace fsnas {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

template <typename S>
struct TensorData {
  std::vector<int> shape;
  std::vector<S> values;
  // Persistent gradient, allocated on demand for leaves that require it.
  std::vector<S> grad;
  bool requires_grad = false;
  // Set while this tensor is the output of an op recorded on a live tape.
  bool on_tape = false;
  // Scratch adjoint used during a single backward replay.
  std::vector<S> adj;
  std::uint64_t adj_epoch = 0;
  std::uint64_t touch_epoch = 0;
};

// Dense row-major tensor handle with shared storage. Copies are shallow
// (PyTorch-style); use clone() for an independent buffer.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() : d_(nullptr) {}

  explicit Tensor(std::vector<int> shape)
      : d_(std::make_shared<TensorData<S>>()) {
    d_->shape = std::move(shape);
    for (int dim : d_->shape)
      check(dim > 0, ErrorCode::Dimension,
            "tensor dim must be positive, got shape " + shape_str(d_->shape));
    d_->values.assign(static_cast<std::size_t>(shape_numel(d_->shape)), S(0));
  }

  Tensor(std::vector<int> shape, std::vector<S> values)
      : d_(std::make_shared<TensorData<S>>()) {
    d_->shape = std::move(shape);
    check(static_cast<std::int64_t>(values.size()) == shape_numel(d_->shape),
          ErrorCode::Dimension, "value count does not match shape " +
                                    shape_str(d_->shape));
    d_->values = std::move(values);
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  bool defined() const { return d_ != nullptr; }
  const std::vector<int>& shape() const { return d_->shape; }
  int dim(int i) const { return d_->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(d_->values.size()); }

  S* data() { return d_->values.data(); }
  const S* data() const { return d_->values.data(); }
  std::vector<S>& values() { return d_->values; }
  const std::vector<S>& values() const { return d_->values; }
  S item() const {
    check(numel() == 1, ErrorCode::Usage, "item() requires a scalar tensor");
    return d_->values[0];
  }

  S& at(std::size_t i) { return d_->values[i]; }
  S at(std::size_t i) const { return d_->values[i]; }

  void set_requires_grad(bool b) { d_->requires_grad = b; }
  bool requires_grad() const { return d_->requires_grad; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<S>& grad() {
    ensure_grad();
    return d_->grad;
  }
  const std::vector<S>& grad() const { return d_->grad; }
  void ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), S(0));
  }
  void zero_grad() {
    if (!d_->grad.empty()) d_->grad.assign(d_->values.size(), S(0));
  }

  // Deep copy of values; grad/tape state not carried over.
  Tensor clone() const {
    Tensor t(d_->shape, d_->values);
    return t;
  }

  // Same values, detached from any recorded graph.
  Tensor detach() const { return clone(); }

  TensorData<S>* impl() const { return d_.get(); }
  const std::shared_ptr<TensorData<S>>& handle() const { return d_; }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  std::shared_ptr<TensorData<S>> d_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace fsnas
