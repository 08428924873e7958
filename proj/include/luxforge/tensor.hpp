#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "luxforge/common.hpp"

namespace luxforge {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

// Integer class-id raster that rides alongside image tensors. Not
// differentiable, so it lives outside the autograd machinery.
struct LabelMap {
  int n = 0, h = 0, w = 0;
  std::vector<int32_t> values;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_)
      : n(n_), h(h_), w(w_), values(static_cast<size_t>(n_) * h_ * w_, 0) {}

  int64_t numel() const { return static_cast<int64_t>(n) * h * w; }
  int32_t& at(int i, int y, int x) {
    return values[(static_cast<size_t>(i) * h + y) * w + x];
  }
  int32_t at(int i, int y, int x) const {
    return values[(static_cast<size_t>(i) * h + y) * w + x];
  }
};

template <typename S>
struct TensorStorage {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;          // allocated on first use
  bool requires_grad = false;   // leaf marked as trainable
  bool needs_grad = false;      // requires_grad, or depends on such a tensor
  int node_id = -1;             // id assigned by the tape, -1 until recorded
};

// Reference-semantics n-d array. Copying a BasicTensor aliases its storage;
// use clone() for a deep copy. S is float in the production stack and double
// in the finite-difference/oracle configuration.
template <typename S>
class BasicTensor {
 public:
  using scalar_type = S;

  BasicTensor() : st_(std::make_shared<TensorStorage<S>>()) {}

  static BasicTensor zeros(Shape shape) {
    BasicTensor t;
    t.st_->shape = std::move(shape);
    t.st_->values.assign(static_cast<size_t>(shape_numel(t.st_->shape)), S(0));
    return t;
  }

  static BasicTensor full(Shape shape, S value) {
    BasicTensor t = zeros(std::move(shape));
    for (auto& v : t.st_->values) v = value;
    return t;
  }

  static BasicTensor scalar(S value) { return full({1}, value); }

  static BasicTensor from_values(Shape shape, std::vector<S> values) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      throw shape_error(cat("from_values: shape ", shape_str(shape), " wants ",
                            shape_numel(shape), " values, got ", values.size()));
    BasicTensor t;
    t.st_->shape = std::move(shape);
    t.st_->values = std::move(values);
    return t;
  }

  const Shape& shape() const { return st_->shape; }
  int rank() const { return static_cast<int>(st_->shape.size()); }
  int dim(int i) const { return st_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(st_->values.size()); }
  bool defined() const { return !st_->shape.empty(); }

  S* data() { return st_->values.data(); }
  const S* data() const { return st_->values.data(); }
  std::vector<S>& values() { return st_->values; }
  const std::vector<S>& values() const { return st_->values; }

  S item() const {
    if (numel() != 1)
      throw shape_error(cat("item: tensor has shape ", shape_str(shape())));
    return st_->values[0];
  }

  // Row-major multi-index accessor; mainly for tests and small fixtures.
  S& at(std::initializer_list<int> idx) {
    return st_->values[flat_index(idx)];
  }
  S at(std::initializer_list<int> idx) const {
    return st_->values[flat_index(idx)];
  }

  bool grad_allocated() const { return !st_->grad.empty(); }
  S* grad() {
    if (st_->grad.empty()) st_->grad.assign(st_->values.size(), S(0));
    return st_->grad.data();
  }
  const std::vector<S>& grad_values() const { return st_->grad; }
  void zero_grad() {
    if (!st_->grad.empty()) st_->grad.assign(st_->values.size(), S(0));
  }

  void set_requires_grad(bool v) {
    st_->requires_grad = v;
    st_->needs_grad = v;
  }
  bool requires_grad() const { return st_->requires_grad; }
  bool needs_grad() const { return st_->needs_grad; }

  BasicTensor clone() const {
    BasicTensor t;
    t.st_->shape = st_->shape;
    t.st_->values = st_->values;
    return t;
  }

  // Same storage object?
  bool same_storage(const BasicTensor& o) const { return st_ == o.st_; }

  std::shared_ptr<TensorStorage<S>>& storage() { return st_; }
  const std::shared_ptr<TensorStorage<S>>& storage() const { return st_; }

 private:
  size_t flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw shape_error(cat("index rank ", idx.size(), " vs tensor rank ",
                            rank(), " ", shape_str(shape())));
    size_t flat = 0;
    int axis = 0;
    for (int i : idx) {
      int extent = st_->shape[static_cast<size_t>(axis)];
      if (i < 0 || i >= extent)
        throw shape_error(cat("index ", i, " out of range for axis ", axis,
                              " of ", shape_str(shape())));
      flat = flat * static_cast<size_t>(extent) + static_cast<size_t>(i);
      ++axis;
    }
    return flat;
  }

  std::shared_ptr<TensorStorage<S>> st_;
};

// Flat define-by-run record of one forward pass. Rebuilt per training step;
// backward() replays the closures once, in reverse recording order.
template <typename S>
class BasicTape {
 public:
  struct Node {
    const char* name;
    std::vector<int> input_ids;
    int output_id;
    std::function<void()> backward;
  };

  int register_tensor(BasicTensor<S>& t) {
    auto& st = *t.storage();
    if (st.node_id < 0) st.node_id = next_id_++;
    return st.node_id;
  }

  void record(const char* name, std::vector<BasicTensor<S>*> inputs,
              BasicTensor<S>& output, std::function<void()> backward) {
    Node node;
    node.name = name;
    node.input_ids.reserve(inputs.size());
    for (auto* in : inputs) node.input_ids.push_back(register_tensor(*in));
    output.storage()->node_id = next_id_++;  // outputs always get a fresh id
    node.output_id = output.storage()->node_id;
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
  }

  void backward(BasicTensor<S>& loss) {
    if (loss.numel() != 1)
      throw shape_error(cat("backward: loss must be scalar, got ",
                            shape_str(loss.shape())));
    if (!loss.needs_grad())
      throw value_error(
          "backward: loss does not depend on any tensor that requires grad");
    loss.grad()[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }

  size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
  int next_id_ = 0;
};

// Per-forward-pass configuration handed to every op.
//   tape == nullptr        -> inference only, nothing is recorded
//   update_running_stats   -> batch-norm running-stat updates (disabled
//                             during finite-difference probing so repeated
//                             forwards are pure)
template <typename S>
struct Context {
  BasicTape<S>* tape = nullptr;
  bool update_running_stats = true;

  bool grad_enabled() const { return tape != nullptr; }
};

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;
using Ctx = Context<float>;

template <typename S>
bool all_finite(const BasicTensor<S>& t);

extern template bool all_finite<float>(const BasicTensor<float>&);
extern template bool all_finite<double>(const BasicTensor<double>&);

}  // namespace luxforge
