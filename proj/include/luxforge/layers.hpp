#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "luxforge/ops.hpp"
#include "luxforge/rng.hpp"

namespace luxforge {

// Walks a network's tensors in a fixed order. `trainable` distinguishes
// optimizable parameters from buffers (batch-norm running stats).
template <typename S>
using TensorVisitor =
    std::function<void(const std::string& name, BasicTensor<S>& t, bool trainable)>;

// Walks non-tensor persistent state (batch-norm batch counters).
using CounterVisitor = std::function<void(const std::string& name, int64_t& v)>;

// Kaiming-uniform fill for ReLU fan-in: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename S>
void kaiming_uniform_fill(BasicTensor<S>& t, int fan_in, Rng& rng) {
  double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : t.values()) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
void uniform_fill(BasicTensor<S>& t, double bound, Rng& rng) {
  for (auto& v : t.values()) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
struct Conv2dLayerT {
  BasicTensor<S> weight;  // (out, in, k, k)
  BasicTensor<S> bias;    // (out)
  int stride = 1;
  int padding = 0;

  Conv2dLayerT() = default;
  Conv2dLayerT(int in_ch, int out_ch, int kernel, int stride_, int padding_,
               Rng& rng, bool zero_init = false)
      : stride(stride_), padding(padding_) {
    weight = BasicTensor<S>::zeros({out_ch, in_ch, kernel, kernel});
    bias = BasicTensor<S>::zeros({out_ch});
    if (!zero_init) {
      int fan_in = in_ch * kernel * kernel;
      kaiming_uniform_fill(weight, fan_in, rng);
      uniform_fill(bias, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    }
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  BasicTensor<S> forward(Context<S>& ctx, BasicTensor<S> x) const {
    return conv2d(ctx, x, weight, bias, stride, padding);
  }

  void visit(const std::string& prefix, const TensorVisitor<S>& fn) {
    fn(prefix + ".weight", weight, true);
    fn(prefix + ".bias", bias, true);
  }
};

template <typename S>
struct ConvTranspose2dLayerT {
  BasicTensor<S> weight;  // (in, out, k, k)
  BasicTensor<S> bias;    // (out)
  int stride = 2;
  int padding = 0;

  ConvTranspose2dLayerT() = default;
  ConvTranspose2dLayerT(int in_ch, int out_ch, int kernel, int stride_, Rng& rng)
      : stride(stride_) {
    weight = BasicTensor<S>::zeros({in_ch, out_ch, kernel, kernel});
    bias = BasicTensor<S>::zeros({out_ch});
    int fan_in = in_ch * kernel * kernel;
    kaiming_uniform_fill(weight, fan_in, rng);
    uniform_fill(bias, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  BasicTensor<S> forward(Context<S>& ctx, BasicTensor<S> x) const {
    return conv_transpose2d(ctx, x, weight, bias, stride, padding);
  }

  void visit(const std::string& prefix, const TensorVisitor<S>& fn) {
    fn(prefix + ".weight", weight, true);
    fn(prefix + ".bias", bias, true);
  }
};

template <typename S>
struct BatchNorm2dLayerT {
  BasicTensor<S> gamma;
  BasicTensor<S> beta;
  BatchNormState<S> state;
  S eps = S(1e-5);
  S momentum = S(0.1);

  BatchNorm2dLayerT() = default;
  explicit BatchNorm2dLayerT(int channels) {
    gamma = BasicTensor<S>::full({channels}, S(1));
    beta = BasicTensor<S>::zeros({channels});
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
    state.running_mean = BasicTensor<S>::zeros({channels});
    state.running_var = BasicTensor<S>::full({channels}, S(1));
    state.batches_seen = 0;
  }

  BasicTensor<S> forward(Context<S>& ctx, BasicTensor<S> x, BnMode mode) {
    return batchnorm2d(ctx, x, gamma, beta, state, mode, eps, momentum);
  }

  bool stats_ready() const { return state.batches_seen > 0; }

  void visit(const std::string& prefix, const TensorVisitor<S>& fn) {
    fn(prefix + ".gamma", gamma, true);
    fn(prefix + ".beta", beta, true);
    fn(prefix + ".running_mean", state.running_mean, false);
    fn(prefix + ".running_var", state.running_var, false);
  }

  void visit_counters(const std::string& prefix, const CounterVisitor& fn) {
    fn(prefix + ".batches_seen", state.batches_seen);
  }
};

// Flips/sets requires_grad on every trainable tensor reached by visit().
template <typename S, typename Net>
void set_trainable(Net& net, bool trainable) {
  net.visit_tensors([&](const std::string&, BasicTensor<S>& t, bool is_param) {
    if (is_param) t.set_requires_grad(trainable);
  });
}

// Counts trainable parameters reached by visit().
template <typename S, typename Net>
int64_t count_trainable(Net& net) {
  int64_t n = 0;
  net.visit_tensors([&](const std::string&, BasicTensor<S>& t, bool is_param) {
    if (is_param) n += t.numel();
  });
  return n;
}

}  // namespace luxforge
