#pragma once

#include <array>
#include <vector>

#include "luxforge/layers.hpp"

namespace luxforge {

// One positive global rescaling factor per color channel.
template <typename S>
struct CorrectionCoefficientsT {
  S r = S(1), g = S(1), b = S(1);
};
using CorrectionCoefficients = CorrectionCoefficientsT<float>;

// Global enhancement module: six 3x3 convs over the 32x32 thumbnail, global
// average pooling to three values, bounded exponential to positive gains.
// The final conv is zero-initialized so a fresh network is the identity
// (all gains exactly 1).
template <typename S>
class GemNetworkT {
 public:
  static constexpr int kInputSize = 32;

  GemNetworkT() = default;
  explicit GemNetworkT(uint64_t seed);

  // i_lr must be (N,3,32,32); returns gain tensor (N,3,1,1) in [1/64, 64].
  BasicTensor<S> predict(Context<S>& ctx, BasicTensor<S> i_lr);

  void visit_tensors(const TensorVisitor<S>& fn);
  void visit_counters(const CounterVisitor&) {}  // no batch norm

  S log_bound() const { return log_bound_; }

 private:
  std::array<Conv2dLayerT<S>, 6> convs_;
  S log_bound_ = S(0);
};

using GemNetwork = GemNetworkT<float>;

// 32x32 bilinear thumbnail of an (N,3,H,W) batch.
template <typename S>
BasicTensor<S> gem_downsample(Context<S>& ctx, BasicTensor<S> input);

template <typename S>
BasicTensor<S> gem_predict(Context<S>& ctx, GemNetworkT<S>& net,
                           BasicTensor<S> i_lr);

// Per-channel multiplicative rescale: input (N,3,H,W) * gains (N,3,1,1).
// Output is intentionally unclamped.
template <typename S>
BasicTensor<S> gem_apply(Context<S>& ctx, BasicTensor<S> input,
                         BasicTensor<S> gains);

// Reads a detached copy of the per-image gain triples for diagnostics.
template <typename S>
std::vector<CorrectionCoefficientsT<S>> extract_coefficients(
    const BasicTensor<S>& gains);

}  // namespace luxforge
