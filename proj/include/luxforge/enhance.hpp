#pragma once

#include <vector>

#include "luxforge/pam.hpp"

namespace luxforge {

// GEM + PAM bundle with ablation switches. A disabled module is bypassed
// entirely (its parameters exist but see no data and no gradients).
template <typename S>
struct EnhancerT {
  GemNetworkT<S> gem;
  PamNetworkT<S> pam;
  bool gem_enabled = true;
  bool pam_enabled = true;

  EnhancerT() = default;
  explicit EnhancerT(uint64_t seed, bool gem_on = true, bool pam_on = true)
      : gem(seed), pam(seed), gem_enabled(gem_on), pam_enabled(pam_on) {}

  void visit_tensors(const TensorVisitor<S>& fn) {
    gem.visit_tensors(fn);
    pam.visit_tensors(fn);
  }

  // Tensors that should actually be optimized given the ablation switches.
  void visit_active_params(const TensorVisitor<S>& fn) {
    if (gem_enabled) gem.visit_tensors(fn);
    if (pam_enabled) pam.visit_tensors(fn);
  }

  void visit_counters(const CounterVisitor& fn) { pam.visit_counters(fn); }

  bool bn_stats_ready() const { return !pam_enabled || pam.stats_ready(); }
};

using Enhancer = EnhancerT<float>;

template <typename S>
struct EnhanceResultT {
  BasicTensor<S> output;  // clamp01(I_global + f_local), shape of input
  std::vector<CorrectionCoefficientsT<S>> coefficients;  // per image
  double f_local_rms = 0.0;   // detached diagnostic
  double f_local_max = 0.0;   // max |f| over the batch
};

// Full pipeline: thumbnail -> gains -> global rescale -> padded UNet ->
// additive map -> clamped sum. Exact identity for a fresh enhancer.
template <typename S>
EnhanceResultT<S> enhance(Context<S>& ctx, EnhancerT<S>& e,
                          BasicTensor<S> input, BnMode mode);

}  // namespace luxforge
