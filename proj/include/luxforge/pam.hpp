#pragma once

#include <array>

#include "luxforge/gem.hpp"
#include "luxforge/layers.hpp"

namespace luxforge {

// Pixelwise adjustment module: four-stage UNet predicting an additive,
// unbounded correction map at input resolution. The 1x1 head is
// zero-initialized so a fresh network outputs an all-zeros map.
template <typename S>
class PamNetworkT {
 public:
  static constexpr int kSizeMultiple = 16;  // four stride-2 stages

  struct EncoderBlock {
    Conv2dLayerT<S> conv_a;  // 3x3 s1, produces the skip features
    Conv2dLayerT<S> conv_b;  // 3x3 s2, halves resolution
    BatchNorm2dLayerT<S> bn;
  };
  struct DecoderBlock {
    ConvTranspose2dLayerT<S> up;  // 2x2 s2
    Conv2dLayerT<S> conv;         // 3x3 s1 after skip concat
    BatchNorm2dLayerT<S> bn;
  };

  PamNetworkT() = default;
  explicit PamNetworkT(uint64_t seed);

  // x must be (N,3,H,W) with H,W divisible by 16; returns (N,3,H,W).
  BasicTensor<S> forward(Context<S>& ctx, BasicTensor<S> x, BnMode mode);

  // Skip features of the first encoder conv; exposed for the translation
  // covariance check, which needs a small receptive field.
  BasicTensor<S> encoder_head_features(Context<S>& ctx, BasicTensor<S> x);

  void visit_tensors(const TensorVisitor<S>& fn);
  void visit_counters(const CounterVisitor& fn);
  bool stats_ready() const;

 private:
  std::array<EncoderBlock, 4> enc_;
  std::array<DecoderBlock, 4> dec_;
  Conv2dLayerT<S> head_;
};

using PamNetwork = PamNetworkT<float>;

template <typename S>
BasicTensor<S> pam_predict(Context<S>& ctx, PamNetworkT<S>& net,
                           BasicTensor<S> i_global, BnMode mode);

// Final composition: clamp01(i_global + f_local).
template <typename S>
BasicTensor<S> pam_compose(Context<S>& ctx, BasicTensor<S> i_global,
                           BasicTensor<S> f_local);

}  // namespace luxforge
