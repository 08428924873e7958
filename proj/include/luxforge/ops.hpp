#pragma once

#include "luxforge/tensor.hpp"

namespace luxforge {

inline constexpr int kIgnoreLabel = -1;

enum class BnMode { train, eval };

// Running statistics owned by a batch-norm layer. Updated in train mode
// (unless the context disables stat updates), consumed in eval mode.
template <typename S>
struct BatchNormState {
  BasicTensor<S> running_mean;
  BasicTensor<S> running_var;
  int64_t batches_seen = 0;
};

// All ops take tensors by value (aliasing handles) and return a fresh
// output tensor. When ctx carries a tape and any input needs gradients,
// the op records a backward closure.

// input (N,Ci,H,W) * weight (Co,Ci,Kh,Kw) + bias (Co) -> (N,Co,Ho,Wo),
// zero padding, 64-bit accumulation inside.
template <typename S>
BasicTensor<S> conv2d(Context<S>& ctx, BasicTensor<S> input,
                      BasicTensor<S> weight, BasicTensor<S> bias,
                      int stride = 1, int padding = 0);

// Adjoint of conv2d: input (N,Ci,H,W) * weight (Ci,Co,Kh,Kw) + bias (Co)
// -> (N,Co,Ho,Wo) with Ho = (H-1)*stride - 2*padding + Kh.
template <typename S>
BasicTensor<S> conv_transpose2d(Context<S>& ctx, BasicTensor<S> input,
                                BasicTensor<S> weight, BasicTensor<S> bias,
                                int stride = 1, int padding = 0);

// Direct triple-loop convolution, 64-bit accumulation, no autograd. Kept
// deliberately independent of the im2col/GEMM path so the two can be
// checked against each other.
template <typename S>
BasicTensor<S> naive_conv_oracle(const BasicTensor<S>& input,
                                 const BasicTensor<S>& weight,
                                 const BasicTensor<S>& bias, int stride = 1,
                                 int padding = 0);

template <typename S>
BasicTensor<S> batchnorm2d(Context<S>& ctx, BasicTensor<S> input,
                           BasicTensor<S> gamma, BasicTensor<S> beta,
                           BatchNormState<S>& state, BnMode mode,
                           S eps = S(1e-5), S momentum = S(0.1));

template <typename S>
BasicTensor<S> relu(Context<S>& ctx, BasicTensor<S> x);

// Half-pixel-center bilinear resampling with edge clamping. Resizing to the
// input size is an exact identity.
template <typename S>
BasicTensor<S> bilinear_resize(Context<S>& ctx, BasicTensor<S> x, int out_h,
                               int out_w);

// add/mul support b of equal shape, scalar b (numel 1), or per-channel b of
// shape (N,C,1,1) / (1,C,1,1) against a of shape (N,C,H,W).
template <typename S>
BasicTensor<S> add(Context<S>& ctx, BasicTensor<S> a, BasicTensor<S> b);

template <typename S>
BasicTensor<S> mul(Context<S>& ctx, BasicTensor<S> a, BasicTensor<S> b);

template <typename S>
BasicTensor<S> scalar_mul(Context<S>& ctx, BasicTensor<S> a, S s);

// Clamp to [0,1]; gradient passes only strictly inside the interval.
template <typename S>
BasicTensor<S> clamp01(Context<S>& ctx, BasicTensor<S> x);

// exp(clamp(z, -log_bound, +log_bound)); output range is
// [exp(-log_bound), exp(log_bound)], gradient is zero where the clamp is
// active.
template <typename S>
BasicTensor<S> bounded_exp(Context<S>& ctx, BasicTensor<S> z, S log_bound);

// (N,C,H,W) -> (N,C,1,1)
template <typename S>
BasicTensor<S> global_avg_pool(Context<S>& ctx, BasicTensor<S> x);

// Mean pixelwise cross entropy between logits (N,K,H,W) and labels (N,H,W).
// Pixels labelled ignore_label do not contribute; labels outside
// [0,K) other than ignore_label raise value_error.
template <typename S>
BasicTensor<S> softmax_cross_entropy_pixelwise(Context<S>& ctx,
                                               BasicTensor<S> logits,
                                               const LabelMap& labels,
                                               int ignore_label = kIgnoreLabel);

template <typename S>
BasicTensor<S> concat_channels(Context<S>& ctx, BasicTensor<S> a,
                               BasicTensor<S> b);

// Mirror-pad bottom/right (no edge duplication; degenerates to edge
// replication when the extent is 1).
template <typename S>
BasicTensor<S> reflect_pad2d(Context<S>& ctx, BasicTensor<S> x, int pad_h,
                             int pad_w);

// Keep the top-left out_h x out_w window.
template <typename S>
BasicTensor<S> crop2d(Context<S>& ctx, BasicTensor<S> x, int out_h, int out_w);

template <typename S>
BasicTensor<S> mean_all(Context<S>& ctx, BasicTensor<S> x);

}  // namespace luxforge
