#include "luxforge/gem.hpp"

#include <cmath>

#include "luxforge/common.hpp"

namespace luxforge {

template <typename S>
GemNetworkT<S>::GemNetworkT(uint64_t seed) {
  Rng rng(derive_seed(seed, "gem.init"));
  const int widths[7] = {3, 16, 32, 32, 32, 32, 3};
  for (int i = 0; i < 6; ++i) {
    bool last = i == 5;
    convs_[static_cast<size_t>(i)] =
        Conv2dLayerT<S>(widths[i], widths[i + 1], 3, 1, 1, rng,
                        /*zero_init=*/last);
  }
  log_bound_ = static_cast<S>(std::log(64.0));
}

template <typename S>
BasicTensor<S> GemNetworkT<S>::predict(Context<S>& ctx, BasicTensor<S> i_lr) {
  if (i_lr.rank() != 4 || i_lr.dim(1) != 3 || i_lr.dim(2) != kInputSize ||
      i_lr.dim(3) != kInputSize)
    throw shape_error(cat("GemNetwork::predict: expected (N,3,", kInputSize,
                          ",", kInputSize, "), got ", shape_str(i_lr.shape())));
  BasicTensor<S> h = i_lr;
  for (int i = 0; i < 5; ++i)
    h = relu(ctx, convs_[static_cast<size_t>(i)].forward(ctx, h));
  h = convs_[5].forward(ctx, h);
  h = global_avg_pool(ctx, h);           // (N,3,1,1) pre-activation
  return bounded_exp(ctx, h, log_bound_);
}

template <typename S>
void GemNetworkT<S>::visit_tensors(const TensorVisitor<S>& fn) {
  for (int i = 0; i < 6; ++i)
    convs_[static_cast<size_t>(i)].visit(cat("gem.conv", i + 1), fn);
}

template <typename S>
BasicTensor<S> gem_downsample(Context<S>& ctx, BasicTensor<S> input) {
  if (input.rank() != 4 || input.dim(1) != 3)
    throw shape_error(cat("gem_downsample: expected (N,3,H,W), got ",
                          shape_str(input.shape())));
  return bilinear_resize(ctx, input, GemNetworkT<S>::kInputSize,
                         GemNetworkT<S>::kInputSize);
}

template <typename S>
BasicTensor<S> gem_predict(Context<S>& ctx, GemNetworkT<S>& net,
                           BasicTensor<S> i_lr) {
  return net.predict(ctx, i_lr);
}

template <typename S>
BasicTensor<S> gem_apply(Context<S>& ctx, BasicTensor<S> input,
                         BasicTensor<S> gains) {
  if (input.rank() != 4 || input.dim(1) != 3)
    throw shape_error(cat("gem_apply: expected (N,3,H,W) image, got ",
                          shape_str(input.shape())));
  if (gains.rank() != 4 || gains.dim(0) != input.dim(0) || gains.dim(1) != 3 ||
      gains.dim(2) != 1 || gains.dim(3) != 1)
    throw shape_error(cat("gem_apply: expected (", input.dim(0),
                          ",3,1,1) gains, got ", shape_str(gains.shape())));
  return mul(ctx, input, gains);
}

template <typename S>
std::vector<CorrectionCoefficientsT<S>> extract_coefficients(
    const BasicTensor<S>& gains) {
  if (gains.rank() != 4 || gains.dim(1) != 3 || gains.dim(2) != 1 ||
      gains.dim(3) != 1)
    throw shape_error(cat("extract_coefficients: expected (N,3,1,1), got ",
                          shape_str(gains.shape())));
  std::vector<CorrectionCoefficientsT<S>> out(
      static_cast<size_t>(gains.dim(0)));
  const S* v = gains.data();
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = {v[3 * i + 0], v[3 * i + 1], v[3 * i + 2]};
  return out;
}

#define LUXFORGE_INSTANTIATE_GEM(S)                                        \
  template class GemNetworkT<S>;                                           \
  template BasicTensor<S> gem_downsample<S>(Context<S>&, BasicTensor<S>);  \
  template BasicTensor<S> gem_predict<S>(Context<S>&, GemNetworkT<S>&,     \
                                         BasicTensor<S>);                  \
  template BasicTensor<S> gem_apply<S>(Context<S>&, BasicTensor<S>,        \
                                       BasicTensor<S>);                    \
  template std::vector<CorrectionCoefficientsT<S>> extract_coefficients<S>( \
      const BasicTensor<S>&);

LUXFORGE_INSTANTIATE_GEM(float)
LUXFORGE_INSTANTIATE_GEM(double)

}  // namespace luxforge
