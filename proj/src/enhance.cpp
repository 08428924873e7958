#include "luxforge/enhance.hpp"

#include <cmath>

#include "luxforge/common.hpp"

namespace luxforge {

template <typename S>
EnhanceResultT<S> enhance(Context<S>& ctx, EnhancerT<S>& e,
                          BasicTensor<S> input, BnMode mode) {
  if (input.rank() != 4 || input.dim(1) != 3)
    throw shape_error(cat("enhance: expected (N,3,H,W) batch, got ",
                          shape_str(input.shape())));
  const int n = input.dim(0), h = input.dim(2), w = input.dim(3);

  EnhanceResultT<S> result;
  BasicTensor<S> global = input;
  if (e.gem_enabled) {
    BasicTensor<S> gains = gem_predict(ctx, e.gem, gem_downsample(ctx, input));
    global = gem_apply(ctx, input, gains);
    result.coefficients = extract_coefficients(gains);
  } else {
    result.coefficients.assign(static_cast<size_t>(n),
                               CorrectionCoefficientsT<S>{});
  }

  if (e.pam_enabled) {
    const int mult = PamNetworkT<S>::kSizeMultiple;
    int pad_h = (mult - h % mult) % mult;
    int pad_w = (mult - w % mult) % mult;
    BasicTensor<S> padded =
        (pad_h || pad_w) ? reflect_pad2d(ctx, global, pad_h, pad_w) : global;
    BasicTensor<S> f = pam_predict(ctx, e.pam, padded, mode);
    if (pad_h || pad_w) f = crop2d(ctx, f, h, w);

    double sq = 0.0, mx = 0.0;
    for (S v : f.values()) {
      double d = static_cast<double>(v);
      sq += d * d;
      mx = std::max(mx, std::fabs(d));
    }
    result.f_local_rms = std::sqrt(sq / static_cast<double>(f.numel()));
    result.f_local_max = mx;
    result.output = pam_compose(ctx, global, f);
  } else {
    result.output = clamp01(ctx, global);
  }
  return result;
}

template EnhanceResultT<float> enhance<float>(Context<float>&,
                                              EnhancerT<float>&,
                                              BasicTensor<float>, BnMode);
template EnhanceResultT<double> enhance<double>(Context<double>&,
                                                EnhancerT<double>&,
                                                BasicTensor<double>, BnMode);

}  // namespace luxforge
