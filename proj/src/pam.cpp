#include "luxforge/pam.hpp"

#include "luxforge/common.hpp"

namespace luxforge {

namespace {
constexpr int kEncWidth[5] = {3, 16, 32, 64, 128};
constexpr int kDecWidth[5] = {128, 64, 32, 16, 8};
}  // namespace

template <typename S>
PamNetworkT<S>::PamNetworkT(uint64_t seed) {
  Rng rng(derive_seed(seed, "pam.init"));
  for (int i = 0; i < 4; ++i) {
    auto& b = enc_[static_cast<size_t>(i)];
    b.conv_a = Conv2dLayerT<S>(kEncWidth[i], kEncWidth[i + 1], 3, 1, 1, rng);
    b.conv_b = Conv2dLayerT<S>(kEncWidth[i + 1], kEncWidth[i + 1], 3, 2, 1, rng);
    b.bn = BatchNorm2dLayerT<S>(kEncWidth[i + 1]);
  }
  for (int i = 0; i < 4; ++i) {
    auto& b = dec_[static_cast<size_t>(i)];
    b.up = ConvTranspose2dLayerT<S>(kDecWidth[i], kDecWidth[i + 1], 2, 2, rng);
    // after upsampling, features are concatenated with the matching
    // encoder skip (width kEncWidth[4-i])
    b.conv = Conv2dLayerT<S>(kDecWidth[i + 1] + kEncWidth[4 - i],
                             kDecWidth[i + 1], 3, 1, 1, rng);
    b.bn = BatchNorm2dLayerT<S>(kDecWidth[i + 1]);
  }
  head_ = Conv2dLayerT<S>(kDecWidth[4], 3, 1, 1, 0, rng, /*zero_init=*/true);
}

template <typename S>
BasicTensor<S> PamNetworkT<S>::forward(Context<S>& ctx, BasicTensor<S> x,
                                       BnMode mode) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw shape_error(cat("PamNetwork::forward: expected (N,3,H,W), got ",
                          shape_str(x.shape())));
  if (x.dim(2) % kSizeMultiple != 0 || x.dim(3) % kSizeMultiple != 0)
    throw shape_error(cat("PamNetwork::forward: spatial size ", x.dim(2), "x",
                          x.dim(3), " not divisible by ", kSizeMultiple,
                          "; pad before calling"));
  std::array<BasicTensor<S>, 4> skips;
  BasicTensor<S> h = x;
  for (int i = 0; i < 4; ++i) {
    auto& b = enc_[static_cast<size_t>(i)];
    BasicTensor<S> a = b.conv_a.forward(ctx, h);
    skips[static_cast<size_t>(i)] = a;
    h = relu(ctx, b.bn.forward(ctx, b.conv_b.forward(ctx, a), mode));
  }
  for (int i = 0; i < 4; ++i) {
    auto& b = dec_[static_cast<size_t>(i)];
    h = b.up.forward(ctx, h);
    h = concat_channels(ctx, h, skips[static_cast<size_t>(3 - i)]);
    h = relu(ctx, b.bn.forward(ctx, b.conv.forward(ctx, h), mode));
  }
  return head_.forward(ctx, h);
}

template <typename S>
BasicTensor<S> PamNetworkT<S>::encoder_head_features(Context<S>& ctx,
                                                     BasicTensor<S> x) {
  return enc_[0].conv_a.forward(ctx, x);
}

template <typename S>
void PamNetworkT<S>::visit_tensors(const TensorVisitor<S>& fn) {
  for (int i = 0; i < 4; ++i) {
    auto& b = enc_[static_cast<size_t>(i)];
    b.conv_a.visit(cat("pam.enc", i + 1, ".conv_a"), fn);
    b.conv_b.visit(cat("pam.enc", i + 1, ".conv_b"), fn);
    b.bn.visit(cat("pam.enc", i + 1, ".bn"), fn);
  }
  for (int i = 0; i < 4; ++i) {
    auto& b = dec_[static_cast<size_t>(i)];
    b.up.visit(cat("pam.dec", i + 1, ".up"), fn);
    b.conv.visit(cat("pam.dec", i + 1, ".conv"), fn);
    b.bn.visit(cat("pam.dec", i + 1, ".bn"), fn);
  }
  head_.visit("pam.head", fn);
}

template <typename S>
void PamNetworkT<S>::visit_counters(const CounterVisitor& fn) {
  for (int i = 0; i < 4; ++i)
    enc_[static_cast<size_t>(i)].bn.visit_counters(cat("pam.enc", i + 1, ".bn"), fn);
  for (int i = 0; i < 4; ++i)
    dec_[static_cast<size_t>(i)].bn.visit_counters(cat("pam.dec", i + 1, ".bn"), fn);
}

template <typename S>
bool PamNetworkT<S>::stats_ready() const {
  for (const auto& b : enc_)
    if (!b.bn.stats_ready()) return false;
  for (const auto& b : dec_)
    if (!b.bn.stats_ready()) return false;
  return true;
}

template <typename S>
BasicTensor<S> pam_predict(Context<S>& ctx, PamNetworkT<S>& net,
                           BasicTensor<S> i_global, BnMode mode) {
  return net.forward(ctx, i_global, mode);
}

template <typename S>
BasicTensor<S> pam_compose(Context<S>& ctx, BasicTensor<S> i_global,
                           BasicTensor<S> f_local) {
  if (i_global.shape() != f_local.shape())
    throw shape_error(cat("pam_compose: image ", shape_str(i_global.shape()),
                          " vs map ", shape_str(f_local.shape())));
  return clamp01(ctx, add(ctx, i_global, f_local));
}

#define LUXFORGE_INSTANTIATE_PAM(S)                                      \
  template class PamNetworkT<S>;                                         \
  template BasicTensor<S> pam_predict<S>(Context<S>&, PamNetworkT<S>&,   \
                                         BasicTensor<S>, BnMode);        \
  template BasicTensor<S> pam_compose<S>(Context<S>&, BasicTensor<S>,    \
                                         BasicTensor<S>);

LUXFORGE_INSTANTIATE_PAM(float)
LUXFORGE_INSTANTIATE_PAM(double)

}  // namespace luxforge
