#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "luxforge/ops.hpp"
#include "op_util.hpp"

namespace luxforge {

namespace {

using detail::debug_finite;
using detail::record_op;
using detail::require_rank;

enum class Broadcast { same, scalar, channel };

// Classifies how b broadcasts against a. "channel" means a is (N,C,H,W) and
// b is (N,C,1,1) or (1,C,1,1).
template <typename S>
Broadcast classify_broadcast(const char* op, const BasicTensor<S>& a,
                             const BasicTensor<S>& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  if (a.rank() == 4 && b.rank() == 4 && b.dim(2) == 1 && b.dim(3) == 1 &&
      b.dim(1) == a.dim(1) && (b.dim(0) == a.dim(0) || b.dim(0) == 1))
    return Broadcast::channel;
  throw shape_error(cat(op, ": cannot broadcast ", shape_str(b.shape()),
                        " against ", shape_str(a.shape())));
}

// y index period for mirror padding without edge duplication.
inline int mirror_index(int i, int extent) {
  if (extent == 1) return 0;
  int period = 2 * extent - 2;
  int m = i % period;
  if (m < 0) m += period;
  return m < extent ? m : period - m;
}

struct ResizeAxis {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

// Half-pixel-center source coordinates, clamped to the valid range.
ResizeAxis resize_axis(int in, int out) {
  ResizeAxis ax;
  ax.lo.resize(out);
  ax.hi.resize(out);
  ax.frac.resize(out);
  double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    int lo = static_cast<int>(src);
    ax.lo[o] = lo;
    ax.hi[o] = std::min(lo + 1, in - 1);
    ax.frac[o] = src - lo;
  }
  return ax;
}

}  // namespace

template <typename S>
BasicTensor<S> relu(Context<S>& ctx, BasicTensor<S> x) {
  auto out = BasicTensor<S>::zeros(x.shape());
  const S* xv = x.data();
  S* ov = out.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] > S(0) ? xv[i] : S(0);
  record_op(ctx, "relu", {&x}, out, [x, out]() mutable {
    if (!out.grad_allocated()) return;
    const S* og = out.grad();
    const S* xv = x.data();
    S* xg = x.grad();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i)
      if (xv[i] > S(0)) xg[i] += og[i];
  });
  return out;
}

template <typename S>
BasicTensor<S> add(Context<S>& ctx, BasicTensor<S> a, BasicTensor<S> b) {
  Broadcast bc = classify_broadcast("add", a, b);
  auto out = BasicTensor<S>::zeros(a.shape());
  const S* av = a.data();
  const S* bv = b.data();
  S* ov = out.data();
  int64_t n = a.numel();
  if (bc == Broadcast::same) {
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  } else if (bc == Broadcast::scalar) {
    S s = bv[0];
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + s;
  } else {
    int C = a.dim(1);
    int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
    bool batched = b.dim(0) == a.dim(0);
    for (int i = 0; i < a.dim(0); ++i)
      for (int c = 0; c < C; ++c) {
        S s = bv[(batched ? i : 0) * C + c];
        const S* src = av + (static_cast<int64_t>(i) * C + c) * hw;
        S* dst = ov + (static_cast<int64_t>(i) * C + c) * hw;
        for (int64_t k = 0; k < hw; ++k) dst[k] = src[k] + s;
      }
  }
  record_op(ctx, "add", {&a, &b}, out, [a, b, out, bc]() mutable {
    if (!out.grad_allocated()) return;
    const S* og = out.grad();
    int64_t n = a.numel();
    if (a.needs_grad()) {
      S* ag = a.grad();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i];
    }
    if (!b.needs_grad()) return;
    S* bg = b.grad();
    if (bc == Broadcast::same) {
      for (int64_t i = 0; i < n; ++i) bg[i] += og[i];
    } else if (bc == Broadcast::scalar) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(og[i]);
      bg[0] += static_cast<S>(acc);
    } else {
      int C = a.dim(1);
      int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
      bool batched = b.dim(0) == a.dim(0);
      for (int i = 0; i < a.dim(0); ++i)
        for (int c = 0; c < C; ++c) {
          const S* src = og + (static_cast<int64_t>(i) * C + c) * hw;
          double acc = 0.0;
          for (int64_t k = 0; k < hw; ++k) acc += static_cast<double>(src[k]);
          bg[(batched ? i : 0) * C + c] += static_cast<S>(acc);
        }
    }
  });
  return out;
}

template <typename S>
BasicTensor<S> mul(Context<S>& ctx, BasicTensor<S> a, BasicTensor<S> b) {
  Broadcast bc = classify_broadcast("mul", a, b);
  auto out = BasicTensor<S>::zeros(a.shape());
  const S* av = a.data();
  const S* bv = b.data();
  S* ov = out.data();
  int64_t n = a.numel();
  if (bc == Broadcast::same) {
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
  } else if (bc == Broadcast::scalar) {
    S s = bv[0];
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * s;
  } else {
    int C = a.dim(1);
    int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
    bool batched = b.dim(0) == a.dim(0);
    for (int i = 0; i < a.dim(0); ++i)
      for (int c = 0; c < C; ++c) {
        S s = bv[(batched ? i : 0) * C + c];
        const S* src = av + (static_cast<int64_t>(i) * C + c) * hw;
        S* dst = ov + (static_cast<int64_t>(i) * C + c) * hw;
        for (int64_t k = 0; k < hw; ++k) dst[k] = src[k] * s;
      }
  }
  record_op(ctx, "mul", {&a, &b}, out, [a, b, out, bc]() mutable {
    if (!out.grad_allocated()) return;
    const S* og = out.grad();
    const S* av = a.data();
    const S* bv = b.data();
    int64_t n = a.numel();
    if (bc == Broadcast::same) {
      if (a.needs_grad()) {
        S* ag = a.grad();
        for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * bv[i];
      }
      if (b.needs_grad()) {
        S* bg = b.grad();
        for (int64_t i = 0; i < n; ++i) bg[i] += og[i] * av[i];
      }
      return;
    }
    if (bc == Broadcast::scalar) {
      if (a.needs_grad()) {
        S* ag = a.grad();
        S s = bv[0];
        for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * s;
      }
      if (b.needs_grad()) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i)
          acc += static_cast<double>(og[i]) * static_cast<double>(av[i]);
        b.grad()[0] += static_cast<S>(acc);
      }
      return;
    }
    int C = a.dim(1);
    int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
    bool batched = b.dim(0) == a.dim(0);
    for (int i = 0; i < a.dim(0); ++i)
      for (int c = 0; c < C; ++c) {
        int64_t base = (static_cast<int64_t>(i) * C + c) * hw;
        S s = bv[(batched ? i : 0) * C + c];
        if (a.needs_grad()) {
          S* ag = a.grad();
          for (int64_t k = 0; k < hw; ++k) ag[base + k] += og[base + k] * s;
        }
        if (b.needs_grad()) {
          double acc = 0.0;
          for (int64_t k = 0; k < hw; ++k)
            acc += static_cast<double>(og[base + k]) *
                   static_cast<double>(av[base + k]);
          b.grad()[(batched ? i : 0) * C + c] += static_cast<S>(acc);
        }
      }
  });
  return out;
}

template <typename S>
BasicTensor<S> scalar_mul(Context<S>& ctx, BasicTensor<S> a, S s) {
  auto out = BasicTensor<S>::zeros(a.shape());
  const S* av = a.data();
  S* ov = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * s;
  record_op(ctx, "scalar_mul", {&a}, out, [a, out, s]() mutable {
    if (!out.grad_allocated()) return;
    const S* og = out.grad();
    S* ag = a.grad();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * s;
  });
  return out;
}

template <typename S>
BasicTensor<S> clamp01(Context<S>& ctx, BasicTensor<S> x) {
  auto out = BasicTensor<S>::zeros(x.shape());
  const S* xv = x.data();
  S* ov = out.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = std::clamp(xv[i], S(0), S(1));
  record_op(ctx, "clamp01", {&x}, out, [x, out]() mutable {
    if (!out.grad_allocated()) return;
    const S* og = out.grad();
    const S* xv = x.data();
    S* xg = x.grad();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i)
      if (xv[i] > S(0) && xv[i] < S(1)) xg[i] += og[i];
  });
  return out;
}

template <typename S>
BasicTensor<S> bounded_exp(Context<S>& ctx, BasicTensor<S> z, S log_bound) {
  if (!(log_bound > S(0)))
    throw value_error(cat("bounded_exp: log_bound must be positive, got ",
                          static_cast<double>(log_bound)));
  auto out = BasicTensor<S>::zeros(z.shape());
  const S* zv = z.data();
  S* ov = out.data();
  int64_t n = z.numel();
  for (int64_t i = 0; i < n; ++i)
    ov[i] = std::exp(std::clamp(zv[i], -log_bound, log_bound));
  record_op(ctx, "bounded_exp", {&z}, out, [z, out, log_bound]() mutable {
    if (!out.grad_allocated()) return;
    const S* og = out.grad();
    const S* zv = z.data();
    const S* ov = out.data();
    S* zg = z.grad();
    int64_t n = z.numel();
    for (int64_t i = 0; i < n; ++i)
      if (zv[i] > -log_bound && zv[i] < log_bound) zg[i] += og[i] * ov[i];
  });
  return out;
}

template <typename S>
BasicTensor<S> global_avg_pool(Context<S>& ctx, BasicTensor<S> x) {
  require_rank(x, 4, "global_avg_pool", "input");
  int N = x.dim(0), C = x.dim(1);
  int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  auto out = BasicTensor<S>::zeros({N, C, 1, 1});
  const S* xv = x.data();
  S* ov = out.data();
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c) {
      const S* src = xv + (static_cast<int64_t>(i) * C + c) * hw;
      double acc = 0.0;
      for (int64_t k = 0; k < hw; ++k) acc += static_cast<double>(src[k]);
      ov[i * C + c] = static_cast<S>(acc / static_cast<double>(hw));
    }
  record_op(ctx, "global_avg_pool", {&x}, out, [x, out, hw]() mutable {
    if (!out.grad_allocated()) return;
    const S* og = out.grad();
    S* xg = x.grad();
    int N = x.dim(0), C = x.dim(1);
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c) {
        S g = og[i * C + c] / static_cast<S>(hw);
        S* dst = xg + (static_cast<int64_t>(i) * C + c) * hw;
        for (int64_t k = 0; k < hw; ++k) dst[k] += g;
      }
  });
  return out;
}

template <typename S>
BasicTensor<S> mean_all(Context<S>& ctx, BasicTensor<S> x) {
  int64_t n = x.numel();
  if (n == 0) throw shape_error("mean_all: empty tensor");
  double acc = 0.0;
  const S* xv = x.data();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(xv[i]);
  auto out = BasicTensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  record_op(ctx, "mean_all", {&x}, out, [x, out, n]() mutable {
    if (!out.grad_allocated()) return;
    S g = out.grad()[0] / static_cast<S>(n);
    S* xg = x.grad();
    for (int64_t i = 0; i < n; ++i) xg[i] += g;
  });
  return out;
}

template <typename S>
BasicTensor<S> bilinear_resize(Context<S>& ctx, BasicTensor<S> x, int out_h,
                               int out_w) {
  require_rank(x, 4, "bilinear_resize", "input");
  if (out_h < 1 || out_w < 1)
    throw value_error(cat("bilinear_resize: target ", out_h, "x", out_w,
                          " must be positive"));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  ResizeAxis ay = resize_axis(H, out_h);
  ResizeAxis ax = resize_axis(W, out_w);
  auto out = BasicTensor<S>::zeros({N, C, out_h, out_w});
  const S* xv = x.data();
  S* ov = out.data();
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c) {
      const S* plane = xv + (static_cast<int64_t>(i) * C + c) * H * W;
      S* dst = ov + (static_cast<int64_t>(i) * C + c) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const S* r0 = plane + static_cast<int64_t>(ay.lo[oy]) * W;
        const S* r1 = plane + static_cast<int64_t>(ay.hi[oy]) * W;
        double fy = ay.frac[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          double fx = ax.frac[ox];
          double v00 = r0[ax.lo[ox]], v01 = r0[ax.hi[ox]];
          double v10 = r1[ax.lo[ox]], v11 = r1[ax.hi[ox]];
          double top = v00 + fx * (v01 - v00);
          double bot = v10 + fx * (v11 - v10);
          dst[static_cast<int64_t>(oy) * out_w + ox] =
              static_cast<S>(top + fy * (bot - top));
        }
      }
    }
  record_op(ctx, "bilinear_resize", {&x}, out,
            [x, out, ay, ax, out_h, out_w]() mutable {
              if (!out.grad_allocated()) return;
              const S* og = out.grad();
              S* xg = x.grad();
              int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
              for (int i = 0; i < N; ++i)
                for (int c = 0; c < C; ++c) {
                  S* gplane = xg + (static_cast<int64_t>(i) * C + c) * H * W;
                  const S* gsrc =
                      og + (static_cast<int64_t>(i) * C + c) * out_h * out_w;
                  for (int oy = 0; oy < out_h; ++oy) {
                    double fy = ay.frac[oy];
                    S* g0 = gplane + static_cast<int64_t>(ay.lo[oy]) * W;
                    S* g1 = gplane + static_cast<int64_t>(ay.hi[oy]) * W;
                    for (int ox = 0; ox < out_w; ++ox) {
                      double fx = ax.frac[ox];
                      double g = gsrc[static_cast<int64_t>(oy) * out_w + ox];
                      g0[ax.lo[ox]] += static_cast<S>(g * (1 - fy) * (1 - fx));
                      g0[ax.hi[ox]] += static_cast<S>(g * (1 - fy) * fx);
                      g1[ax.lo[ox]] += static_cast<S>(g * fy * (1 - fx));
                      g1[ax.hi[ox]] += static_cast<S>(g * fy * fx);
                    }
                  }
                }
            });
  return out;
}

template <typename S>
BasicTensor<S> batchnorm2d(Context<S>& ctx, BasicTensor<S> input,
                           BasicTensor<S> gamma, BasicTensor<S> beta,
                           BatchNormState<S>& state, BnMode mode, S eps,
                           S momentum) {
  require_rank(input, 4, "batchnorm2d", "input");
  require_rank(gamma, 1, "batchnorm2d", "gamma");
  require_rank(beta, 1, "batchnorm2d", "beta");
  int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (gamma.dim(0) != C || beta.dim(0) != C)
    throw shape_error(cat("batchnorm2d: gamma/beta sized ", gamma.dim(0), "/",
                          beta.dim(0), " but input has ", C, " channels"));
  if (state.running_mean.numel() != C || state.running_var.numel() != C)
    throw shape_error(cat("batchnorm2d: running stats sized ",
                          state.running_mean.numel(), " but input has ", C,
                          " channels"));
  const int64_t hw = static_cast<int64_t>(H) * W;
  const int64_t m = static_cast<int64_t>(N) * hw;

  std::vector<double> mean(C), inv_std(C);
  if (mode == BnMode::train) {
    if (m < 2)
      throw value_error(cat("batchnorm2d: train mode needs at least 2 values "
                            "per channel, got ", m));
    const S* xv = input.data();
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int i = 0; i < N; ++i) {
        const S* src = xv + (static_cast<int64_t>(i) * C + c) * hw;
        for (int64_t k = 0; k < hw; ++k) acc += static_cast<double>(src[k]);
      }
      double mu = acc / static_cast<double>(m);
      double var_acc = 0.0;
      for (int i = 0; i < N; ++i) {
        const S* src = xv + (static_cast<int64_t>(i) * C + c) * hw;
        for (int64_t k = 0; k < hw; ++k) {
          double d = static_cast<double>(src[k]) - mu;
          var_acc += d * d;
        }
      }
      double var = var_acc / static_cast<double>(m);  // biased, used for norm
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + static_cast<double>(eps));
      if (ctx.update_running_stats) {
        double unbiased = var_acc / static_cast<double>(m - 1);
        S* rm = state.running_mean.data();
        S* rv = state.running_var.data();
        rm[c] = static_cast<S>((1.0 - momentum) * rm[c] + momentum * mu);
        rv[c] = static_cast<S>((1.0 - momentum) * rv[c] + momentum * unbiased);
      }
    }
    if (ctx.update_running_stats) state.batches_seen++;
  } else {
    if (state.batches_seen == 0)
      throw value_error(
          "batchnorm2d: eval mode requested before any running statistics "
          "were accumulated");
    const S* rm = state.running_mean.data();
    const S* rv = state.running_var.data();
    for (int c = 0; c < C; ++c) {
      mean[c] = static_cast<double>(rm[c]);
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(rv[c]) +
                                   static_cast<double>(eps));
    }
  }

  auto out = BasicTensor<S>::zeros(input.shape());
  {
    const S* xv = input.data();
    const S* gv = gamma.data();
    const S* bv = beta.data();
    S* ov = out.data();
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c) {
        const S* src = xv + (static_cast<int64_t>(i) * C + c) * hw;
        S* dst = ov + (static_cast<int64_t>(i) * C + c) * hw;
        double scale = static_cast<double>(gv[c]) * inv_std[c];
        double shift = static_cast<double>(bv[c]) - mean[c] * scale;
        for (int64_t k = 0; k < hw; ++k)
          dst[k] = static_cast<S>(static_cast<double>(src[k]) * scale + shift);
      }
  }
  debug_finite(out, "batchnorm2d");

  record_op(
      ctx, "batchnorm2d", {&input, &gamma, &beta}, out,
      [input, gamma, beta, out, mean, inv_std, mode, N, C, hw, m]() mutable {
        if (!out.grad_allocated()) return;
        const S* og = out.grad();
        const S* xv = input.data();
        const S* gv = gamma.data();

        for (int c = 0; c < C; ++c) {
          // Per-channel reductions of the incoming gradient.
          double sum_g = 0.0, sum_gx = 0.0;
          for (int i = 0; i < N; ++i) {
            int64_t base = (static_cast<int64_t>(i) * C + c) * hw;
            for (int64_t k = 0; k < hw; ++k) {
              double g = static_cast<double>(og[base + k]);
              double xn = (static_cast<double>(xv[base + k]) - mean[c]) *
                          inv_std[c];
              sum_g += g;
              sum_gx += g * xn;
            }
          }
          if (gamma.needs_grad()) gamma.grad()[c] += static_cast<S>(sum_gx);
          if (beta.needs_grad()) beta.grad()[c] += static_cast<S>(sum_g);
          if (!input.needs_grad()) continue;
          S* xg = input.grad();
          double scale = static_cast<double>(gv[c]) * inv_std[c];
          if (mode == BnMode::train) {
            double mg = sum_g / static_cast<double>(m);
            double mgx = sum_gx / static_cast<double>(m);
            for (int i = 0; i < N; ++i) {
              int64_t base = (static_cast<int64_t>(i) * C + c) * hw;
              for (int64_t k = 0; k < hw; ++k) {
                double g = static_cast<double>(og[base + k]);
                double xn = (static_cast<double>(xv[base + k]) - mean[c]) *
                            inv_std[c];
                xg[base + k] += static_cast<S>(scale * (g - mg - xn * mgx));
              }
            }
          } else {
            for (int i = 0; i < N; ++i) {
              int64_t base = (static_cast<int64_t>(i) * C + c) * hw;
              for (int64_t k = 0; k < hw; ++k)
                xg[base + k] +=
                    static_cast<S>(static_cast<double>(og[base + k]) * scale);
            }
          }
        }
      });
  return out;
}

template <typename S>
BasicTensor<S> softmax_cross_entropy_pixelwise(Context<S>& ctx,
                                               BasicTensor<S> logits,
                                               const LabelMap& labels,
                                               int ignore_label) {
  require_rank(logits, 4, "softmax_cross_entropy_pixelwise", "logits");
  int N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (labels.n != N || labels.h != H || labels.w != W)
    throw shape_error(cat("softmax_cross_entropy_pixelwise: labels (", labels.n,
                          ",", labels.h, ",", labels.w, ") vs logits ",
                          shape_str(logits.shape())));
  const int64_t hw = static_cast<int64_t>(H) * W;
  const S* lv = logits.data();

  double total = 0.0;
  int64_t count = 0;
  for (int i = 0; i < N; ++i) {
    const int32_t* lab = labels.values.data() + static_cast<int64_t>(i) * hw;
    const S* img = lv + static_cast<int64_t>(i) * K * hw;
    for (int64_t p = 0; p < hw; ++p) {
      int32_t y = lab[p];
      if (y == ignore_label) continue;
      if (y < 0 || y >= K)
        throw value_error(cat("softmax_cross_entropy_pixelwise: label ", y,
                              " at (image ", i, ", pixel ", p / W, ",", p % W,
                              ") outside [0,", K, ")"));
      double mx = -1e300;
      for (int k = 0; k < K; ++k)
        mx = std::max(mx, static_cast<double>(img[k * hw + p]));
      double denom = 0.0;
      for (int k = 0; k < K; ++k)
        denom += std::exp(static_cast<double>(img[k * hw + p]) - mx);
      total += std::log(denom) - (static_cast<double>(img[y * hw + p]) - mx);
      ++count;
    }
  }
  double value = count > 0 ? total / static_cast<double>(count) : 0.0;
  auto out = BasicTensor<S>::scalar(static_cast<S>(value));
  if (count == 0) return out;  // nothing to differentiate against

  LabelMap labels_copy = labels;
  record_op(ctx, "softmax_cross_entropy_pixelwise", {&logits}, out,
            [logits, out, labels_copy, ignore_label, count]() mutable {
              if (!out.grad_allocated()) return;
              S go = out.grad()[0];
              int N = logits.dim(0), K = logits.dim(1), H = logits.dim(2),
                  W = logits.dim(3);
              const int64_t hw = static_cast<int64_t>(H) * W;
              const S* lv = logits.data();
              S* lg = logits.grad();
              double inv = static_cast<double>(go) / static_cast<double>(count);
              for (int i = 0; i < N; ++i) {
                const int32_t* lab =
                    labels_copy.values.data() + static_cast<int64_t>(i) * hw;
                const S* img = lv + static_cast<int64_t>(i) * K * hw;
                S* gimg = lg + static_cast<int64_t>(i) * K * hw;
                for (int64_t p = 0; p < hw; ++p) {
                  int32_t y = lab[p];
                  if (y == ignore_label) continue;
                  double mx = -1e300;
                  for (int k = 0; k < K; ++k)
                    mx = std::max(mx, static_cast<double>(img[k * hw + p]));
                  double denom = 0.0;
                  for (int k = 0; k < K; ++k)
                    denom += std::exp(static_cast<double>(img[k * hw + p]) - mx);
                  for (int k = 0; k < K; ++k) {
                    double pk =
                        std::exp(static_cast<double>(img[k * hw + p]) - mx) /
                        denom;
                    double delta = (k == y) ? 1.0 : 0.0;
                    gimg[k * hw + p] += static_cast<S>((pk - delta) * inv);
                  }
                }
              }
            });
  return out;
}

template <typename S>
BasicTensor<S> concat_channels(Context<S>& ctx, BasicTensor<S> a,
                               BasicTensor<S> b) {
  require_rank(a, 4, "concat_channels", "a");
  require_rank(b, 4, "concat_channels", "b");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw shape_error(cat("concat_channels: ", shape_str(a.shape()), " vs ",
                          shape_str(b.shape()),
                          " differ outside the channel axis"));
  int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
  auto out = BasicTensor<S>::zeros({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (int i = 0; i < N; ++i) {
    std::copy_n(a.data() + static_cast<int64_t>(i) * Ca * hw, Ca * hw,
                out.data() + static_cast<int64_t>(i) * (Ca + Cb) * hw);
    std::copy_n(b.data() + static_cast<int64_t>(i) * Cb * hw, Cb * hw,
                out.data() + static_cast<int64_t>(i) * (Ca + Cb) * hw + Ca * hw);
  }
  record_op(ctx, "concat_channels", {&a, &b}, out, [a, b, out]() mutable {
    if (!out.grad_allocated()) return;
    int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
    int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
    const S* og = out.grad();
    for (int i = 0; i < N; ++i) {
      const S* src = og + static_cast<int64_t>(i) * (Ca + Cb) * hw;
      if (a.needs_grad()) {
        S* ag = a.grad() + static_cast<int64_t>(i) * Ca * hw;
        for (int64_t k = 0; k < Ca * hw; ++k) ag[k] += src[k];
      }
      if (b.needs_grad()) {
        S* bg = b.grad() + static_cast<int64_t>(i) * Cb * hw;
        for (int64_t k = 0; k < Cb * hw; ++k) bg[k] += src[Ca * hw + k];
      }
    }
  });
  return out;
}

template <typename S>
BasicTensor<S> reflect_pad2d(Context<S>& ctx, BasicTensor<S> x, int pad_h,
                             int pad_w) {
  require_rank(x, 4, "reflect_pad2d", "input");
  if (pad_h < 0 || pad_w < 0)
    throw value_error(cat("reflect_pad2d: negative padding ", pad_h, "/", pad_w));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int OH = H + pad_h, OW = W + pad_w;
  std::vector<int> ymap(OH), xmap(OW);
  for (int y = 0; y < OH; ++y) ymap[y] = mirror_index(y, H);
  for (int xx = 0; xx < OW; ++xx) xmap[xx] = mirror_index(xx, W);
  auto out = BasicTensor<S>::zeros({N, C, OH, OW});
  const S* xv = x.data();
  S* ov = out.data();
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c) {
      const S* plane = xv + (static_cast<int64_t>(i) * C + c) * H * W;
      S* dst = ov + (static_cast<int64_t>(i) * C + c) * OH * OW;
      for (int y = 0; y < OH; ++y) {
        const S* srow = plane + static_cast<int64_t>(ymap[y]) * W;
        S* drow = dst + static_cast<int64_t>(y) * OW;
        for (int xx = 0; xx < OW; ++xx) drow[xx] = srow[xmap[xx]];
      }
    }
  record_op(ctx, "reflect_pad2d", {&x}, out,
            [x, out, ymap, xmap, OH, OW]() mutable {
              if (!out.grad_allocated()) return;
              int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
              const S* og = out.grad();
              S* xg = x.grad();
              for (int i = 0; i < N; ++i)
                for (int c = 0; c < C; ++c) {
                  S* gplane = xg + (static_cast<int64_t>(i) * C + c) * H * W;
                  const S* gsrc =
                      og + (static_cast<int64_t>(i) * C + c) * OH * OW;
                  for (int y = 0; y < OH; ++y)
                    for (int xx = 0; xx < OW; ++xx)
                      gplane[static_cast<int64_t>(ymap[y]) * W + xmap[xx]] +=
                          gsrc[static_cast<int64_t>(y) * OW + xx];
                }
            });
  return out;
}

template <typename S>
BasicTensor<S> crop2d(Context<S>& ctx, BasicTensor<S> x, int out_h, int out_w) {
  require_rank(x, 4, "crop2d", "input");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h < 1 || out_h > H || out_w < 1 || out_w > W)
    throw shape_error(cat("crop2d: window ", out_h, "x", out_w,
                          " invalid for input ", H, "x", W));
  auto out = BasicTensor<S>::zeros({N, C, out_h, out_w});
  const S* xv = x.data();
  S* ov = out.data();
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < out_h; ++y)
        std::copy_n(xv + ((static_cast<int64_t>(i) * C + c) * H + y) * W, out_w,
                    ov + ((static_cast<int64_t>(i) * C + c) * out_h + y) * out_w);
  record_op(ctx, "crop2d", {&x}, out, [x, out, out_h, out_w]() mutable {
    if (!out.grad_allocated()) return;
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const S* og = out.grad();
    S* xg = x.grad();
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y) {
          const S* srow =
              og + ((static_cast<int64_t>(i) * C + c) * out_h + y) * out_w;
          S* drow = xg + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
          for (int xx = 0; xx < out_w; ++xx) drow[xx] += srow[xx];
        }
  });
  return out;
}

#define LUXFORGE_INSTANTIATE_OPS(S)                                           \
  template BasicTensor<S> relu<S>(Context<S>&, BasicTensor<S>);               \
  template BasicTensor<S> add<S>(Context<S>&, BasicTensor<S>, BasicTensor<S>); \
  template BasicTensor<S> mul<S>(Context<S>&, BasicTensor<S>, BasicTensor<S>); \
  template BasicTensor<S> scalar_mul<S>(Context<S>&, BasicTensor<S>, S);      \
  template BasicTensor<S> clamp01<S>(Context<S>&, BasicTensor<S>);            \
  template BasicTensor<S> bounded_exp<S>(Context<S>&, BasicTensor<S>, S);     \
  template BasicTensor<S> global_avg_pool<S>(Context<S>&, BasicTensor<S>);    \
  template BasicTensor<S> mean_all<S>(Context<S>&, BasicTensor<S>);           \
  template BasicTensor<S> bilinear_resize<S>(Context<S>&, BasicTensor<S>, int, \
                                             int);                            \
  template BasicTensor<S> batchnorm2d<S>(Context<S>&, BasicTensor<S>,         \
                                         BasicTensor<S>, BasicTensor<S>,      \
                                         BatchNormState<S>&, BnMode, S, S);   \
  template BasicTensor<S> softmax_cross_entropy_pixelwise<S>(                 \
      Context<S>&, BasicTensor<S>, const LabelMap&, int);                     \
  template BasicTensor<S> concat_channels<S>(Context<S>&, BasicTensor<S>,     \
                                             BasicTensor<S>);                 \
  template BasicTensor<S> reflect_pad2d<S>(Context<S>&, BasicTensor<S>, int,  \
                                           int);                              \
  template BasicTensor<S> crop2d<S>(Context<S>&, BasicTensor<S>, int, int);

LUXFORGE_INSTANTIATE_OPS(float)
LUXFORGE_INSTANTIATE_OPS(double)

}  // namespace luxforge
