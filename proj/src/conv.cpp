#include <cstdint>
#include <memory>
#include <vector>

#include "luxforge/gemm.hpp"
#include "luxforge/ops.hpp"
#include "op_util.hpp"

namespace luxforge {

namespace {

using detail::debug_finite;
using detail::record_op;
using detail::require_rank;

// Reusable per-thread workspaces. Convolution forward and backward passes
// run to completion before the next op touches these, so fixed slots are
// safe; they just avoid re-zeroing big buffers on every call. Matrices stay
// in the tensor storage type: float convs run a float GEMM, and the double
// instantiation doubles as the high-precision oracle mode.
template <typename S>
std::vector<S>& scratch(int slot) {
  thread_local std::vector<S> bufs[6];
  return bufs[slot];
}

template <typename S>
std::vector<S>& sized_scratch(int slot, int64_t n) {
  auto& b = scratch<S>(slot);
  if (static_cast<int64_t>(b.size()) < n) b.resize(static_cast<size_t>(n));
  return b;
}

// Column buffers that outlive the forward pass (the tape closure keeps one
// for the weight gradient). Recycled through a pool so steady-state training
// does not churn multi-megabyte allocations every step.
template <typename S>
std::vector<std::vector<S>>& col_pool() {
  thread_local std::vector<std::vector<S>> pool;
  return pool;
}

template <typename S>
struct ColLease {
  std::vector<S> buf;

  explicit ColLease(int64_t n) {
    auto& pool = col_pool<S>();
    if (!pool.empty()) {
      buf = std::move(pool.back());
      pool.pop_back();
    }
    if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
  }
  ~ColLease() {
    auto& pool = col_pool<S>();
    if (pool.size() < 16) pool.push_back(std::move(buf));
  }
  ColLease(const ColLease&) = delete;
  ColLease& operator=(const ColLease&) = delete;
};

struct ConvGeom {
  int n, ci, h, w;       // input
  int co, kh, kw;        // filter
  int stride, padding;
  int oh, ow;            // output grid
};

template <typename S>
ConvGeom conv_geometry(const char* op, const BasicTensor<S>& input,
                       const BasicTensor<S>& weight,
                       const BasicTensor<S>& bias, bool transposed, int stride,
                       int padding) {
  require_rank(input, 4, op, "input");
  require_rank(weight, 4, op, "weight");
  require_rank(bias, 1, op, "bias");
  if (stride < 1) throw value_error(cat(op, ": stride must be >= 1, got ", stride));
  if (padding < 0) throw value_error(cat(op, ": padding must be >= 0, got ", padding));

  ConvGeom g{};
  g.n = input.dim(0);
  g.ci = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.stride = stride;
  g.padding = padding;
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  int weight_in = transposed ? weight.dim(0) : weight.dim(1);
  g.co = transposed ? weight.dim(1) : weight.dim(0);
  if (weight_in != g.ci)
    throw shape_error(cat(op, ": input has ", g.ci, " channels but weight ",
                          shape_str(weight.shape()), " expects ", weight_in));
  if (bias.dim(0) != g.co)
    throw shape_error(cat(op, ": bias has ", bias.dim(0),
                          " entries but output has ", g.co, " channels"));
  if (!transposed) {
    if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw)
      throw shape_error(cat(op, ": kernel ", g.kh, "x", g.kw,
                            " does not fit padded input ", g.h + 2 * padding,
                            "x", g.w + 2 * padding));
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  } else {
    g.oh = (g.h - 1) * stride - 2 * padding + g.kh;
    g.ow = (g.w - 1) * stride - 2 * padding + g.kw;
    if (g.oh < 1 || g.ow < 1)
      throw shape_error(cat(op, ": computed output ", g.oh, "x", g.ow,
                            " is empty for input ", g.h, "x", g.w));
  }
  return g;
}

// Unfolds one image into columns. Rows index (c,ky,kx); column j indexes an
// output grid position (oy,ox). `col` points at this image's first column,
// `row_stride` is the distance between consecutive rows in the shared
// multi-image matrix. Every cell is written (zeros for padding), so the
// buffer needs no pre-clear.
template <typename S>
void im2col_image(const S* img, int channels, int in_h, int in_w, int kh,
                  int kw, int stride, int pad, int out_h, int out_w, S* col,
                  int64_t row_stride) {
  for (int c = 0; c < channels; ++c) {
    const S* plane = img + static_cast<int64_t>(c) * in_h * in_w;
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        S* dst = col + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) *
                           row_stride;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride - pad + ky;
          S* drow = dst + static_cast<int64_t>(oy) * out_w;
          if (iy < 0 || iy >= in_h) {
            for (int ox = 0; ox < out_w; ++ox) drow[ox] = S(0);
            continue;
          }
          const S* srow = plane + static_cast<int64_t>(iy) * in_w;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride - pad + kx;
            drow[ox] = (ix >= 0 && ix < in_w) ? srow[ix] : S(0);
          }
        }
      }
  }
}

// Exact adjoint of im2col_image: scatter-adds columns back onto the image
// grid. `img` must be zeroed by the caller.
template <typename S>
void col2im_image(const S* col, int64_t row_stride, int channels, int in_h,
                  int in_w, int kh, int kw, int stride, int pad, int out_h,
                  int out_w, S* img) {
  for (int c = 0; c < channels; ++c) {
    S* plane = img + static_cast<int64_t>(c) * in_h * in_w;
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const S* src =
            col + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * row_stride;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in_h) continue;
          const S* srow = src + static_cast<int64_t>(oy) * out_w;
          S* drow = plane + static_cast<int64_t>(iy) * in_w;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < in_w) drow[ix] += srow[ox];
          }
        }
      }
  }
}

// (N,C,H,W) -> channel-major matrix [C x N*HW]
template <typename S>
void gather_channel_major(const S* src, int n, int c, int64_t hw, S* dst) {
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const S* s = src + (static_cast<int64_t>(i) * c + ch) * hw;
      S* d = dst + ch * (n * hw) + i * hw;
      for (int64_t k = 0; k < hw; ++k) d[k] = s[k];
    }
}

}  // namespace

template <typename S>
BasicTensor<S> conv2d(Context<S>& ctx, BasicTensor<S> input,
                      BasicTensor<S> weight, BasicTensor<S> bias, int stride,
                      int padding) {
  ConvGeom g = conv_geometry("conv2d", input, weight, bias, false, stride, padding);
  const int64_t ohw = static_cast<int64_t>(g.oh) * g.ow;
  const int64_t cols = g.n * ohw;
  const int64_t rows = static_cast<int64_t>(g.ci) * g.kh * g.kw;

  // The weight gradient needs exactly this unfolding again. Handing the
  // buffer to the tape closure avoids rebuilding it in the backward pass
  // (input values cannot change in between).
  std::shared_ptr<ColLease<S>> col_keep;
  S* col_ptr;
  if (ctx.grad_enabled() && weight.needs_grad()) {
    col_keep = std::make_shared<ColLease<S>>(rows * cols);
    col_ptr = col_keep->buf.data();
  } else {
    col_ptr = sized_scratch<S>(0, rows * cols).data();
  }
  for (int i = 0; i < g.n; ++i)
    im2col_image(input.data() + static_cast<int64_t>(i) * g.ci * g.h * g.w,
                 g.ci, g.h, g.w, g.kh, g.kw, g.stride, g.padding, g.oh, g.ow,
                 col_ptr + i * ohw, cols);

  // The weight tensor is already the row-major [Co x rows] matrix.
  auto& out_mat = sized_scratch<S>(2, static_cast<int64_t>(g.co) * cols);
  detail::gemm(false, false, g.co, static_cast<int>(cols),
               static_cast<int>(rows), S(1), weight.data(),
               static_cast<int>(rows), col_ptr, static_cast<int>(cols), S(0),
               out_mat.data(), static_cast<int>(cols));

  auto out = BasicTensor<S>::zeros({g.n, g.co, g.oh, g.ow});
  for (int i = 0; i < g.n; ++i)
    for (int co = 0; co < g.co; ++co) {
      const S* src = out_mat.data() + co * cols + i * ohw;
      S* dst = out.data() + (static_cast<int64_t>(i) * g.co + co) * ohw;
      S b = bias.data()[co];
      for (int64_t k = 0; k < ohw; ++k) dst[k] = src[k] + b;
    }
  debug_finite(out, "conv2d");

  record_op(ctx, "conv2d", {&input, &weight, &bias}, out,
            [input, weight, bias, out, g, col_keep]() mutable {
              if (!out.grad_allocated()) return;
              const int64_t ohw = static_cast<int64_t>(g.oh) * g.ow;
              const int64_t cols = g.n * ohw;
              const int64_t rows = static_cast<int64_t>(g.ci) * g.kh * g.kw;
              const S* go = out.grad();

              auto& go_mat = sized_scratch<S>(2, static_cast<int64_t>(g.co) * cols);
              for (int i = 0; i < g.n; ++i)
                for (int co = 0; co < g.co; ++co) {
                  const S* src = go + (static_cast<int64_t>(i) * g.co + co) * ohw;
                  S* dst = go_mat.data() + co * cols + i * ohw;
                  for (int64_t k = 0; k < ohw; ++k) dst[k] = src[k];
                }

              if (bias.needs_grad()) {
                S* gb = bias.grad();
                for (int co = 0; co < g.co; ++co) {
                  double acc = 0.0;
                  const S* row = go_mat.data() + co * cols;
                  for (int64_t k = 0; k < cols; ++k)
                    acc += static_cast<double>(row[k]);
                  gb[co] += static_cast<S>(acc);
                }
              }

              if (weight.needs_grad()) {
                S* col_ptr;
                if (col_keep != nullptr) {
                  col_ptr = col_keep->buf.data();
                } else {
                  col_ptr = sized_scratch<S>(0, rows * cols).data();
                  for (int i = 0; i < g.n; ++i)
                    im2col_image(input.data() +
                                     static_cast<int64_t>(i) * g.ci * g.h * g.w,
                                 g.ci, g.h, g.w, g.kh, g.kw, g.stride,
                                 g.padding, g.oh, g.ow, col_ptr + i * ohw,
                                 cols);
                }
                auto& gw = sized_scratch<S>(5, static_cast<int64_t>(g.co) * rows);
                detail::gemm(false, true, g.co, static_cast<int>(rows),
                             static_cast<int>(cols), S(1), go_mat.data(),
                             static_cast<int>(cols), col_ptr,
                             static_cast<int>(cols), S(0), gw.data(),
                             static_cast<int>(rows));
                S* wg = weight.grad();
                for (int64_t i = 0; i < static_cast<int64_t>(g.co) * rows; ++i)
                  wg[i] += gw[i];
              }

              if (input.needs_grad()) {
                const int64_t hw_in = static_cast<int64_t>(g.h) * g.w;
                int flip_pad = g.kh - 1 - g.padding;
                if (g.stride == 1 && g.kh == g.kw && flip_pad >= 0) {
                  // Stride-1 input gradient is itself a correlation: unfold
                  // the output gradient and hit it with rotated weights. One
                  // dense GEMM, no scatter pass.
                  const int64_t rows2 = static_cast<int64_t>(g.co) * g.kh * g.kw;
                  const int64_t cols2 = g.n * hw_in;
                  auto& gocol = sized_scratch<S>(3, rows2 * cols2);
                  for (int i = 0; i < g.n; ++i)
                    im2col_image(go + static_cast<int64_t>(i) * g.co * ohw,
                                 g.co, g.oh, g.ow, g.kh, g.kw, 1, flip_pad,
                                 g.h, g.w, gocol.data() + i * hw_in, cols2);
                  auto& wrot = sized_scratch<S>(1, g.ci * rows2);
                  const S* ws = weight.data();
                  for (int ci = 0; ci < g.ci; ++ci)
                    for (int co = 0; co < g.co; ++co)
                      for (int ky = 0; ky < g.kh; ++ky)
                        for (int kx = 0; kx < g.kw; ++kx)
                          wrot[ci * rows2 +
                               (static_cast<int64_t>(co) * g.kh + ky) * g.kw +
                               kx] =
                              ws[((static_cast<int64_t>(co) * g.ci + ci) *
                                      g.kh +
                                  (g.kh - 1 - ky)) *
                                     g.kw +
                                 (g.kw - 1 - kx)];
                  auto& gin = sized_scratch<S>(4, g.ci * cols2);
                  detail::gemm(false, false, g.ci, static_cast<int>(cols2),
                               static_cast<int>(rows2), S(1), wrot.data(),
                               static_cast<int>(rows2), gocol.data(),
                               static_cast<int>(cols2), S(0), gin.data(),
                               static_cast<int>(cols2));
                  S* ig = input.grad();
                  for (int i = 0; i < g.n; ++i)
                    for (int ch = 0; ch < g.ci; ++ch) {
                      const S* src = gin.data() + ch * cols2 + i * hw_in;
                      S* dst =
                          ig + (static_cast<int64_t>(i) * g.ci + ch) * hw_in;
                      for (int64_t k = 0; k < hw_in; ++k) dst[k] += src[k];
                    }
                } else {
                  auto& colg = sized_scratch<S>(3, rows * cols);
                  detail::gemm(true, false, static_cast<int>(rows),
                               static_cast<int>(cols), g.co, S(1),
                               weight.data(), static_cast<int>(rows),
                               go_mat.data(), static_cast<int>(cols), S(0),
                               colg.data(), static_cast<int>(cols));
                  const int64_t img_n = g.ci * hw_in;
                  auto& acc = sized_scratch<S>(4, g.n * img_n);
                  std::fill(acc.begin(), acc.begin() + g.n * img_n, S(0));
                  for (int i = 0; i < g.n; ++i)
                    col2im_image(colg.data() + i * ohw, cols, g.ci, g.h, g.w,
                                 g.kh, g.kw, g.stride, g.padding, g.oh, g.ow,
                                 acc.data() + i * img_n);
                  S* ig = input.grad();
                  for (int64_t i = 0; i < g.n * img_n; ++i) ig[i] += acc[i];
                }
              }
            });
  return out;
}

template <typename S>
BasicTensor<S> conv_transpose2d(Context<S>& ctx, BasicTensor<S> input,
                                BasicTensor<S> weight, BasicTensor<S> bias,
                                int stride, int padding) {
  ConvGeom g = conv_geometry("conv_transpose2d", input, weight, bias, true,
                             stride, padding);
  const int64_t hw = static_cast<int64_t>(g.h) * g.w;
  const int64_t cols = g.n * hw;  // columns index input grid positions
  const int64_t rows = static_cast<int64_t>(g.co) * g.kh * g.kw;

  auto& x_mat = sized_scratch<S>(5, static_cast<int64_t>(g.ci) * cols);
  gather_channel_major(input.data(), g.n, g.ci, hw, x_mat.data());

  // The weight tensor is already the row-major [Ci x rows] matrix.
  auto& colg = sized_scratch<S>(3, rows * cols);
  detail::gemm(true, false, static_cast<int>(rows), static_cast<int>(cols),
               g.ci, S(1), weight.data(), static_cast<int>(rows), x_mat.data(),
               static_cast<int>(cols), S(0), colg.data(),
               static_cast<int>(cols));

  const int64_t img_n = static_cast<int64_t>(g.co) * g.oh * g.ow;
  auto& acc = sized_scratch<S>(4, g.n * img_n);
  std::fill(acc.begin(), acc.begin() + g.n * img_n, S(0));
  for (int i = 0; i < g.n; ++i)
    col2im_image(colg.data() + i * hw, cols, g.co, g.oh, g.ow, g.kh, g.kw,
                 g.stride, g.padding, g.h, g.w, acc.data() + i * img_n);

  auto out = BasicTensor<S>::zeros({g.n, g.co, g.oh, g.ow});
  const int64_t out_hw = static_cast<int64_t>(g.oh) * g.ow;
  for (int i = 0; i < g.n; ++i)
    for (int co = 0; co < g.co; ++co) {
      const S* src = acc.data() + i * img_n + co * out_hw;
      S* dst = out.data() + (static_cast<int64_t>(i) * g.co + co) * out_hw;
      S b = bias.data()[co];
      for (int64_t k = 0; k < out_hw; ++k) dst[k] = src[k] + b;
    }
  debug_finite(out, "conv_transpose2d");

  record_op(
      ctx, "conv_transpose2d", {&input, &weight, &bias}, out,
      [input, weight, bias, out, g]() mutable {
        if (!out.grad_allocated()) return;
        const int64_t hw = static_cast<int64_t>(g.h) * g.w;
        const int64_t cols = g.n * hw;
        const int64_t rows = static_cast<int64_t>(g.co) * g.kh * g.kw;
        const S* go = out.grad();

        if (bias.needs_grad()) {
          const int64_t out_hw = static_cast<int64_t>(g.oh) * g.ow;
          S* gb = bias.grad();
          for (int co = 0; co < g.co; ++co) {
            double acc = 0.0;
            for (int i = 0; i < g.n; ++i) {
              const S* src = go + (static_cast<int64_t>(i) * g.co + co) * out_hw;
              for (int64_t k = 0; k < out_hw; ++k)
                acc += static_cast<double>(src[k]);
            }
            gb[co] += static_cast<S>(acc);
          }
        }

        // Unfold the output gradient with the forward-conv geometry; both
        // remaining gradients are GEMMs against it.
        auto& col = sized_scratch<S>(0, rows * cols);
        for (int i = 0; i < g.n; ++i)
          im2col_image(go + static_cast<int64_t>(i) * g.co * g.oh * g.ow, g.co,
                       g.oh, g.ow, g.kh, g.kw, g.stride, g.padding, g.h, g.w,
                       col.data() + i * hw, cols);

        if (input.needs_grad()) {
          auto& gin = sized_scratch<S>(2, static_cast<int64_t>(g.ci) * cols);
          detail::gemm(false, false, g.ci, static_cast<int>(cols),
                       static_cast<int>(rows), S(1), weight.data(),
                       static_cast<int>(rows), col.data(),
                       static_cast<int>(cols), S(0), gin.data(),
                       static_cast<int>(cols));
          S* ig = input.grad();
          for (int i = 0; i < g.n; ++i)
            for (int ch = 0; ch < g.ci; ++ch) {
              const S* src = gin.data() + ch * cols + i * hw;
              S* dst = ig + (static_cast<int64_t>(i) * g.ci + ch) * hw;
              for (int64_t k = 0; k < hw; ++k) dst[k] += src[k];
            }
        }

        if (weight.needs_grad()) {
          auto& x_mat = sized_scratch<S>(5, static_cast<int64_t>(g.ci) * cols);
          gather_channel_major(input.data(), g.n, g.ci, hw, x_mat.data());
          auto& gw = sized_scratch<S>(4, static_cast<int64_t>(g.ci) * rows);
          detail::gemm(false, true, g.ci, static_cast<int>(rows),
                       static_cast<int>(cols), S(1), x_mat.data(),
                       static_cast<int>(cols), col.data(),
                       static_cast<int>(cols), S(0), gw.data(),
                       static_cast<int>(rows));
          S* wg = weight.grad();
          for (int64_t i = 0; i < static_cast<int64_t>(g.ci) * rows; ++i)
            wg[i] += gw[i];
        }
      });
  return out;
}

template <typename S>
BasicTensor<S> naive_conv_oracle(const BasicTensor<S>& input,
                                 const BasicTensor<S>& weight,
                                 const BasicTensor<S>& bias, int stride,
                                 int padding) {
  ConvGeom g = conv_geometry("naive_conv_oracle", input, weight, bias, false,
                             stride, padding);
  auto out = BasicTensor<S>::zeros({g.n, g.co, g.oh, g.ow});
  const S* x = input.data();
  const S* w = weight.data();
  for (int i = 0; i < g.n; ++i)
    for (int co = 0; co < g.co; ++co)
      for (int oy = 0; oy < g.oh; ++oy)
        for (int ox = 0; ox < g.ow; ++ox) {
          double acc = static_cast<double>(bias.data()[co]);
          for (int ci = 0; ci < g.ci; ++ci)
            for (int ky = 0; ky < g.kh; ++ky) {
              int iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                int ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= g.w) continue;
                acc += static_cast<double>(
                           x[((static_cast<int64_t>(i) * g.ci + ci) * g.h + iy) *
                                 g.w +
                             ix]) *
                       static_cast<double>(
                           w[((static_cast<int64_t>(co) * g.ci + ci) * g.kh + ky) *
                                 g.kw +
                             kx]);
              }
            }
          out.at({i, co, oy, ox}) = static_cast<S>(acc);
        }
  return out;
}

#define LUXFORGE_INSTANTIATE_CONV(S)                                          \
  template BasicTensor<S> conv2d<S>(Context<S>&, BasicTensor<S>,              \
                                    BasicTensor<S>, BasicTensor<S>, int, int); \
  template BasicTensor<S> conv_transpose2d<S>(Context<S>&, BasicTensor<S>,    \
                                              BasicTensor<S>, BasicTensor<S>, \
                                              int, int);                      \
  template BasicTensor<S> naive_conv_oracle<S>(                               \
      const BasicTensor<S>&, const BasicTensor<S>&, const BasicTensor<S>&,    \
      int, int);

LUXFORGE_INSTANTIATE_CONV(float)
LUXFORGE_INSTANTIATE_CONV(double)

}  // namespace luxforge
