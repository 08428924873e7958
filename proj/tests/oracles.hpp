#pragma once

// Independent reference implementations the tests compare the library
// against. Everything here is written in the most literal way possible (plain
// loops, double accumulation) and must stay free of library internals beyond
// the tensor container itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "luxforge/tensor.hpp"

namespace luxforge::oracles {

inline LabelMap make_labels(int n, int h, int w, std::vector<int32_t> v) {
  LabelMap m(n, h, w);
  m.values = std::move(v);
  return m;
}

template <typename S>
BasicTensor<S> random_tensor(const Shape& shape, uint64_t seed,
                             double lo = -1.0, double hi = 1.0) {
  auto t = BasicTensor<S>::zeros(shape);
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<S>(dist(eng));
  return t;
}

template <typename S>
double max_abs_diff(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a.values()[i]) -
                              static_cast<double>(b.values()[i])));
  return m;
}

template <typename S>
double max_abs(const BasicTensor<S>& a) {
  double m = 0.0;
  for (S v : a.values()) m = std::max(m, std::fabs(static_cast<double>(v)));
  return m;
}

// Half-pixel bilinear resize, channel by channel, no edge tricks beyond
// clamping the sample coordinates.
template <typename S>
std::vector<double> bilinear_oracle(const BasicTensor<S>& x, int oh, int ow) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> out(static_cast<size_t>(n) * c * oh * ow);
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;
  size_t idx = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          double fy = (y + 0.5) * sy - 0.5;
          double fx = (xo + 0.5) * sx - 0.5;
          int y0 = static_cast<int>(std::floor(fy));
          int x0 = static_cast<int>(std::floor(fx));
          double wy = fy - y0, wx = fx - x0;
          auto sample = [&](int yy, int xx) {
            yy = std::clamp(yy, 0, h - 1);
            xx = std::clamp(xx, 0, w - 1);
            return static_cast<double>(x.at({i, ch, yy, xx}));
          };
          out[idx++] = (1 - wy) * ((1 - wx) * sample(y0, x0) +
                                   wx * sample(y0, x0 + 1)) +
                       wy * ((1 - wx) * sample(y0 + 1, x0) +
                             wx * sample(y0 + 1, x0 + 1));
        }
  return out;
}

// Mean pixelwise softmax cross entropy in double, ignoring `ignore` labels.
template <typename S>
double softmax_ce_oracle(const BasicTensor<S>& logits, const LabelMap& labels,
                         int ignore) {
  const int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2),
            w = logits.dim(3);
  double total = 0.0;
  int64_t count = 0;
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int32_t lab = labels.at(i, y, x);
        if (lab == ignore) continue;
        double denom = 0.0;
        for (int j = 0; j < k; ++j)
          denom += std::exp(static_cast<double>(logits.at({i, j, y, x})));
        total += std::log(denom) -
                 static_cast<double>(logits.at({i, lab, y, x}));
        ++count;
      }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

// Per-pixel argmax with ties to the lowest class index.
template <typename S>
LabelMap argmax_oracle(const BasicTensor<S>& logits) {
  LabelMap out;
  out.n = logits.dim(0);
  out.h = logits.dim(2);
  out.w = logits.dim(3);
  const int k = logits.dim(1);
  out.values.resize(static_cast<size_t>(out.n) * out.h * out.w);
  size_t idx = 0;
  for (int i = 0; i < out.n; ++i)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        int best = 0;
        for (int j = 1; j < k; ++j)
          if (logits.at({i, j, y, x}) > logits.at({i, best, y, x})) best = j;
        out.values[idx++] = best;
      }
  return out;
}

// Dataset-level mean IoU straight from label maps: per class, scan every
// pixel pair and count TP/FP/FN; classes absent on both sides are excluded.
inline double miou_from_maps_oracle(const std::vector<LabelMap>& truth,
                                    const std::vector<LabelMap>& pred, int k,
                                    int ignore) {
  double sum = 0.0;
  int classes = 0;
  for (int cls = 0; cls < k; ++cls) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t m = 0; m < truth.size(); ++m)
      for (size_t p = 0; p < truth[m].values.size(); ++p) {
        int32_t t = truth[m].values[p];
        if (t == ignore) continue;
        int32_t q = pred[m].values[p];
        if (t == cls && q == cls) ++tp;
        if (t != cls && q == cls) ++fp;
        if (t == cls && q != cls) ++fn;
      }
    if (tp + fp + fn == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    ++classes;
  }
  return sum / classes;
}

// One Adam step on plain vectors, textbook recurrence.
struct AdamOracleState {
  std::vector<double> m, v;
  int64_t t = 0;
};

inline void adam_oracle_step(std::vector<double>& p,
                             const std::vector<double>& g,
                             AdamOracleState& st, double lr, double b1,
                             double b2, double eps) {
  if (st.m.empty()) {
    st.m.assign(p.size(), 0.0);
    st.v.assign(p.size(), 0.0);
  }
  ++st.t;
  for (size_t i = 0; i < p.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1 - b1) * g[i];
    st.v[i] = b2 * st.v[i] + (1 - b2) * g[i] * g[i];
    double mh = st.m[i] / (1 - std::pow(b1, st.t));
    double vh = st.v[i] / (1 - std::pow(b2, st.t));
    p[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

}  // namespace luxforge::oracles
