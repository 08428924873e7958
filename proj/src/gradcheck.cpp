#include "luxforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "luxforge/common.hpp"
#include "luxforge/enhance.hpp"
#include "luxforge/recognizer.hpp"
#include "luxforge/rng.hpp"

namespace luxforge {

std::string GradCheckResult::summary() const {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "%-22s %s  probes %4d  skipped %3d  max %.3e  mean %.3e",
                name.c_str(), pass ? "pass" : "FAIL", probes, skipped,
                max_rel_err, mean_rel_err);
  return buf;
}

GradCheckResult check_gradients(const std::string& name, const ScalarFn& fn,
                                std::vector<BasicTensor<double>> leaves,
                                const GradCheckConfig& cfg) {
  GradCheckResult res;
  res.name = name;
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();  // stale accumulation would distort the analytic side
  }

  BasicTape<double> tape;
  Context<double> ctx;
  ctx.tape = &tape;
  ctx.update_running_stats = false;
  BasicTensor<double> loss = fn(ctx);
  if (loss.numel() != 1)
    throw value_error(cat("gradcheck ", name, ": loss is not a scalar"));
  double f0 = loss.item();
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) {
    std::vector<double> g(static_cast<size_t>(l.numel()), 0.0);
    if (l.grad_allocated())
      std::copy(l.grad(), l.grad() + l.numel(), g.begin());
    analytic.push_back(std::move(g));
  }

  Context<double> eval_ctx;  // no tape
  eval_ctx.update_running_stats = false;
  auto eval = [&] { return fn(eval_ctx).item(); };

  // All probe positions in one flat list, partially shuffled on demand.
  std::vector<std::pair<int, int64_t>> positions;
  for (size_t li = 0; li < leaves.size(); ++li)
    for (int64_t e = 0; e < leaves[li].numel(); ++e)
      positions.emplace_back(static_cast<int>(li), e);

  Rng rng(derive_seed(cfg.seed, cat("gradcheck.", name)));
  double err_sum = 0.0;
  // A kept probe's kink-induced relative error is bounded by this ratio, so
  // keep it well under the pass tolerance.
  const double curvature_limit = cfg.tolerance * 0.25;
  // Differences below this carry too much roundoff to form a quotient.
  const double signal_floor = 1e-9 * std::max(1.0, std::fabs(f0));

  for (size_t i = 0; i < positions.size() && res.probes < cfg.min_probes; ++i) {
    size_t j = static_cast<size_t>(rng.uniform_int(
        static_cast<int>(i), static_cast<int>(positions.size()) - 1));
    std::swap(positions[i], positions[j]);
    auto [li, elem] = positions[i];
    double* slot = leaves[static_cast<size_t>(li)].data() + elem;
    double x0 = *slot;

    double h = cfg.step * std::max(1.0, std::fabs(x0));
    bool valid = false;
    bool starved = false;
    double numeric = 0.0;
    double first = 0.0;
    for (int attempt = 0; attempt < 4; ++attempt) {
      *slot = x0 + h;
      double f_plus = eval();
      *slot = x0 - h;
      double f_minus = eval();
      *slot = x0;
      first = f_plus - f_minus;
      double second = f_plus + f_minus - 2.0 * f0;
      if (std::fabs(first) < signal_floor) {
        starved = true;  // the true derivative is too small to measure
        break;
      }
      if (std::fabs(second) <= curvature_limit * (std::fabs(first) + 1e-12)) {
        numeric = first / (2.0 * h);
        valid = true;
        break;
      }
      h *= 0.5;
    }
    double a = analytic[static_cast<size_t>(li)][static_cast<size_t>(elem)];
    if (starved) {
      // Still catch an analytic gradient far above what the measurement
      // allows; agreement near zero is accepted without a quotient.
      if (std::fabs(a) * 2.0 * h > 10.0 * (std::fabs(first) + signal_floor)) {
        res.max_rel_err = std::max(res.max_rel_err, 1.0);
        err_sum += 1.0;
        ++res.probes;
      } else {
        ++res.skipped;
      }
      continue;
    }
    if (!valid) {
      ++res.skipped;
      continue;
    }
    double rel = std::fabs(a - numeric) /
                 std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    if (std::getenv("LUXFORGE_GRADCHECK_DEBUG") && rel > 1e-5)
      std::fprintf(stderr,
                   "  [dbg] leaf %d elem %lld x0 % .3e a % .3e n % .3e h %.1e\n",
                   li, static_cast<long long>(elem), x0, a, numeric, h);
    res.max_rel_err = std::max(res.max_rel_err, rel);
    err_sum += rel;
    ++res.probes;
  }

  res.mean_rel_err = res.probes > 0 ? err_sum / res.probes : 0.0;
  int required = static_cast<int>(std::min<int64_t>(
      cfg.min_probes, static_cast<int64_t>(positions.size())));
  res.pass = res.probes >= required && res.max_rel_err < cfg.tolerance;
  return res;
}

namespace {

using T = BasicTensor<double>;

T rand_tensor(Shape shape, Rng& rng, double lo, double hi) {
  T t = T::zeros(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Projects a tensor to a scalar through fixed random weights; mean_all alone
// would give several ops a degenerate (constant) gradient.
T project(Context<double>& ctx, T x, const T& w) {
  return mean_all(ctx, mul(ctx, x, w));
}

LabelMap rand_labels(int n, int h, int w, int k, Rng& rng, bool some_ignored) {
  LabelMap m(n, h, w);
  for (auto& v : m.values) {
    v = static_cast<int32_t>(rng.uniform_int(0, k - 1));
    if (some_ignored && rng.chance(0.1)) v = kIgnoreLabel;
  }
  return m;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(const GradCheckConfig& cfg) {
  std::vector<GradCheckResult> out;
  Rng rng(derive_seed(cfg.seed, "gradcheck.suite"));

  {  // conv2d, stride 1 with padding
    T x = rand_tensor({2, 3, 8, 8}, rng, -1.0, 1.0);
    T w = rand_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
    T b = rand_tensor({4}, rng, -0.2, 0.2);
    T p = rand_tensor({2, 4, 8, 8}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "conv2d",
        [=](Context<double>& ctx) mutable {
          return project(ctx, conv2d(ctx, x, w, b, 1, 1), p);
        },
        {x, w, b}, cfg));
  }
  {  // conv2d, stride 2
    T x = rand_tensor({2, 3, 9, 9}, rng, -1.0, 1.0);
    T w = rand_tensor({5, 3, 3, 3}, rng, -0.5, 0.5);
    T b = rand_tensor({5}, rng, -0.2, 0.2);
    T p = rand_tensor({2, 5, 5, 5}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "conv2d_s2",
        [=](Context<double>& ctx) mutable {
          return project(ctx, conv2d(ctx, x, w, b, 2, 1), p);
        },
        {x, w, b}, cfg));
  }
  {  // conv_transpose2d, the PAM upsampling shape
    T x = rand_tensor({2, 4, 5, 5}, rng, -1.0, 1.0);
    T w = rand_tensor({4, 3, 2, 2}, rng, -0.5, 0.5);
    T b = rand_tensor({3}, rng, -0.2, 0.2);
    T p = rand_tensor({2, 3, 10, 10}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "conv_transpose2d",
        [=](Context<double>& ctx) mutable {
          return project(ctx, conv_transpose2d(ctx, x, w, b, 2, 0), p);
        },
        {x, w, b}, cfg));
  }
  {  // batchnorm2d in train mode
    T x = rand_tensor({4, 3, 6, 6}, rng, -2.0, 2.0);
    T gamma = rand_tensor({3}, rng, 0.5, 1.5);
    T beta = rand_tensor({3}, rng, -0.5, 0.5);
    T p = rand_tensor({4, 3, 6, 6}, rng, -1.0, 1.0);
    auto state = std::make_shared<BatchNormState<double>>();
    state->running_mean = T::zeros({3});
    state->running_var = T::full({3}, 1.0);
    out.push_back(check_gradients(
        "batchnorm2d_train",
        [=](Context<double>& ctx) mutable {
          return project(
              ctx, batchnorm2d(ctx, x, gamma, beta, *state, BnMode::train), p);
        },
        {x, gamma, beta}, cfg));
  }
  {  // batchnorm2d in eval mode, stats accumulated first
    T x = rand_tensor({4, 3, 6, 6}, rng, -2.0, 2.0);
    T gamma = rand_tensor({3}, rng, 0.5, 1.5);
    T beta = rand_tensor({3}, rng, -0.5, 0.5);
    T p = rand_tensor({4, 3, 6, 6}, rng, -1.0, 1.0);
    auto state = std::make_shared<BatchNormState<double>>();
    state->running_mean = T::zeros({3});
    state->running_var = T::full({3}, 1.0);
    {
      Context<double> warm;
      warm.update_running_stats = true;
      T sample = rand_tensor({4, 3, 6, 6}, rng, -2.0, 2.0);
      (void)batchnorm2d(warm, sample, gamma, beta, *state, BnMode::train);
    }
    out.push_back(check_gradients(
        "batchnorm2d_eval",
        [=](Context<double>& ctx) mutable {
          return project(
              ctx, batchnorm2d(ctx, x, gamma, beta, *state, BnMode::eval), p);
        },
        {x, gamma, beta}, cfg));
  }
  {  // relu
    T x = rand_tensor({2, 3, 10, 10}, rng, -1.0, 1.0);
    T p = rand_tensor({2, 3, 10, 10}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "relu",
        [=](Context<double>& ctx) mutable {
          return project(ctx, relu(ctx, x), p);
        },
        {x}, cfg));
  }
  {  // bilinear resize, up and down, non-integer ratios
    T x = rand_tensor({2, 3, 7, 9}, rng, -1.0, 1.0);
    T p_up = rand_tensor({2, 3, 13, 16}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "bilinear_resize",
        [=](Context<double>& ctx) mutable {
          return project(ctx, bilinear_resize(ctx, x, 13, 16), p_up);
        },
        {x}, cfg));
  }
  {  // elementwise add, same shape
    T a = rand_tensor({2, 4, 6, 6}, rng, -1.0, 1.0);
    T b = rand_tensor({2, 4, 6, 6}, rng, -1.0, 1.0);
    T p = rand_tensor({2, 4, 6, 6}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "add",
        [=](Context<double>& ctx) mutable {
          return project(ctx, add(ctx, a, b), p);
        },
        {a, b}, cfg));
  }
  {  // add with per-channel broadcast
    T a = rand_tensor({2, 4, 6, 6}, rng, -1.0, 1.0);
    T b = rand_tensor({2, 4, 1, 1}, rng, -1.0, 1.0);
    T p = rand_tensor({2, 4, 6, 6}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "add_channel",
        [=](Context<double>& ctx) mutable {
          return project(ctx, add(ctx, a, b), p);
        },
        {a, b}, cfg));
  }
  {  // elementwise mul
    T a = rand_tensor({2, 4, 6, 6}, rng, -1.0, 1.0);
    T b = rand_tensor({2, 4, 6, 6}, rng, -1.0, 1.0);
    T p = rand_tensor({2, 4, 6, 6}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "mul",
        [=](Context<double>& ctx) mutable {
          return project(ctx, mul(ctx, a, b), p);
        },
        {a, b}, cfg));
  }
  {  // scalar_mul
    T a = rand_tensor({2, 3, 8, 8}, rng, -1.0, 1.0);
    T p = rand_tensor({2, 3, 8, 8}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "scalar_mul",
        [=](Context<double>& ctx) mutable {
          return project(ctx, scalar_mul(ctx, a, 0.37), p);
        },
        {a}, cfg));
  }
  {  // clamp01 over a range that saturates both ends
    T x = rand_tensor({2, 3, 8, 8}, rng, -0.5, 1.5);
    T p = rand_tensor({2, 3, 8, 8}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "clamp01",
        [=](Context<double>& ctx) mutable {
          return project(ctx, clamp01(ctx, x), p);
        },
        {x}, cfg));
  }
  {  // bounded_exp with active clamps at both ends
    T z = rand_tensor({2, 200, 1, 1}, rng, -6.0, 6.0);
    T p = rand_tensor({2, 200, 1, 1}, rng, -1.0, 1.0);
    double log_bound = std::log(64.0);
    out.push_back(check_gradients(
        "bounded_exp",
        [=](Context<double>& ctx) mutable {
          return project(ctx, bounded_exp(ctx, z, log_bound), p);
        },
        {z}, cfg));
  }
  {  // global_avg_pool
    T x = rand_tensor({2, 8, 5, 5}, rng, -1.0, 1.0);
    T p = rand_tensor({2, 8, 1, 1}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "global_avg_pool",
        [=](Context<double>& ctx) mutable {
          return project(ctx, global_avg_pool(ctx, x), p);
        },
        {x}, cfg));
  }
  {  // pixelwise cross entropy, with ignored pixels
    T logits = rand_tensor({2, 5, 6, 6}, rng, -2.0, 2.0);
    LabelMap labels = rand_labels(2, 6, 6, 5, rng, true);
    out.push_back(check_gradients(
        "softmax_ce",
        [=](Context<double>& ctx) mutable {
          return softmax_cross_entropy_pixelwise(ctx, logits, labels,
                                                 kIgnoreLabel);
        },
        {logits}, cfg));
  }
  {  // gem_apply: image times per-channel gains
    T img = rand_tensor({2, 3, 6, 6}, rng, 0.0, 1.0);
    T gains = rand_tensor({2, 3, 1, 1}, rng, 0.2, 3.0);
    T p = rand_tensor({2, 3, 6, 6}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "gem_apply",
        [=](Context<double>& ctx) mutable {
          return project(ctx, gem_apply(ctx, img, gains), p);
        },
        {img, gains}, cfg));
  }
  {  // concat + reflect pad + crop, chained
    T a = rand_tensor({2, 3, 6, 6}, rng, -1.0, 1.0);
    T b = rand_tensor({2, 2, 6, 6}, rng, -1.0, 1.0);
    T p = rand_tensor({2, 5, 7, 9}, rng, -1.0, 1.0);
    out.push_back(check_gradients(
        "concat_pad_crop",
        [=](Context<double>& ctx) mutable {
          T c = concat_channels(ctx, a, b);
          c = reflect_pad2d(ctx, c, 3, 4);
          c = crop2d(ctx, c, 7, 9);
          return project(ctx, c, p);
        },
        {a, b}, cfg));
  }
  {  // full pipeline: dark batch -> enhancer -> frozen-style recognizer -> loss
    auto enh = std::make_shared<EnhancerT<double>>(11, true, true);
    auto rec = std::make_shared<RecognizerNetworkT<double>>(5, 12);
    Rng fill(derive_seed(cfg.seed, "gradcheck.fill"));
    // The zero-init output layers would zero out every upstream gradient;
    // give them small random values so the whole graph carries signal.
    enh->visit_tensors([&](const std::string& n, T& t, bool) {
      if (n == "gem.conv6.weight" || n == "gem.conv6.bias" ||
          n == "pam.head.weight" || n == "pam.head.bias")
        for (auto& v : t.values()) v = fill.uniform(-0.2, 0.2);
    });
    set_trainable<double>(*rec, false);  // gradients flow through, not into
    T input = rand_tensor({2, 3, 16, 16}, rng, 0.01, 0.35);
    LabelMap labels = rand_labels(2, 16, 16, 5, rng, false);
    std::vector<T> leaves;
    leaves.push_back(input);
    enh->visit_tensors([&](const std::string&, T& t, bool trainable) {
      if (trainable) leaves.push_back(t);
    });
    out.push_back(check_gradients(
        "enhance_recognizer",
        [=](Context<double>& ctx) mutable {
          auto res = enhance(ctx, *enh, input, BnMode::train);
          T logits = rec->forward(ctx, res.output, BnMode::train);
          return model_specific_loss(ctx, logits, labels);
        },
        leaves, cfg));
  }
  return out;
}

}  // namespace luxforge
