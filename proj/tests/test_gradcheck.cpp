#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>

#include "luxforge/gradcheck.hpp"
#include "luxforge/ops.hpp"

#include "oracles.hpp"

using namespace luxforge;
namespace orc = luxforge::oracles;

namespace {

// Elementwise square with a deliberately adjustable backward rule; scale 1.0
// is correct, anything else is a planted bug the checker must catch.
BasicTensor<double> square_with_scale(Context<double>& ctx,
                                      BasicTensor<double> x, double scale) {
  auto out = BasicTensor<double>::zeros(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    out.data()[i] = x.values()[i] * x.values()[i];
  if (ctx.grad_enabled() && x.needs_grad()) {
    out.storage()->needs_grad = true;
    ctx.tape->record("square", {&x}, out, [x, out, scale]() mutable {
      if (!out.grad_allocated()) return;
      for (int64_t i = 0; i < x.numel(); ++i)
        x.grad()[i] += scale * 2.0 * x.values()[i] * out.grad()[i];
    });
  }
  return out;
}

}  // namespace

TEST_CASE("a correct gradient passes") {
  auto x = orc::random_tensor<double>({2, 3, 4, 4}, 5, 0.2, 1.5);
  GradCheckConfig cfg;
  cfg.min_probes = 40;
  auto res = check_gradients(
      "square_ok",
      [x](Context<double>& ctx) mutable {
        return mean_all(ctx, square_with_scale(ctx, x, 1.0));
      },
      {x}, cfg);
  CHECK(res.pass);
  CHECK(res.probes >= 40);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("a planted backward bug is caught") {
  auto x = orc::random_tensor<double>({2, 3, 4, 4}, 6, 0.2, 1.5);
  GradCheckConfig cfg;
  cfg.min_probes = 40;
  for (double scale : {1.1, 0.9, -1.0}) {
    auto res = check_gradients(
        "square_bug",
        [x, scale](Context<double>& ctx) mutable {
          return mean_all(ctx, square_with_scale(ctx, x, scale));
        },
        {x}, cfg);
    CHECK_FALSE(res.pass);
    CHECK(res.max_rel_err > 1e-2);
  }
}

TEST_CASE("kinked functions are probed around their kinks without failing") {
  // Values straddle the relu kink; the curvature filter must skip those
  // probes rather than report phantom errors.
  auto x = orc::random_tensor<double>({1, 4, 8, 8}, 7, -0.05, 0.05);
  GradCheckConfig cfg;
  cfg.min_probes = 60;
  auto res = check_gradients(
      "relu_kinks",
      [x](Context<double>& ctx) mutable { return mean_all(ctx, relu(ctx, x)); },
      {x}, cfg);
  CHECK(res.pass);
  CHECK(res.probes >= 60);
  CHECK(res.skipped > 0);
}

TEST_CASE("multiple leaves are all probed") {
  auto a = orc::random_tensor<double>({1, 1, 3, 3}, 8, 0.5, 1.0);
  auto b = orc::random_tensor<double>({1, 1, 3, 3}, 9, 0.5, 1.0);
  GradCheckConfig cfg;
  cfg.min_probes = 18;  // both nine-element leaves must contribute
  auto res = check_gradients(
      "mul_two_leaves",
      [a, b](Context<double>& ctx) mutable {
        return mean_all(ctx, mul(ctx, a, b));
      },
      {a, b}, cfg);
  CHECK(res.pass);
  CHECK(res.probes == 18);
}

TEST_CASE("non-scalar losses are rejected") {
  auto x = orc::random_tensor<double>({1, 1, 2, 2}, 10);
  CHECK_THROWS_AS(check_gradients(
                      "vector_loss",
                      [x](Context<double>& ctx) mutable { return relu(ctx, x); },
                      {x}),
                  value_error);
}

TEST_CASE("the full suite passes at reduced probe count") {
  GradCheckConfig cfg;
  cfg.min_probes = 20;  // the acceptance run uses the full 100
  auto results = run_gradient_suite(cfg);
  CHECK(results.size() >= 18);

  std::set<std::string> names;
  double worst = 0.0;
  for (const auto& r : results) {
    CHECK_MESSAGE(r.pass, r.summary());
    CHECK(r.probes >= 20);
    names.insert(r.name);
    worst = std::max(worst, r.max_rel_err);
  }
  CHECK(worst < 1e-4);

  // The suite must cover the core ops and the whole trained path.
  for (const char* expected :
       {"conv2d", "conv_transpose2d", "batchnorm2d_train", "relu",
        "bilinear_resize", "softmax_ce", "gem_apply", "enhance_recognizer"})
    CHECK_MESSAGE(names.count(expected) == 1, expected);
}
