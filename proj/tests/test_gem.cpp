#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "luxforge/enhance.hpp"
#include "luxforge/gem.hpp"
#include "luxforge/layers.hpp"

#include "oracles.hpp"

using namespace luxforge;
namespace orc = luxforge::oracles;

TEST_CASE("parameter count is exact") {
  GemNetwork gem(7);
  CHECK(count_trainable<float>(gem) == 33699);
}

TEST_CASE("construction is deterministic per seed") {
  GemNetwork a(5), b(5), c(6);
  std::vector<float> va, vb, vc;
  auto grab = [](GemNetwork& g, std::vector<float>& out) {
    g.visit_tensors([&](const std::string&, Tensor& t, bool) {
      out.insert(out.end(), t.values().begin(), t.values().end());
    });
  };
  grab(a, va);
  grab(b, vb);
  grab(c, vc);
  CHECK(va == vb);
  CHECK(va != vc);
}

TEST_CASE("gains are exactly one at initialization") {
  GemNetwork gem(1);
  Ctx ctx{nullptr};
  auto thumb = orc::random_tensor<float>({3, 3, 32, 32}, 2, 0.0, 1.0);
  auto gains = gem.predict(ctx, thumb);
  CHECK(gains.shape() == Shape{3, 3, 1, 1});
  for (float v : gains.values()) CHECK(v == 1.0f);
}

TEST_CASE("predict validates the thumbnail shape") {
  GemNetwork gem(1);
  Ctx ctx{nullptr};
  auto bad = Tensor::zeros({1, 3, 16, 16});
  CHECK_THROWS_AS(gem.predict(ctx, bad), shape_error);
  CHECK_THROWS_AS(gem.predict(ctx, Tensor::zeros({1, 1, 32, 32})), shape_error);
}

TEST_CASE("gains stay inside the exponential bound") {
  GemNetwork gem(3);
  // Blow up the head so the pre-activation saturates both ways.
  Rng rng(99);
  gem.visit_tensors([&](const std::string& name, Tensor& t, bool) {
    if (name.find("conv6") != std::string::npos)
      for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-50, 50));
  });
  Ctx ctx{nullptr};
  auto thumb = orc::random_tensor<float>({4, 3, 32, 32}, 8, 0.0, 1.0);
  auto gains = gem.predict(ctx, thumb);
  const float lo = std::exp(-gem.log_bound()), hi = std::exp(gem.log_bound());
  bool saturated = false;
  for (float v : gains.values()) {
    CHECK(v >= lo);
    CHECK(v <= hi);
    if (v == lo || v == hi) saturated = true;
  }
  CHECK(saturated);  // the perturbation was large enough to hit the rails
  CHECK(gem.log_bound() == doctest::Approx(std::log(64.0)));
}

TEST_CASE("gem_downsample produces a 32x32 thumbnail") {
  Ctx ctx{nullptr};
  auto big = Tensor::full({2, 3, 96, 64}, 0.37f);
  auto thumb = gem_downsample(ctx, big);
  CHECK(thumb.shape() == Shape{2, 3, 32, 32});
  for (float v : thumb.values()) CHECK(v == doctest::Approx(0.37f));

  // Already 32x32 passes through untouched.
  auto exact = orc::random_tensor<float>({1, 3, 32, 32}, 3, 0, 1);
  auto same = gem_downsample(ctx, exact);
  CHECK(orc::max_abs_diff(same, exact) == 0.0);
}

TEST_CASE("gem_apply is an unclamped per-channel rescale") {
  Ctx ctx{nullptr};
  auto x = Tensor::from_values({1, 3, 1, 2}, {0.5f, 0.25f, 0.1f, 0.2f, 0.8f, 0.9f});
  auto gains = Tensor::from_values({1, 3, 1, 1}, {2.0f, 10.0f, 0.5f});
  auto y = gem_apply(ctx, x, gains);
  CHECK(y.values() == std::vector<float>{1.0f, 0.5f, 1.0f, 2.0f, 0.4f, 0.45f});
}

TEST_CASE("extract_coefficients unpacks per-image triples") {
  auto gains = Tensor::from_values({2, 3, 1, 1}, {1, 2, 3, 4, 5, 6});
  auto cs = extract_coefficients(gains);
  REQUIRE(cs.size() == 2);
  CHECK(cs[0].r == 1.0f);
  CHECK(cs[0].g == 2.0f);
  CHECK(cs[0].b == 3.0f);
  CHECK(cs[1].r == 4.0f);
  CHECK(cs[1].g == 5.0f);
  CHECK(cs[1].b == 6.0f);
}

TEST_CASE("full gem path is a bitwise identity at init") {
  GemNetwork gem(11);
  Ctx ctx{nullptr};
  auto img = orc::random_tensor<float>({2, 3, 48, 48}, 21, 0.0, 1.0);
  auto thumb = gem_downsample(ctx, img);
  auto gains = gem_predict(ctx, gem, thumb);
  auto out = gem_apply(ctx, img, gains);
  CHECK(orc::max_abs_diff(out, img) == 0.0);
}

TEST_CASE("training signal reaches every gem parameter") {
  // After randomizing the zero-init head, each conv's weight must receive a
  // nonzero gradient from a scalar loss on the gains.
  GemNetworkT<double> gem(13);
  Rng rng(4);
  gem.visit_tensors([&](const std::string& name, BasicTensor<double>& t, bool) {
    if (name.find("conv6") != std::string::npos)
      for (auto& v : t.values()) v = rng.uniform(-0.3, 0.3);
  });
  BasicTape<double> tape;
  Context<double> ctx{&tape};
  auto thumb = orc::random_tensor<double>({2, 3, 32, 32}, 1, 0.0, 1.0);
  tape.register_tensor(thumb);
  auto gains = gem.predict(ctx, thumb);
  auto loss = mean_all(ctx, mul(ctx, gains, gains));
  tape.backward(loss);
  int checked = 0;
  gem.visit_tensors([&](const std::string& name, BasicTensor<double>& t,
                        bool trainable) {
    if (!trainable) return;
    REQUIRE_MESSAGE(t.grad_allocated(), name);
    double mx = 0;
    for (int64_t i = 0; i < t.numel(); ++i)
      mx = std::max(mx, std::fabs(t.grad()[i]));
    if (name.find(".weight") != std::string::npos) {
      CHECK_MESSAGE(mx > 0.0, name);
      ++checked;
    }
  });
  CHECK(checked == 6);
}
