#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "luxforge/layers.hpp"
#include "luxforge/pam.hpp"

#include "oracles.hpp"

using namespace luxforge;
namespace orc = luxforge::oracles;

TEST_CASE("parameter count is exact") {
  PamNetwork pam(7);
  CHECK(count_trainable<float>(pam) == 484907);
}

TEST_CASE("correction map is exactly zero at initialization") {
  PamNetwork pam(3);
  Ctx ctx{nullptr};
  auto x = orc::random_tensor<float>({2, 3, 32, 32}, 5, 0.0, 1.0);
  auto f = pam.forward(ctx, x, BnMode::train);
  CHECK(f.shape() == x.shape());
  for (float v : f.values()) CHECK(v == 0.0f);
}

TEST_CASE("input size must be a multiple of 16") {
  PamNetwork pam(1);
  Ctx ctx{nullptr};
  CHECK_THROWS_AS(pam.forward(ctx, Tensor::zeros({1, 3, 24, 32}), BnMode::train),
                  shape_error);
  CHECK_THROWS_AS(pam.forward(ctx, Tensor::zeros({1, 3, 32, 20}), BnMode::train),
                  shape_error);
  CHECK(PamNetwork::kSizeMultiple == 16);
}

TEST_CASE("batch norm statistics lifecycle") {
  PamNetwork pam(2);
  CHECK_FALSE(pam.stats_ready());

  Ctx ctx{nullptr};
  auto x = orc::random_tensor<float>({2, 3, 16, 16}, 6, 0.0, 1.0);

  SUBCASE("eval before any train batch throws") {
    CHECK_THROWS_AS(pam.forward(ctx, x, BnMode::eval), value_error);
  }

  SUBCASE("one train batch readies every bn layer") {
    (void)pam.forward(ctx, x, BnMode::train);
    CHECK(pam.stats_ready());
    int counters = 0;
    pam.visit_counters([&](const std::string& name, int64_t& v) {
      CHECK(v == 1);
      CHECK(name.find("batches_seen") != std::string::npos);
      ++counters;
    });
    CHECK(counters == 8);  // 4 encoder + 4 decoder bn layers
    (void)pam.forward(ctx, x, BnMode::eval);  // now legal
  }

  SUBCASE("stat updates can be suppressed") {
    Ctx frozen{nullptr};
    frozen.update_running_stats = false;
    (void)pam.forward(frozen, x, BnMode::train);
    CHECK_FALSE(pam.stats_ready());
  }
}

TEST_CASE("bottleneck batch norm rejects a single sample") {
  // A lone 16x16 image collapses to one spatial cell at the bottleneck, so
  // train-mode variance is undefined there.
  PamNetwork pam(4);
  Ctx ctx{nullptr};
  auto x = Tensor::zeros({1, 3, 16, 16});
  CHECK_THROWS_AS(pam.forward(ctx, x, BnMode::train), value_error);
}

TEST_CASE("encoder head features translate with the input") {
  // The first encoder conv has a 3x3 receptive field and stride 1, so
  // shifting the input by (dy,dx) shifts its features, away from borders.
  PamNetwork pam(9);
  const int h = 32, w = 32, dy = 8, dx = 5;
  auto base = orc::random_tensor<float>({1, 3, h, w}, 17, 0.0, 1.0);
  auto shifted = Tensor::zeros({1, 3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y + dy < h; ++y)
      for (int x = 0; x + dx < w; ++x)
        shifted.at({0, c, y + dy, x + dx}) = base.at({0, c, y, x});

  Ctx ctx{nullptr};
  auto fa = pam.encoder_head_features(ctx, base);
  auto fb = pam.encoder_head_features(ctx, shifted);
  CHECK(fa.dim(1) == 16);

  double worst = 0;
  for (int c = 0; c < fa.dim(1); ++c)
    for (int y = 1; y + dy < h - 1; ++y)
      for (int x = 1; x + dx < w - 1; ++x)
        worst = std::max(worst,
                         std::fabs(static_cast<double>(fa.at({0, c, y, x})) -
                                   fb.at({0, c, y + dy, x + dx})));
  CHECK(worst < 1e-6);
}

TEST_CASE("construction is deterministic per seed") {
  PamNetwork a(5), b(5), c(8);
  auto sum = [](PamNetwork& n) {
    double s = 0;
    n.visit_tensors([&](const std::string&, Tensor& t, bool) {
      for (float v : t.values()) s += std::fabs(static_cast<double>(v));
    });
    return s;
  };
  CHECK(sum(a) == sum(b));
  CHECK(sum(a) != sum(c));
}

TEST_CASE("randomized head produces a nonzero correction that backprops") {
  PamNetworkT<double> pam(6);
  Rng rng(31);
  pam.visit_tensors([&](const std::string& name, BasicTensor<double>& t, bool) {
    if (name.find("head") != std::string::npos)
      for (auto& v : t.values()) v = rng.uniform(-0.25, 0.25);
  });

  BasicTape<double> tape;
  Context<double> ctx{&tape};
  auto x = orc::random_tensor<double>({2, 3, 16, 16}, 23, 0.0, 1.0);
  auto f = pam.forward(ctx, x, BnMode::train);
  CHECK(orc::max_abs(f) > 0.0);

  auto loss = mean_all(ctx, mul(ctx, f, f));
  tape.backward(loss);

  // Every encoder and decoder conv weight sees gradient (skip connections
  // and the upsampling path are all live).
  int live = 0, total = 0;
  pam.visit_tensors([&](const std::string& name, BasicTensor<double>& t,
                        bool trainable) {
    if (!trainable || name.find(".weight") == std::string::npos) return;
    ++total;
    if (!t.grad_allocated()) return;
    for (int64_t i = 0; i < t.numel(); ++i)
      if (t.grad()[i] != 0.0) {
        ++live;
        return;
      }
  });
  CHECK(total == 17);  // 8 encoder convs, 4 upconvs, 4 decoder convs, head
  CHECK(live == total);
}

TEST_CASE("pam_compose clamps the sum into [0,1]") {
  Ctx ctx{nullptr};
  auto base = Tensor::from_values({1, 1, 1, 3}, {0.2f, 0.9f, 0.05f});
  auto corr = Tensor::from_values({1, 1, 1, 3}, {0.3f, 0.4f, -0.2f});
  auto y = pam_compose(ctx, base, corr);
  CHECK(y.values()[0] == doctest::Approx(0.5f));
  CHECK(y.values()[1] == 1.0f);
  CHECK(y.values()[2] == 0.0f);
}
