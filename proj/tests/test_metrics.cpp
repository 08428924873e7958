#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include <json.hpp>

#include "luxforge/metrics.hpp"

#include "oracles.hpp"

using namespace luxforge;
namespace orc = luxforge::oracles;
namespace fs = std::filesystem;

TEST_CASE("confusion matrix accumulation") {
  ConfusionMatrix cm(3);
  LabelMap truth = orc::make_labels(1, 2, 2, {0, 1, 2, kIgnoreLabel});
  LabelMap pred = orc::make_labels(1, 2, 2, {0, 2, 2, 1});
  cm.add(truth, pred);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(1, 2) == 1);
  CHECK(cm.at(2, 2) == 1);
  // The ignored pixel contributes nothing anywhere.
  int64_t total = 0;
  for (int64_t v : cm.counts) total += v;
  CHECK(total == 3);

  ConfusionMatrix other(3);
  other.add(truth, pred);
  cm.merge(other);
  CHECK(cm.at(0, 0) == 2);

  LabelMap bad = orc::make_labels(1, 2, 2, {0, 1, 2, 3});
  CHECK_THROWS_AS(cm.add(bad, pred), value_error);
  LabelMap shapebad = orc::make_labels(1, 1, 2, {0, 1});
  CHECK_THROWS_AS(cm.add(shapebad, pred), shape_error);
  LabelMap badpred = orc::make_labels(1, 2, 2, {0, -2, 2, 1});
  CHECK_THROWS_AS(cm.add(truth, badpred), value_error);
}

TEST_CASE("miou frozen example") {
  // Two classes: IoU_0 = 3/(3+1+2), IoU_1 = 6/(6+2+1) -> mean 7/12.
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 3;
  cm.at(0, 1) = 1;
  cm.at(1, 0) = 2;
  cm.at(1, 1) = 6;
  IouResult r = miou(cm);
  CHECK(r.per_class[0] == doctest::Approx(0.5));
  CHECK(r.per_class[1] == doctest::Approx(2.0 / 3.0));
  CHECK(r.mean == doctest::Approx(7.0 / 12.0));
}

TEST_CASE("miou excludes classes absent from truth and prediction") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 5;
  cm.at(1, 0) = 5;  // class 2 never appears
  IouResult r = miou(cm);
  CHECK(r.present[0]);
  CHECK(r.present[1]);
  CHECK_FALSE(r.present[2]);
  CHECK(r.mean == doctest::Approx((0.5 + 0.0) / 2.0));

  ConfusionMatrix empty(3);
  CHECK_THROWS_AS(miou(empty), value_error);
}

TEST_CASE("miou matches the brute-force oracle on random maps") {
  std::mt19937_64 eng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<LabelMap> truth, pred;
    ConfusionMatrix cm(5);
    for (int m = 0; m < 4; ++m) {
      LabelMap t(1, 6, 7), p(1, 6, 7);
      for (auto& v : t.values) {
        v = static_cast<int32_t>(eng() % 6);
        if (v == 5) v = kIgnoreLabel;
      }
      for (auto& v : p.values) v = static_cast<int32_t>(eng() % 5);
      cm.add(t, p);
      truth.push_back(t);
      pred.push_back(p);
    }
    double lib = miou(cm).mean;
    double ref = orc::miou_from_maps_oracle(truth, pred, 5, kIgnoreLabel);
    CHECK(lib == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("mean pixel intensity uses the 0-255 scale") {
  auto t = Tensor::full({2, 3, 4, 4}, 0.5f);
  CHECK(mean_pixel_intensity(t) == doctest::Approx(127.5));
  auto z = Tensor::zeros({1, 3, 2, 2});
  CHECK(mean_pixel_intensity(z) == 0.0);
}

TEST_CASE("parameter counts are exact and in budget") {
  Enhancer enh(1);
  RecognizerNetwork rec(kNumClasses, 1);
  ParamCounts pc = count_params(enh, rec);
  CHECK(pc.gem == 33699);
  CHECK(pc.pam == 484907);
  CHECK(pc.enhancer() == 518606);
  CHECK(pc.recognizer == 43637);
  CHECK(pc.total() == 518606 + 43637);
  CHECK(pc.enhancer() >= 450000);
  CHECK(pc.enhancer() <= 700000);
}

TEST_CASE("latency benchmark returns ordered percentiles") {
  Enhancer enh(2);
  RecognizerNetwork rec(kNumClasses, 2);
  // Warm both models' batch norm stats so eval mode works.
  Ctx ctx{nullptr};
  auto warm = orc::random_tensor<float>({2, 3, 32, 32}, 3, 0.0, 1.0);
  (void)enh.pam.forward(ctx, warm, BnMode::train);
  (void)rec.forward(ctx, warm, BnMode::train);

  LatencyReport rep = benchmark_latency(enh, rec, 32, 32, 5, 50);
  CHECK(rep.h == 32);
  CHECK(rep.enhancer.iters == 50);
  for (const LatencyStats* s : {&rep.enhancer, &rep.recognizer, &rep.combined}) {
    CHECK(s->mean_ms > 0.0);
    CHECK(s->p50_ms > 0.0);
    CHECK(s->p50_ms <= s->p95_ms);
  }
}

TEST_CASE("evaluation over a dataset splits by subset") {
  // Tiny corpus; recognizer stays untrained (random logits are fine here).
  std::string dir = (fs::temp_directory_path() / "luxforge_metrics_corpus").string();
  fs::remove_all(dir);
  CorpusConfig ccfg;
  ccfg.out_dir = dir;
  ccfg.train_count = 1;
  ccfg.val_count = 1;
  ccfg.test_count = 18;
  ccfg.seed = 9;
  build_corpus(ccfg);
  Dataset ds = load_dataset(dir, "test");

  RecognizerNetwork rec(kNumClasses, 4);
  Ctx ctx{nullptr};
  auto warm = orc::random_tensor<float>({2, 3, 16, 16}, 5, 0.0, 1.0);
  (void)rec.forward(ctx, warm, BnMode::train);
  rec.freeze();

  EvalReport raw = evaluate_on_dataset(nullptr, rec, ds, 4);
  CHECK(raw.all.valid);
  CHECK(raw.all.images == 18);
  CHECK(raw.normal.images + raw.hard.images + raw.extreme.images == 18);
  CHECK(raw.all.miou >= 0.0);
  CHECK(raw.all.miou <= 1.0);
  CHECK(raw.overall.per_class.size() == kNumClasses);

  // An identity-at-init enhancer must reproduce the raw scores exactly.
  Enhancer enh(3);
  (void)enh.pam.forward(ctx, warm, BnMode::train);
  EvalReport enhanced = evaluate_on_dataset(&enh, rec, ds, 4);
  CHECK(enhanced.all.miou == doctest::Approx(raw.all.miou));
  fs::remove_all(dir);
}

TEST_CASE("report serialization") {
  MetricsReport r;
  r.params.gem = 1;
  r.params.pam = 2;
  r.params.recognizer = 3;
  r.eval.all = {4, 0.5, true};
  r.eval.normal = {2, 0.75, true};
  r.config_hash = "abc";
  r.checkpoint_id = "ck";
  std::string js = metrics_report_json(r);
  auto parsed = nlohmann::json::parse(js);
  CHECK(parsed["params"]["gem"] == 1);
  CHECK(parsed["miou"]["LL-A"]["miou"] == doctest::Approx(0.5));
  CHECK(parsed["miou"]["LL-H"]["miou"].is_null());  // invalid subset

  std::string table = metrics_report_table(r);
  CHECK(table.find("LL-A") != std::string::npos);
  CHECK(table.find("LL-N") != std::string::npos);
}
