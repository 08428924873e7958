#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "luxforge/synth.hpp"

#include "oracles.hpp"

using namespace luxforge;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// Nearest-mean color classification accuracy, with class means estimated from
// the labels themselves. High accuracy means the label map follows visually
// distinct regions.
double color_separability(const LabeledScene& s) {
  std::array<std::array<double, 3>, kNumClasses> mean{};
  std::array<int, kNumClasses> count{};
  const int hw = s.h * s.w;
  for (int p = 0; p < hw; ++p) {
    int cls = s.labels[p];
    ++count[cls];
    for (int c = 0; c < 3; ++c) mean[cls][c] += s.image[c * hw + p];
  }
  for (int k = 0; k < kNumClasses; ++k)
    if (count[k] > 0)
      for (int c = 0; c < 3; ++c) mean[k][c] /= count[k];

  int hits = 0;
  for (int p = 0; p < hw; ++p) {
    int best = -1;
    double best_d = 1e300;
    for (int k = 0; k < kNumClasses; ++k) {
      if (count[k] == 0) continue;
      double d = 0;
      for (int c = 0; c < 3; ++c) {
        double diff = s.image[c * hw + p] - mean[k][c];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best == s.labels[p]) ++hits;
  }
  return static_cast<double>(hits) / hw;
}

}  // namespace

TEST_CASE("scene generation is deterministic and well formed") {
  SceneSpec spec;
  auto a = generate_scene(123, spec);
  auto b = generate_scene(123, spec);
  CHECK(a.image == b.image);
  CHECK(a.labels == b.labels);

  auto c = generate_scene(124, spec);
  CHECK(a.image != c.image);

  CHECK(a.h == 16);
  CHECK(a.w == 16);
  std::set<int32_t> classes;
  for (float v : a.image) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  for (int32_t l : a.labels) {
    CHECK(l >= 0);
    CHECK(l < kNumClasses);
    classes.insert(l);
  }
  CHECK(classes.count(0) == 1);  // background always visible
  CHECK(classes.size() >= 2);    // at least one shape landed
}

TEST_CASE("labels follow visually distinct regions") {
  SceneSpec spec;
  double acc = 0;
  const int scenes = 20;
  for (int i = 0; i < scenes; ++i)
    acc += color_separability(generate_scene(1000 + i, spec));
  acc /= scenes;
  // Shape colors are saturated against a gray textured background, so a
  // nearest-mean classifier should get nearly every pixel.
  CHECK(acc > 0.95);
}

TEST_CASE("scene spec validation") {
  SceneSpec bad;
  bad.width = 20;  // not a multiple of 16
  CHECK_THROWS_AS(generate_scene(1, bad), value_error);
  SceneSpec badk;
  badk.k_classes = 1;
  CHECK_THROWS_AS(generate_scene(1, badk), value_error);
}

TEST_CASE("darken identity and determinism") {
  auto s = generate_scene(5, SceneSpec{});
  DarkeningParams id;  // exposure 1, gamma 1, no noise
  auto out = darken(s.image, id);
  CHECK(out == s.image);

  DarkeningParams noisy{0.3f, 1.8f, 0.01f, 0.02f, 99};
  auto n1 = darken(s.image, noisy);
  auto n2 = darken(s.image, noisy);
  CHECK(n1 == n2);
  noisy.seed = 100;
  auto n3 = darken(s.image, noisy);
  CHECK(n1 != n3);
  for (float v : n1) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("darkening is monotone in exposure and gamma") {
  auto s = generate_scene(6, SceneSpec{});
  auto mean_at = [&](float exposure, float gamma) {
    DarkeningParams p;
    p.exposure_scale = exposure;
    p.gamma = gamma;
    return quantized_mean_intensity(darken(s.image, p));
  };
  CHECK(mean_at(0.8f, 1.0f) > mean_at(0.4f, 1.0f));
  CHECK(mean_at(0.4f, 1.0f) > mean_at(0.1f, 1.0f));
  CHECK(mean_at(0.5f, 1.0f) > mean_at(0.5f, 2.5f));
}

TEST_CASE("quantized mean intensity matches byte rounding") {
  std::vector<float> img = {0.0f, 1.0f, 0.5f, 0.25f, -0.5f, 2.0f};
  double expect = (0 + 255 + 128 + 64 + 0 + 255) / 6.0;
  CHECK(quantized_mean_intensity(img) == doctest::Approx(expect));
}

TEST_CASE("subset constants") {
  CHECK(subset_target_intensity(SubsetTag::normal) == doctest::Approx(3.2));
  CHECK(subset_target_intensity(SubsetTag::hard) == doctest::Approx(1.4));
  CHECK(subset_target_intensity(SubsetTag::extreme) == doctest::Approx(0.9));
  CHECK(std::string(subset_name(SubsetTag::normal)) == "LL-N");
  CHECK(std::string(subset_name(SubsetTag::hard)) == "LL-H");
  CHECK(std::string(subset_name(SubsetTag::extreme)) == "LL-E");

  CHECK(nearest_subset(3.0) == SubsetTag::normal);
  CHECK(nearest_subset(2.0) == SubsetTag::hard);
  CHECK(nearest_subset(1.16) == SubsetTag::hard);
  CHECK(nearest_subset(1.0) == SubsetTag::extreme);
  CHECK(nearest_subset(0.2) == SubsetTag::extreme);
}

TEST_CASE("severity parsing round-trips") {
  SeverityMix m;
  CHECK(parse_severity("mix", &m));
  CHECK(m == SeverityMix::mix);
  CHECK(parse_severity("extreme", &m));
  CHECK(m == SeverityMix::extreme);
  CHECK_FALSE(parse_severity("bogus", &m));
  CHECK(std::string(severity_name(SeverityMix::hard)) == "hard");
}

TEST_CASE("exposure calibration hits the target intensity") {
  SceneSpec spec;
  std::vector<LabeledScene> sample;
  for (int i = 0; i < 8; ++i) sample.push_back(generate_scene(40 + i, spec));

  for (const auto& preset : default_presets()) {
    double target = subset_target_intensity(preset.tag);
    float exposure = calibrate_exposure(sample, preset, target, 7);
    CHECK(exposure > 0.0f);
    CHECK(exposure <= 1.0f);

    double mean = 0;
    for (size_t i = 0; i < sample.size(); ++i) {
      DarkeningParams p;
      p.exposure_scale = exposure;
      p.gamma = preset.gamma;
      p.read_noise_sigma = preset.read_noise_sigma;
      p.shot_noise_scale = preset.shot_noise_scale;
      p.seed = derive_seed(7, "calibrate", i);
      mean += quantized_mean_intensity(darken(sample[i].image, p));
    }
    mean /= static_cast<double>(sample.size());
    CHECK(mean == doctest::Approx(target).epsilon(0.15));
  }
}

TEST_CASE("corpus build, reload and manifest") {
  std::string dir = (fs::temp_directory_path() / "luxforge_synth_corpus").string();
  fs::remove_all(dir);

  CorpusConfig cfg;
  cfg.out_dir = dir;
  cfg.train_count = 30;
  cfg.val_count = 9;
  cfg.test_count = 12;
  cfg.seed = 3;
  build_corpus(cfg);

  SUBCASE("files and manifest") {
    for (const char* split : {"train", "val", "test"})
      for (const char* kind : {"bright", "dark", "labels"})
        CHECK(fs::exists(fs::path(dir) / split / kind / "000000.png"));

    std::ifstream mf(fs::path(dir) / "manifest.jsonl");
    int lines = 0;
    std::string line;
    while (std::getline(mf, line))
      if (!line.empty()) ++lines;
    CHECK(lines == 1 + 30 + 9 + 12);  // header plus one line per scene
  }

  SUBCASE("reload round-trip") {
    Dataset ds = load_dataset(dir, "val");
    CHECK(ds.h == 16);
    CHECK(ds.w == 16);
    CHECK(ds.k_classes == kNumClasses);
    REQUIRE(ds.items.size() == 9);
    for (const auto& item : ds.items) {
      CHECK(item.bright.h == 16);
      CHECK(item.dark.w == 16);
      CHECK(item.labels.size() == 16 * 16);
      // Recorded intensity matches the dark PNG that was written.
      std::vector<float> chw(item.dark.chw.begin(), item.dark.chw.end());
      CHECK(quantized_mean_intensity(chw) ==
            doctest::Approx(item.mean_intensity).epsilon(1e-6));
      CHECK(item.subset == nearest_subset(item.mean_intensity));
    }
  }

  SUBCASE("severity mix covers all three subsets with jittered exposures") {
    Dataset ds = load_dataset(dir, "train");
    SubsetPartition part = partition_by_intensity(ds);
    CHECK(part.normal.size() + part.hard.size() + part.extreme.size() ==
          ds.items.size());
    CHECK(part.normal.size() > 0);
    CHECK(part.hard.size() > 0);
    CHECK(part.extreme.size() > 0);

    // Per-image exposure jitter: intensities within a subset are not all equal.
    std::set<double> distinct;
    for (int idx : part.hard) distinct.insert(ds.items[idx].mean_intensity);
    CHECK(distinct.size() > 1);

    // Subset means stay near their targets.
    for (auto [ids, tag] : {std::pair{&part.normal, SubsetTag::normal},
                            {&part.hard, SubsetTag::hard},
                            {&part.extreme, SubsetTag::extreme}}) {
      double mean = 0;
      for (int idx : *ids) mean += ds.items[idx].mean_intensity;
      mean /= static_cast<double>(ids->size());
      CHECK(std::fabs(mean - subset_target_intensity(tag)) < 0.5);
    }
  }

  SUBCASE("rebuilding with the same config is bit-identical") {
    std::string dir2 =
        (fs::temp_directory_path() / "luxforge_synth_corpus2").string();
    fs::remove_all(dir2);
    CorpusConfig cfg2 = cfg;
    cfg2.out_dir = dir2;
    build_corpus(cfg2);
    for (const char* rel : {"train/bright/000004.png", "train/dark/000011.png",
                            "train/labels/000004.png", "test/dark/000007.png"})
      CHECK(read_bytes(fs::path(dir) / rel) == read_bytes(fs::path(dir2) / rel));
    CHECK(read_bytes(fs::path(dir) / "manifest.jsonl") ==
          read_bytes(fs::path(dir2) / "manifest.jsonl"));
    fs::remove_all(dir2);
  }

  SUBCASE("refusing to clobber without force") {
    CHECK_THROWS_AS(build_corpus(cfg), io_error);
    CorpusConfig forced = cfg;
    forced.force = true;
    forced.train_count = 2;
    forced.val_count = 1;
    forced.test_count = 1;
    build_corpus(forced);  // allowed
    Dataset ds = load_dataset(dir, "train");
    CHECK(ds.items.size() == 2);
  }
}

TEST_CASE("single-severity corpus stays in its subset") {
  std::string dir = (fs::temp_directory_path() / "luxforge_synth_extreme").string();
  fs::remove_all(dir);
  CorpusConfig cfg;
  cfg.out_dir = dir;
  cfg.train_count = 10;
  cfg.val_count = 2;
  cfg.test_count = 2;
  cfg.seed = 5;
  cfg.severity = SeverityMix::extreme;
  build_corpus(cfg);
  Dataset ds = load_dataset(dir, "train");
  for (const auto& item : ds.items) CHECK(item.subset == SubsetTag::extreme);
  fs::remove_all(dir);
}
