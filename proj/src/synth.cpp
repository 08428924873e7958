#include "luxforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "luxforge/common.hpp"
#include "luxforge/threading.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace luxforge {

namespace {

struct Palette {
  float r, g, b;
};
// Class 0 is the textured gray background.
constexpr Palette kPalette[kNumClasses] = {
    {0.45f, 0.45f, 0.45f},  // background base (texture added separately)
    {0.80f, 0.15f, 0.15f},  // red
    {0.15f, 0.80f, 0.15f},  // green
    {0.15f, 0.15f, 0.80f},  // blue
    {0.80f, 0.80f, 0.15f},  // yellow
};

struct Box {
  int x0, x1, y0, y1;  // inclusive, includes a 1px separation margin
  bool intersects(const Box& o) const {
    return !(x1 < o.x0 || o.x1 < x0 || y1 < o.y0 || o.y1 < y0);
  }
};

struct ShapeDraft {
  bool ellipse;
  int cls, cx, cy, hx, hy;
};

void render_shape(LabeledScene& s, const ShapeDraft& d, Rng& rng,
                  double hue_jitter) {
  const Palette& p = kPalette[d.cls];
  float gain[3];
  for (float& g : gain)
    g = static_cast<float>(1.0 + rng.uniform(-hue_jitter, hue_jitter));
  float color[3] = {std::clamp(p.r * gain[0], 0.0f, 1.0f),
                    std::clamp(p.g * gain[1], 0.0f, 1.0f),
                    std::clamp(p.b * gain[2], 0.0f, 1.0f)};
  const int64_t hw = static_cast<int64_t>(s.h) * s.w;
  for (int y = d.cy - d.hy; y <= d.cy + d.hy; ++y)
    for (int x = d.cx - d.hx; x <= d.cx + d.hx; ++x) {
      if (y < 0 || y >= s.h || x < 0 || x >= s.w) continue;
      if (d.ellipse) {
        double ny = (y - d.cy) / (d.hy + 0.5);
        double nx = (x - d.cx) / (d.hx + 0.5);
        if (nx * nx + ny * ny > 1.0) continue;
      }
      int64_t pix = static_cast<int64_t>(y) * s.w + x;
      s.labels[static_cast<size_t>(pix)] = d.cls;
      for (int c = 0; c < 3; ++c)
        s.image[static_cast<size_t>(c * hw + pix)] = color[c];
    }
}

bool box_is_free(const LabeledScene& s, const Box& b) {
  for (int y = std::max(0, b.y0); y <= std::min(s.h - 1, b.y1); ++y)
    for (int x = std::max(0, b.x0); x <= std::min(s.w - 1, b.x1); ++x)
      if (s.labels[static_cast<size_t>(y) * s.w + x] != 0) return false;
  return true;
}

}  // namespace

const char* subset_name(SubsetTag t) {
  switch (t) {
    case SubsetTag::normal: return "LL-N";
    case SubsetTag::hard: return "LL-H";
    default: return "LL-E";
  }
}

double subset_target_intensity(SubsetTag t) {
  switch (t) {
    case SubsetTag::normal: return 3.2;
    case SubsetTag::hard: return 1.4;
    default: return 0.9;
  }
}

SubsetTag nearest_subset(double mean_255) {
  SubsetTag best = SubsetTag::normal;
  double best_d = 1e300;
  for (SubsetTag t : {SubsetTag::normal, SubsetTag::hard, SubsetTag::extreme}) {
    double d = std::fabs(mean_255 - subset_target_intensity(t));
    if (d < best_d) {
      best_d = d;
      best = t;
    }
  }
  return best;
}

LabeledScene generate_scene(uint64_t seed, const SceneSpec& spec) {
  if (spec.width < 16 || spec.height < 16 || spec.width % 16 != 0 ||
      spec.height % 16 != 0)
    throw value_error(cat("generate_scene: size ", spec.width, "x", spec.height,
                          " must be a positive multiple of 16"));
  if (spec.k_classes < 2 || spec.k_classes > kNumClasses)
    throw value_error(cat("generate_scene: k_classes ", spec.k_classes,
                          " outside [2,", kNumClasses, "]"));
  if (spec.min_shapes < 1 || spec.max_shapes < spec.min_shapes)
    throw value_error("generate_scene: bad shape count range");

  LabeledScene s;
  s.h = spec.height;
  s.w = spec.width;
  s.seed = seed;
  const int64_t hw = static_cast<int64_t>(s.h) * s.w;
  s.image.resize(static_cast<size_t>(3 * hw));
  s.labels.assign(static_cast<size_t>(hw), 0);

  Rng rng(derive_seed(seed, "scene"));

  // Textured background: low-frequency sine wave plus speckle, slight tint.
  double base = rng.uniform(0.40, 0.50);
  double amp = rng.uniform(0.06, 0.12);
  double fx = rng.uniform(0.5, 2.0) / s.w;
  double fy = rng.uniform(0.5, 2.0) / s.h;
  double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double tint[3];
  for (double& t : tint) t = 1.0 + rng.uniform(-0.04, 0.04);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      double v = base +
                 amp * std::sin(2.0 * std::numbers::pi * (fx * x + fy * y) +
                                phase) +
                 rng.uniform(-0.03, 0.03);
      for (int c = 0; c < 3; ++c)
        s.image[static_cast<size_t>(c * hw + y * s.w + x)] =
            static_cast<float>(std::clamp(v * tint[c], 0.05, 0.90));
    }

  int max_half = std::clamp(s.w / 6, 1, 5);
  int target = rng.uniform_int(spec.min_shapes, spec.max_shapes);
  std::vector<Box> placed;
  int placed_count = 0;
  for (int i = 0; i < target; ++i) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      ShapeDraft d;
      d.ellipse = rng.chance(0.5);
      d.cls = rng.uniform_int(1, spec.k_classes - 1);
      d.hx = rng.uniform_int(1, max_half);
      d.hy = rng.uniform_int(1, max_half);
      d.cx = rng.uniform_int(d.hx, s.w - 1 - d.hx);
      d.cy = rng.uniform_int(d.hy, s.h - 1 - d.hy);
      Box b{d.cx - d.hx - 1, d.cx + d.hx + 1, d.cy - d.hy - 1, d.cy + d.hy + 1};
      bool clash = false;
      for (const Box& o : placed) clash = clash || b.intersects(o);
      if (clash) continue;
      placed.push_back(b);
      render_shape(s, d, rng, spec.hue_jitter);
      ++placed_count;
      break;
    }
  }
  // Dense canvases can defeat random placement; sweep for a free spot so
  // every scene carries at least two shapes.
  for (int y = 1; y < s.h - 1 && placed_count < 2; ++y)
    for (int x = 1; x < s.w - 1 && placed_count < 2; ++x) {
      Box b{x - 2, x + 2, y - 2, y + 2};
      if (!box_is_free(s, b)) continue;
      ShapeDraft d{false, rng.uniform_int(1, spec.k_classes - 1), x, y, 1, 1};
      placed.push_back(b);
      render_shape(s, d, rng, spec.hue_jitter);
      ++placed_count;
    }
  return s;
}

std::vector<float> darken(const std::vector<float>& chw,
                          const DarkeningParams& p) {
  if (!(p.exposure_scale > 0.0f && p.exposure_scale <= 1.0f))
    throw value_error(cat("darken: exposure_scale ", p.exposure_scale,
                          " outside (0,1]"));
  if (p.gamma < 1.0f)
    throw value_error(cat("darken: gamma ", p.gamma, " must be >= 1"));
  if (p.read_noise_sigma < 0.0f || p.shot_noise_scale < 0.0f)
    throw value_error("darken: negative noise scale");

  std::vector<float> out(chw.size());
  bool noisy = p.shot_noise_scale > 0.0f || p.read_noise_sigma > 0.0f;
  Rng rng(derive_seed(p.seed, "darken"));
  for (size_t i = 0; i < chw.size(); ++i) {
    double v = static_cast<double>(chw[i]);
    if (p.exposure_scale != 1.0f) v *= p.exposure_scale;
    if (p.gamma != 1.0f) v = std::pow(std::max(v, 0.0), static_cast<double>(p.gamma));
    if (noisy) {
      double shot = rng.normal() * p.shot_noise_scale * std::sqrt(std::max(v, 0.0));
      double read = rng.normal() * p.read_noise_sigma;
      v += shot + read;
    }
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

double quantized_mean_intensity(const std::vector<float>& chw) {
  if (chw.empty()) throw value_error("quantized_mean_intensity: empty image");
  double acc = 0.0;
  for (float v : chw) acc += static_cast<double>(float_to_byte(v));
  return acc / static_cast<double>(chw.size());
}

std::array<SeverityPreset, 3> default_presets() {
  return {{{SubsetTag::normal, 1.6f, 0.010f, 0.006f, 0.0f},
           {SubsetTag::hard, 2.0f, 0.014f, 0.008f, 0.0f},
           {SubsetTag::extreme, 2.4f, 0.018f, 0.010f, 0.0f}}};
}

float calibrate_exposure(const std::vector<LabeledScene>& sample,
                         const SeverityPreset& preset, double target_255,
                         uint64_t noise_seed) {
  if (sample.empty()) throw value_error("calibrate_exposure: empty sample");
  auto measure = [&](float exposure) {
    double acc = 0.0;
    for (size_t i = 0; i < sample.size(); ++i) {
      DarkeningParams p;
      p.exposure_scale = exposure;
      p.gamma = preset.gamma;
      p.shot_noise_scale = preset.shot_noise_scale;
      p.read_noise_sigma = preset.read_noise_sigma;
      p.seed = derive_seed(noise_seed, "calibrate", i);
      acc += quantized_mean_intensity(darken(sample[i].image, p));
    }
    return acc / static_cast<double>(sample.size());
  };
  float lo = 1e-4f, hi = 1.0f;
  if (measure(hi) <= target_255) return hi;
  for (int it = 0; it < 48; ++it) {
    float mid = 0.5f * (lo + hi);
    if (measure(mid) < target_255)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5f * (lo + hi);
}

bool parse_severity(const std::string& name, SeverityMix* out) {
  if (name == "mix") *out = SeverityMix::mix;
  else if (name == "normal") *out = SeverityMix::normal;
  else if (name == "hard") *out = SeverityMix::hard;
  else if (name == "extreme") *out = SeverityMix::extreme;
  else return false;
  return true;
}

const char* severity_name(SeverityMix m) {
  switch (m) {
    case SeverityMix::mix: return "mix";
    case SeverityMix::normal: return "normal";
    case SeverityMix::hard: return "hard";
    default: return "extreme";
  }
}

namespace {

struct PreparedItem {
  LabeledScene scene;
  std::vector<float> dark;
  DarkeningParams params;
  SubsetTag preset_tag = SubsetTag::normal;
  SubsetTag subset = SubsetTag::normal;
  double mean = 0.0;
};

std::string item_filename(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d.png", index);
  return buf;
}

}  // namespace

void build_corpus(const CorpusConfig& cfg) {
  if (cfg.train_count < 1 || cfg.val_count < 0 || cfg.test_count < 0)
    throw value_error("build_corpus: train count must be >= 1, others >= 0");
  fs::path root(cfg.out_dir);
  if (fs::exists(root) && !fs::is_empty(root) && !cfg.force)
    throw io_error(cat("build_corpus: ", cfg.out_dir,
                       " exists and is not empty (use --force to overwrite)"));

  SceneSpec spec = cfg.scene;
  spec.width = cfg.width;
  spec.height = cfg.height;

  const std::array<std::pair<std::string, int>, 3> splits = {
      {{"train", cfg.train_count}, {"val", cfg.val_count},
       {"test", cfg.test_count}}};
  for (const auto& [name, count] : splits) {
    (void)count;
    for (const char* kind : {"bright", "dark", "labels"})
      fs::create_directories(root / name / kind);
  }

  // Generate every bright scene first; calibration needs a sample.
  std::array<std::vector<PreparedItem>, 3> prepared;
  for (size_t si = 0; si < splits.size(); ++si) {
    prepared[si].resize(static_cast<size_t>(splits[si].second));
    const std::string& split = splits[si].first;
    parallel_for(0, splits[si].second, [&, si](int64_t i) {
      uint64_t scene_seed =
          derive_seed(cfg.seed, cat("scene.", split), static_cast<uint64_t>(i));
      prepared[si][static_cast<size_t>(i)].scene =
          generate_scene(scene_seed, spec);
    });
  }

  auto presets = default_presets();
  {
    std::vector<LabeledScene> sample;
    int n = std::min<int>(64, cfg.train_count);
    for (int i = 0; i < n; ++i) sample.push_back(prepared[0][static_cast<size_t>(i)].scene);
    for (auto& p : presets)
      p.exposure_scale = calibrate_exposure(
          sample, p, subset_target_intensity(p.tag),
          derive_seed(cfg.seed, "calibrate"));
  }

  for (size_t si = 0; si < splits.size(); ++si) {
    const std::string& split = splits[si].first;
    parallel_for(0, splits[si].second, [&, si](int64_t i) {
      PreparedItem& item = prepared[si][static_cast<size_t>(i)];
      Rng rng(derive_seed(cfg.seed, cat("darken.", split),
                          static_cast<uint64_t>(i)));
      int pi;
      switch (cfg.severity) {
        case SeverityMix::mix: pi = rng.uniform_int(0, 2); break;
        case SeverityMix::normal: pi = 0; break;
        case SeverityMix::hard: pi = 1; break;
        default: pi = 2; break;
      }
      const SeverityPreset& preset = presets[static_cast<size_t>(pi)];
      double jitter =
          1.0 + rng.uniform(-cfg.exposure_jitter, cfg.exposure_jitter);
      item.params.exposure_scale = static_cast<float>(
          std::min(1.0, static_cast<double>(preset.exposure_scale) * jitter));
      item.params.gamma = preset.gamma;
      item.params.shot_noise_scale = preset.shot_noise_scale;
      item.params.read_noise_sigma = preset.read_noise_sigma;
      item.params.seed = derive_seed(cfg.seed, cat("noise.", split),
                                     static_cast<uint64_t>(i));
      item.preset_tag = preset.tag;
      item.dark = darken(item.scene.image, item.params);
      item.mean = quantized_mean_intensity(item.dark);
      item.subset = nearest_subset(item.mean);

      const LabeledScene& s = item.scene;
      std::string file = item_filename(static_cast<int>(i));
      ImageF img{s.h, s.w, s.image};
      save_png_rgb((root / split / "bright" / file).string(), img);
      ImageF dimg{s.h, s.w, item.dark};
      save_png_rgb((root / split / "dark" / file).string(), dimg);
      save_png_labels((root / split / "labels" / file).string(), s.h, s.w,
                      s.labels.data());
    });
  }

  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw io_error(cat("build_corpus: cannot write manifest in ", cfg.out_dir));
  {
    json header;
    header["type"] = "header";
    header["seed"] = cfg.seed;
    header["width"] = cfg.width;
    header["height"] = cfg.height;
    header["k_classes"] = spec.k_classes;
    header["severity"] = severity_name(cfg.severity);
    header["exposure_jitter"] = cfg.exposure_jitter;
    header["counts"] = {{"train", cfg.train_count},
                        {"val", cfg.val_count},
                        {"test", cfg.test_count}};
    json plist = json::array();
    for (const auto& p : presets)
      plist.push_back({{"subset", subset_name(p.tag)},
                       {"gamma", p.gamma},
                       {"shot_noise_scale", p.shot_noise_scale},
                       {"read_noise_sigma", p.read_noise_sigma},
                       {"exposure_scale", p.exposure_scale}});
    header["presets"] = plist;
    manifest << header.dump() << "\n";
  }
  for (size_t si = 0; si < splits.size(); ++si)
    for (size_t i = 0; i < prepared[si].size(); ++i) {
      const PreparedItem& item = prepared[si][i];
      json line;
      line["type"] = "item";
      line["split"] = splits[si].first;
      line["index"] = i;
      line["file"] = item_filename(static_cast<int>(i));
      line["scene_seed"] = item.scene.seed;
      line["preset"] = subset_name(item.preset_tag);
      line["exposure_scale"] = item.params.exposure_scale;
      line["gamma"] = item.params.gamma;
      line["shot_noise_scale"] = item.params.shot_noise_scale;
      line["read_noise_sigma"] = item.params.read_noise_sigma;
      line["noise_seed"] = item.params.seed;
      line["mean_intensity"] = item.mean;
      line["subset"] = subset_name(item.subset);
      manifest << line.dump() << "\n";
    }
}

Dataset load_dataset(const std::string& root, const std::string& split) {
  fs::path manifest_path = fs::path(root) / "manifest.jsonl";
  std::ifstream in(manifest_path);
  if (!in)
    throw io_error(cat("load_dataset: cannot open ", manifest_path.string()));
  Dataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw io_error(cat("load_dataset: malformed manifest line in ",
                         manifest_path.string()));
    std::string type = j.value("type", "");
    if (type == "header") {
      ds.k_classes = j.value("k_classes", kNumClasses);
      continue;
    }
    if (type != "item" || j.value("split", "") != split) continue;

    DatasetItem item;
    std::string file = j.at("file").get<std::string>();
    item.seed = j.value("scene_seed", 0ull);
    item.mean_intensity = j.value("mean_intensity", 0.0);
    std::string tag = j.value("subset", "LL-N");
    item.subset = tag == "LL-E"   ? SubsetTag::extreme
                  : tag == "LL-H" ? SubsetTag::hard
                                  : SubsetTag::normal;
    item.bright = load_png_rgb((fs::path(root) / split / "bright" / file).string());
    item.dark = load_png_rgb((fs::path(root) / split / "dark" / file).string());
    int lh = 0, lw = 0;
    item.labels = load_png_labels(
        (fs::path(root) / split / "labels" / file).string(), ds.k_classes, &lh,
        &lw);
    if (lh != item.bright.h || lw != item.bright.w ||
        item.dark.h != item.bright.h || item.dark.w != item.bright.w)
      throw io_error(cat("load_dataset: size mismatch across files for ", file));
    if (ds.items.empty()) {
      ds.h = item.bright.h;
      ds.w = item.bright.w;
    } else if (ds.h != item.bright.h || ds.w != item.bright.w) {
      throw io_error(cat("load_dataset: inconsistent image sizes in split ",
                         split));
    }
    ds.items.push_back(std::move(item));
  }
  if (ds.items.empty())
    throw io_error(cat("load_dataset: no items for split '", split, "' in ",
                       root));
  return ds;
}

SubsetPartition partition_by_intensity(const Dataset& ds) {
  if (ds.items.empty()) throw value_error("partition_by_intensity: empty corpus");
  SubsetPartition out;
  for (size_t i = 0; i < ds.items.size(); ++i) {
    switch (ds.items[i].subset) {
      case SubsetTag::normal: out.normal.push_back(static_cast<int>(i)); break;
      case SubsetTag::hard: out.hard.push_back(static_cast<int>(i)); break;
      case SubsetTag::extreme: out.extreme.push_back(static_cast<int>(i)); break;
    }
  }
  return out;
}

}  // namespace luxforge
