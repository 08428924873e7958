#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "luxforge/image_io.hpp"
#include "luxforge/rng.hpp"

namespace luxforge {

inline constexpr int kNumClasses = 5;  // textured background + 4 shape colors

// Low-light severity subsets, ordered bright-to-dark.
enum class SubsetTag { normal, hard, extreme };

const char* subset_name(SubsetTag t);             // "LL-N" / "LL-H" / "LL-E"
double subset_target_intensity(SubsetTag t);      // 3.2 / 1.4 / 0.9 (0-255)
SubsetTag nearest_subset(double mean_255);

struct SceneSpec {
  int width = 16;
  int height = 16;
  int k_classes = kNumClasses;
  int min_shapes = 2;
  int max_shapes = 6;
  double hue_jitter = 0.10;  // per-instance channel gain jitter, <= 10%
};

struct LabeledScene {
  int h = 0, w = 0;
  uint64_t seed = 0;
  std::vector<float> image;     // CHW, 3*h*w, in [0,1]
  std::vector<int32_t> labels;  // h*w, in [0, K)
};

// Deterministic per seed. Renders 2-6 non-overlapping axis-aligned
// rectangles/ellipses over a textured gray background; labels follow shape
// boundaries exactly.
LabeledScene generate_scene(uint64_t seed, const SceneSpec& spec);

struct DarkeningParams {
  float exposure_scale = 1.0f;   // in (0,1]
  float gamma = 1.0f;            // >= 1
  float read_noise_sigma = 0.0f;
  float shot_noise_scale = 0.0f;
  uint64_t seed = 0;
};

// clamp01((exposure*I)^gamma + shot + read); shot ~ N(0, scale*sqrt(value)),
// read ~ N(0, sigma). (1,1,0,0) is the exact identity.
std::vector<float> darken(const std::vector<float>& chw,
                          const DarkeningParams& p);

// Mean of the byte-quantized pixels on the 0-255 scale; matches what a
// round-trip through the PNG files measures.
double quantized_mean_intensity(const std::vector<float>& chw);

struct SeverityPreset {
  SubsetTag tag = SubsetTag::normal;
  float gamma = 1.0f;
  float shot_noise_scale = 0.0f;
  float read_noise_sigma = 0.0f;
  float exposure_scale = 0.0f;  // 0 until calibrated
};

// Gamma/noise choices per subset; exposure left for calibration.
std::array<SeverityPreset, 3> default_presets();

// Bisection on exposure_scale so the sample's quantized mean intensity hits
// target_255. Noise seeds are fixed per image, so the objective is a
// deterministic monotone function of exposure.
float calibrate_exposure(const std::vector<LabeledScene>& sample,
                         const SeverityPreset& preset, double target_255,
                         uint64_t noise_seed);

enum class SeverityMix { mix, normal, hard, extreme };
bool parse_severity(const std::string& name, SeverityMix* out);
const char* severity_name(SeverityMix m);

struct CorpusConfig {
  std::string out_dir;
  int train_count = 512;
  int val_count = 64;
  int test_count = 128;
  int width = 16;
  int height = 16;
  uint64_t seed = 1;
  SeverityMix severity = SeverityMix::mix;
  double exposure_jitter = 0.10;  // relative, per image
  bool force = false;
  SceneSpec scene;  // width/height/k taken from the fields above
};

// Writes <out>/{train,val,test}/{bright,dark,labels}/NNNNNN.png plus
// <out>/manifest.jsonl. Bit-identical for a fixed config.
void build_corpus(const CorpusConfig& cfg);

struct DatasetItem {
  ImageF bright;
  ImageF dark;
  std::vector<int32_t> labels;
  double mean_intensity = 0.0;  // dark image, 0-255 scale
  SubsetTag subset = SubsetTag::normal;
  uint64_t seed = 0;
};

struct Dataset {
  int h = 0, w = 0;
  int k_classes = kNumClasses;
  std::vector<DatasetItem> items;
};

// Loads one split ("train"/"val"/"test") fully into memory.
Dataset load_dataset(const std::string& root, const std::string& split);

struct SubsetPartition {
  std::vector<int> normal, hard, extreme;  // item indices; LL-A = union
};
SubsetPartition partition_by_intensity(const Dataset& ds);

}  // namespace luxforge
