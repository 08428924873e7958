#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "luxforge/metrics.hpp"
#include "luxforge/recognizer.hpp"
#include "luxforge/synth.hpp"

namespace luxforge {

struct AblationConfig {
  std::string out_dir;
  double lr = 5e-4;
  int batch_size = 8;
  int steps = 6000;
  std::vector<uint64_t> seeds = {1, 2, 3};
};

struct AblationVariantResult {
  std::string name;  // "none", "gem", "pam", "full"
  bool gem = false, pam = false;
  std::vector<EvalReport> per_seed;
  std::vector<double> first_smoothed;  // 100-step loss means; empty for "none"
  std::vector<double> last_smoothed;
  double med_n = 0.0, med_h = 0.0, med_e = 0.0, med_a = 0.0;  // seed medians
};

struct AblationTable {
  std::vector<uint64_t> seeds;
  std::vector<AblationVariantResult> variants;  // none, gem, pam, full
};

// Trains every enhancer variant with the same seed list against the shared
// frozen recognizer (the "none" baseline skips training and evaluates the
// recognizer on raw dark images), then reports per-subset test mIoU medians.
// Independent runs execute in parallel across workers.
AblationTable run_ablation(const Dataset& train, const Dataset& test,
                           RecognizerNetwork& rec, const AblationConfig& cfg);

std::string ablation_table_text(const AblationTable& t);
std::string ablation_table_json(const AblationTable& t);

}  // namespace luxforge
