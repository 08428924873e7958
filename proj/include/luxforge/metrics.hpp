#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "luxforge/enhance.hpp"
#include "luxforge/recognizer.hpp"
#include "luxforge/synth.hpp"
#include "luxforge/tensor.hpp"

namespace luxforge {

// Row = truth, column = prediction. Accumulated over a whole evaluation set.
struct ConfusionMatrix {
  int k = 0;
  std::vector<int64_t> counts;

  explicit ConfusionMatrix(int k_classes);
  int64_t& at(int truth, int pred) {
    return counts[static_cast<size_t>(truth) * k + pred];
  }
  int64_t at(int truth, int pred) const {
    return counts[static_cast<size_t>(truth) * k + pred];
  }
  // Ignores truth pixels labeled kIgnoreLabel; out-of-range values throw.
  void add(const LabelMap& truth, const LabelMap& pred);
  void merge(const ConfusionMatrix& other);
};

struct IouResult {
  std::vector<double> per_class;  // meaningful only where present[k]
  std::vector<bool> present;      // class appears in truth or prediction
  double mean = 0.0;
};

// IoU_k = TP/(TP+FP+FN); classes absent from both sides are excluded from the
// mean. All classes absent -> error.
IouResult miou(const ConfusionMatrix& cm);

// Mean over all pixels and channels, reported on the 0-255 scale.
double mean_pixel_intensity(const Tensor& images);

struct ParamCounts {
  int64_t gem = 0;
  int64_t pam = 0;
  int64_t recognizer = 0;
  int64_t enhancer() const { return gem + pam; }
  int64_t total() const { return gem + pam + recognizer; }
};

ParamCounts count_params(Enhancer& enhancer, RecognizerNetwork& recognizer);

struct SubsetScore {
  int images = 0;
  double miou = 0.0;
  bool valid = false;  // false when the subset is empty
};

struct EvalReport {
  SubsetScore normal, hard, extreme, all;
  IouResult overall;  // per-class detail for the LL-A row
};

// Runs dark test images through the enhancer (pass nullptr for the raw
// baseline) and the frozen recognizer, accumulating dataset-level confusion
// matrices overall and per intensity subset.
EvalReport evaluate_on_dataset(Enhancer* enhancer, RecognizerNetwork& rec,
                               const Dataset& ds, int batch_size = 8);

struct LatencyStats {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  int iters = 0;
};

struct LatencyReport {
  int h = 0, w = 0;
  LatencyStats enhancer, recognizer, combined;
};

// Wall-clock per-image latency, single-threaded, eval mode, fixed random
// input. Warmup iterations are discarded; percentiles use nearest rank.
LatencyReport benchmark_latency(Enhancer& enhancer, RecognizerNetwork& rec,
                                int h, int w, int warmup = 5, int iters = 50);

struct MetricsReport {
  EvalReport eval;
  ParamCounts params;
  LatencyReport latency;  // latency.combined.iters == 0 means "not measured"
  std::string config_hash;
  std::string checkpoint_id;
};

std::string metrics_report_json(const MetricsReport& r);
std::string metrics_report_table(const MetricsReport& r);

}  // namespace luxforge
