#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "luxforge/adam.hpp"
#include "luxforge/checkpoint.hpp"
#include "luxforge/enhance.hpp"
#include "luxforge/recognizer.hpp"
#include "luxforge/synth.hpp"

namespace luxforge {

struct TrainConfig {
  double lr = 5e-4;
  int batch_size = 8;
  int total_steps = 6000;
  uint64_t seed = 1;
  int checkpoint_interval = 500;
  int eval_interval = 0;  // 0 = no mid-training evaluation
  bool gem_enabled = true;
  bool pam_enabled = true;
  std::string out_dir;
};

// Hash of the hyperparameters that must match for a checkpoint resume to
// replay the original run exactly. Horizon, logging cadence and out_dir are
// excluded: they do not affect the step-by-step trajectory.
uint64_t train_config_hash(const TrainConfig& cfg);

struct TrainResult {
  int steps_completed = 0;
  double final_loss = 0.0;
  bool halted_on_divergence = false;
  std::string final_checkpoint;
  std::vector<double> losses;  // one entry per completed step of this call
};

// Full training state (enhancer tensors and counters, Adam moments, RNG) as
// a checkpoint. `names` must align with the optimizer's parameter order.
Checkpoint build_train_checkpoint(Enhancer& enh, Adam& adam,
                                  const std::vector<std::string>& names,
                                  int64_t step, uint64_t config_hash,
                                  const Rng& rng);

// Main training loop: sample a dark batch, enhance, run the frozen
// recognizer, backprop the model-specific loss into the enabled enhancer
// modules only. Appends a JSONL line per step to <out_dir>/train_log.jsonl,
// keeps <out_dir>/checkpoint_latest.lxf rolling, and writes
// <out_dir>/checkpoint_final.lxf on completion. A non-finite loss or
// gradient halts training, restores the last good state, and writes it to
// <out_dir>/checkpoint_last_good.lxf.
TrainResult train_enhancer(const TrainConfig& cfg, Enhancer& enh,
                           RecognizerNetwork& rec, const Dataset& corpus,
                           const Dataset* val = nullptr,
                           const Checkpoint* resume = nullptr);

}  // namespace luxforge
