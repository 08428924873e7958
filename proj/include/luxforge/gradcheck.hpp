#pragma once

#include <functional>
#include <string>
#include <vector>

#include "luxforge/tensor.hpp"

namespace luxforge {

struct GradCheckConfig {
  int min_probes = 100;
  double tolerance = 1e-4;
  double step = 1e-5;  // scaled by max(1, |x|) per element
  uint64_t seed = 42;
};

struct GradCheckResult {
  std::string name;
  int probes = 0;   // finite-difference probes that produced a measurement
  int skipped = 0;  // probes discarded as kink-contaminated
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  bool pass = false;

  std::string summary() const;
};

// Rebuilds the scalar loss from scratch on every call using the given
// context. Captured tensors alias the probed leaves.
using ScalarFn = std::function<BasicTensor<double>(Context<double>&)>;

// Central differences against the tape gradient, in double. Probes random
// elements of `leaves` until min_probes valid measurements (or the elements
// run out). A probe whose second difference is large relative to its first
// difference straddles a kink (ReLU, clamp); the step is halved up to three
// times, then the probe is skipped. Relative error uses
// |a-n| / max(|a|, |n|, 1e-8).
GradCheckResult check_gradients(const std::string& name, const ScalarFn& fn,
                                std::vector<BasicTensor<double>> leaves,
                                const GradCheckConfig& cfg = {});

// Per-op suite plus the full enhance-through-recognizer probe; the zero-init
// output layers are randomized first so no gradient path is trivially zero.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckConfig& cfg = {});

}  // namespace luxforge
