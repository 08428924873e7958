#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace luxforge {

// splitmix64 step; used to whiten seeds before feeding them to mt19937_64.
uint64_t splitmix64(uint64_t& state);

// Deterministically derives an independent stream seed from a master seed
// and a label ("gem.init", "batch", scene index, ...).
uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t index = 0);

// Thin wrapper over mt19937_64. All randomness in the library flows through
// explicit Rng instances; there is no hidden global state.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull);

  uint64_t next_u64();

  // Uniform in [0, 1). 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);
  // Standard normal via Box-Muller (no cached spare, so state serialization
  // never straddles a half-consumed pair).
  double normal();
  double normal(double mean, double sigma);

  bool chance(double p);

  // mt19937_64 state as text, for checkpoints.
  std::string serialize() const;
  void deserialize(const std::string& text);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace luxforge
