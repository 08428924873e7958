#include "luxforge/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "luxforge/common.hpp"

namespace luxforge {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t index) {
  // FNV-1a over the label, then mix everything through splitmix64.
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  uint64_t state = master ^ h;
  uint64_t out = splitmix64(state);
  state ^= index * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull;
  out ^= splitmix64(state);
  return out;
}

Rng::Rng(uint64_t seed) {
  uint64_t state = seed;
  // Seed the full engine state so nearby seeds do not produce nearby streams.
  std::seed_seq seq{splitmix64(state), splitmix64(state), splitmix64(state),
                    splitmix64(state)};
  engine_.seed(seq);
}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw value_error(cat("uniform_int: empty range [", lo, ", ", hi, "]"));
  uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
  // Modulo bias is ~span/2^64; irrelevant for the spans used here.
  return lo + static_cast<int>(engine_() % span);
}

double Rng::normal() {
  // Box-Muller, always drawing a fresh pair.
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double sigma) { return mean + sigma * normal(); }

bool Rng::chance(double p) { return uniform() < p; }

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (!is) throw value_error("Rng::deserialize: malformed engine state");
}

}  // namespace luxforge
