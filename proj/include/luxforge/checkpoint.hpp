#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "luxforge/layers.hpp"
#include "luxforge/tensor.hpp"

namespace luxforge {

// Binary container: "LXF1" magic, u32 version, metadata (step, config hash,
// RNG state), named int64 counters, then a named float32 tensor table. All
// multi-byte fields little-endian regardless of host.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  int64_t step = 0;
  uint64_t config_hash = 0;
  std::string rng_state;

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };
  std::vector<Entry> tensors;
  std::vector<std::pair<std::string, int64_t>> counters;

  const Entry* find(const std::string& name) const;
  const int64_t* find_counter(const std::string& name) const;
};

uint64_t fnv1a64(std::string_view s);

// Atomic: writes to a temp file, then renames over the target.
void save_checkpoint(const std::string& path, const Checkpoint& c);
// io_error on missing file, bad magic, unsupported version, or truncation.
Checkpoint load_checkpoint(const std::string& path);

// Appends every tensor and counter the network exposes.
template <typename Net>
void collect_tensors(Net& net, Checkpoint* c) {
  net.visit_tensors([&](const std::string& name, Tensor& t, bool) {
    Checkpoint::Entry e;
    e.name = name;
    e.shape = t.shape();
    e.values = t.values();
    c->tensors.push_back(std::move(e));
  });
  net.visit_counters([&](const std::string& name, int64_t& v) {
    c->counters.emplace_back(name, v);
  });
}

// Strict restore: every tensor and counter the network exposes must be in
// the checkpoint with a matching shape; otherwise shape_error.
template <typename Net>
void restore_tensors(Net& net, const Checkpoint& c) {
  net.visit_tensors([&](const std::string& name, Tensor& t, bool) {
    const Checkpoint::Entry* e = c.find(name);
    if (e == nullptr)
      throw shape_error(cat("checkpoint does not match model: missing tensor ",
                            name));
    if (e->shape != t.shape())
      throw shape_error(cat("checkpoint tensor ", name, " has shape ",
                            shape_str(e->shape), ", model expects ",
                            shape_str(t.shape())));
    std::copy(e->values.begin(), e->values.end(), t.data());
  });
  net.visit_counters([&](const std::string& name, int64_t& v) {
    const int64_t* cv = c.find_counter(name);
    if (cv == nullptr)
      throw shape_error(cat("checkpoint does not match model: missing counter ",
                            name));
    v = *cv;
  });
}

}  // namespace luxforge
