#include "luxforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "luxforge/common.hpp"

namespace fs = std::filesystem;

namespace luxforge {

namespace {

constexpr char kMagic[4] = {'L', 'X', 'F', '1'};
constexpr uint32_t kMaxNameLen = 1 << 20;
constexpr int kMaxRank = 8;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  std::string data;
  size_t pos = 0;
  std::string path;

  void need(size_t n) {
    if (pos + n > data.size())
      throw io_error(cat("checkpoint ", path, ": truncated at byte ", pos,
                         " (need ", n, " more, have ", data.size() - pos, ")"));
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    if (n > kMaxNameLen)
      throw io_error(cat("checkpoint ", path, ": implausible string length ", n));
    need(n);
    std::string s(data, pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : tensors)
    if (e.name == name) return &e;
  return nullptr;
}

const int64_t* Checkpoint::find_counter(const std::string& name) const {
  for (const auto& c : counters)
    if (c.first == name) return &c.second;
  return nullptr;
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, Checkpoint::kVersion);
  put_u64(out, static_cast<uint64_t>(c.step));
  put_u64(out, c.config_hash);
  put_string(out, c.rng_state);

  put_u32(out, static_cast<uint32_t>(c.counters.size()));
  for (const auto& [name, value] : c.counters) {
    put_string(out, name);
    put_u64(out, static_cast<uint64_t>(value));
  }

  put_u32(out, static_cast<uint32_t>(c.tensors.size()));
  for (const auto& e : c.tensors) {
    put_string(out, e.name);
    put_u32(out, static_cast<uint32_t>(e.shape.size()));
    int64_t numel = 1;
    for (int d : e.shape) {
      put_u32(out, static_cast<uint32_t>(d));
      numel *= d;
    }
    if (numel != static_cast<int64_t>(e.values.size()))
      throw value_error(cat("checkpoint tensor ", e.name, ": shape ",
                            shape_str(e.shape), " does not cover ",
                            e.values.size(), " values"));
    for (float v : e.values) put_u32(out, std::bit_cast<uint32_t>(v));
  }

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error(cat("checkpoint: cannot write ", tmp));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error(cat("checkpoint: short write to ", tmp));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec)
    throw io_error(cat("checkpoint: cannot move ", tmp, " to ", path, ": ",
                       ec.message()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(cat("checkpoint: cannot open ", path));
  Reader r;
  r.path = path;
  r.data.assign(std::istreambuf_iterator<char>(f),
                std::istreambuf_iterator<char>());

  r.need(4);
  if (std::memcmp(r.data.data(), kMagic, 4) != 0)
    throw io_error(cat("checkpoint ", path, ": bad magic, not a checkpoint file"));
  r.pos = 4;
  uint32_t version = r.u32();
  if (version != Checkpoint::kVersion)
    throw io_error(cat("checkpoint ", path, ": unsupported version ", version));

  Checkpoint c;
  c.step = static_cast<int64_t>(r.u64());
  c.config_hash = r.u64();
  c.rng_state = r.str();

  uint32_t n_counters = r.u32();
  c.counters.reserve(n_counters);
  for (uint32_t i = 0; i < n_counters; ++i) {
    std::string name = r.str();
    c.counters.emplace_back(std::move(name), static_cast<int64_t>(r.u64()));
  }

  uint32_t n_tensors = r.u32();
  c.tensors.reserve(n_tensors);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    Checkpoint::Entry e;
    e.name = r.str();
    uint32_t rank = r.u32();
    if (rank > kMaxRank)
      throw io_error(cat("checkpoint ", path, ": tensor ", e.name,
                         " has implausible rank ", rank));
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      int dim = static_cast<int>(r.u32());
      if (dim < 0 || dim > (1 << 26))
        throw io_error(cat("checkpoint ", path, ": tensor ", e.name,
                           " has implausible dim ", dim));
      e.shape.push_back(dim);
      numel *= dim;
    }
    r.need(static_cast<size_t>(numel) * 4);
    e.values.resize(static_cast<size_t>(numel));
    for (int64_t k = 0; k < numel; ++k)
      e.values[static_cast<size_t>(k)] = std::bit_cast<float>(r.u32());
    c.tensors.push_back(std::move(e));
  }
  if (r.pos != r.data.size())
    throw io_error(cat("checkpoint ", path, ": ", r.data.size() - r.pos,
                       " trailing bytes"));
  return c;
}

}  // namespace luxforge
