#include "recipcrystal/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "recipcrystal/errors.hpp"

namespace recip {

namespace {

constexpr char kMagic[4] = {'R', 'C', 'K', 'P'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) put_u64(os, static_cast<std::uint64_t>(d));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw ArchiveCorrupt("checkpoint truncated");
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw ArchiveCorrupt("checkpoint truncated");
  return v;
}

std::string get_str(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1ULL << 32)) throw ArchiveCorrupt("checkpoint string too large");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw ArchiveCorrupt("checkpoint truncated");
  }
  return s;
}

Tensor get_tensor(std::istream& is) {
  const std::uint32_t nd = get_u32(is);
  if (nd > 16) throw ArchiveCorrupt("checkpoint tensor rank too large");
  std::vector<int> shape(nd);
  for (auto& d : shape) d = static_cast<int>(get_u64(is));
  Tensor t(shape);
  if (!is.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)))) {
    throw ArchiveCorrupt("checkpoint truncated");
  }
  return t;
}

}  // namespace

const Tensor* Checkpoint::find_extra(const std::string& name) const {
  for (const auto& [n, t] : extras) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, ck.kind);
  put_u64(os, ck.config_hash);
  put_u64(os, ck.step);
  put_str(os, ck.config_text);

  put_u32(os, static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& [name, t] : ck.params) {
    put_str(os, name);
    put_tensor(os, t);
  }
  put_u32(os, ck.adam_m.empty() ? 0u : 1u);
  if (!ck.adam_m.empty()) {
    put_u64(os, ck.adam_steps);
    for (const Tensor& t : ck.adam_m) put_tensor(os, t);
    for (const Tensor& t : ck.adam_v) put_tensor(os, t);
  }
  put_u32(os, static_cast<std::uint32_t>(ck.extras.size()));
  for (const auto& [name, t] : ck.extras) {
    put_str(os, name);
    put_tensor(os, t);
  }
  put_u32(os, static_cast<std::uint32_t>(ck.rng_states.size()));
  for (const auto& [name, state] : ck.rng_states) {
    put_str(os, name);
    put_str(os, state);
  }
  if (!os) throw Error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArchiveCorrupt("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ArchiveCorrupt("not a checkpoint file: " + path);
  }
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw ArchiveCorrupt("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.kind = get_u32(is);
  ck.config_hash = get_u64(is);
  ck.step = get_u64(is);
  ck.config_text = get_str(is);

  const std::uint32_t n_params = get_u32(is);
  ck.params.reserve(n_params);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = get_str(is);
    ck.params.emplace_back(std::move(name), get_tensor(is));
  }
  if (get_u32(is) == 1u) {
    ck.adam_steps = get_u64(is);
    ck.adam_m.reserve(n_params);
    ck.adam_v.reserve(n_params);
    for (std::uint32_t i = 0; i < n_params; ++i) ck.adam_m.push_back(get_tensor(is));
    for (std::uint32_t i = 0; i < n_params; ++i) ck.adam_v.push_back(get_tensor(is));
  }
  const std::uint32_t n_extras = get_u32(is);
  for (std::uint32_t i = 0; i < n_extras; ++i) {
    std::string name = get_str(is);
    ck.extras.emplace_back(std::move(name), get_tensor(is));
  }
  const std::uint32_t n_rngs = get_u32(is);
  for (std::uint32_t i = 0; i < n_rngs; ++i) {
    std::string name = get_str(is);
    ck.rng_states.emplace_back(std::move(name), get_str(is));
  }
  return ck;
}

}  // namespace recip
