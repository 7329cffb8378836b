#include "moe/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace moe::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

const Tensor& Container::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void Container::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open for writing " + path);

  f.write(kMagic, sizeof(kMagic));
  write_pod(f, kVersion);
  std::string meta_str = meta.dump();
  write_pod(f, static_cast<uint64_t>(meta_str.size()));
  f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  write_pod(f, static_cast<uint64_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_pod(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(f, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) write_pod(f, static_cast<uint64_t>(d));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(double))));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed " + path);
}

Container Container::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);

  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = read_pod<uint32_t>(f);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " in " + path);

  Container c;
  uint64_t meta_len = read_pod<uint64_t>(f);
  std::string meta_str(meta_len, '\0');
  f.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!f) throw std::runtime_error("checkpoint: truncated meta in " + path);
  c.meta = nlohmann::json::parse(meta_str);

  uint64_t n_tensors = read_pod<uint64_t>(f);
  for (uint64_t i = 0; i < n_tensors; ++i) {
    uint32_t name_len = read_pod<uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    uint32_t rank = read_pod<uint32_t>(f);
    std::vector<int64_t> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(read_pod<uint64_t>(f));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(double))));
    if (!f) throw std::runtime_error("checkpoint: truncated tensor '" + name + "' in " + path);
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

}  // namespace moe::ckpt
