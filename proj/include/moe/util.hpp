#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace moe {

/// Deterministic RNG used for every seeded operation in the project.
///
/// std::mt19937_64 has a fully standard-specified output sequence, and all
/// derived draws below are implemented explicitly (no std::*_distribution,
/// whose outputs are implementation-defined), so seeded results are
/// reproducible across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) via rejection sampling.
  uint64_t uniform_int(uint64_t n);

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Fisher-Yates shuffle driven by uniform_int.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

/// Derives a sub-seed from a base seed and a purpose tag (FNV-1a).
/// Keeps independent random streams (init, batching, dropout, ...) from a
/// single user-facing --seed.
uint64_t derive_seed(uint64_t base, std::string_view tag);
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index);

/// FNV-1a over raw bytes; used for cheap content checksums in tests/tools.
uint64_t fnv1a(const void* data, size_t len, uint64_t h = 1469598103934665603ull);

std::vector<std::string> split_csv_line(const std::string& line);
std::string join_path(const std::string& dir, const std::string& rel);
bool is_abs_path(const std::string& p);

/// Shortest decimal form that round-trips a double (%.17g).
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

}  // namespace moe
