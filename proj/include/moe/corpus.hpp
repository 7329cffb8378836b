#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace moe::corpus {

enum class Split { Train, Dev, Eval };

const char* split_name(Split s);
Split parse_split(const std::string& s);  // throws on unknown tag

struct ManifestEntry {
  std::string path;    // audio file, possibly relative to a data root
  int label = 0;       // 0 = real, 1 = fake
  std::string domain;  // dataset identity, e.g. "ASV" or a synthetic name
  Split split = Split::Train;
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> entries;  // sorted lexicographically by path

  std::vector<ManifestEntry> filter(Split split) const;
  std::vector<ManifestEntry> filter(Split split, const std::string& domain) const;
  std::vector<std::string> domains() const;  // sorted unique domain tags
};

/// Parses a manifest CSV with header `path,label,domain,split`.
/// Entries come back sorted lexicographically by path. Malformed rows raise
/// errors that name the offending line number.
DatasetManifest load_manifest(const std::string& path);

/// Writes the manifest in the canonical form load_manifest produces, so that
/// load_manifest(write_manifest(m)) == m for validated manifests.
void write_manifest(const DatasetManifest& m, const std::string& path);

/// Stratified split assignment: per class independently, counts follow the
/// largest-remainder rule (rounding ties resolved toward train, then dev),
/// and the within-class assignment is a seeded shuffle.
DatasetManifest make_splits(const std::vector<ManifestEntry>& entries,
                            const std::array<double, 3>& ratios, uint64_t seed,
                            const std::string& name = "");

/// Class-balanced batch stream over one split. Every batch holds exactly
/// batch_size/2 entries of each label; the minority class is resampled with
/// replacement per epoch until the majority class is covered.
class BalancedBatcher {
 public:
  BalancedBatcher(const DatasetManifest& manifest, Split split, int batch_size, uint64_t seed);

  int64_t batches_per_epoch() const { return batches_per_epoch_; }

  /// Deterministic function of (seed, epoch).
  std::vector<std::vector<ManifestEntry>> epoch_batches(int64_t epoch) const;

 private:
  std::vector<ManifestEntry> real_, fake_;
  int batch_size_;
  int64_t batches_per_epoch_;
  uint64_t seed_;
};

struct SynthCorpusSpec {
  int num_domains = 4;
  int clips_per_domain_per_class = 32;
  double clip_seconds = 4.0;
  uint64_t seed = 0;

  void validate() const;
};

/// Generates a deterministic multi-domain corpus of 16 kHz mono WAV files
/// under out_dir/audio plus out_dir/manifest.csv with stratified 60/20/20
/// splits. Per domain, "real" clips are harmonic tones in a domain-specific
/// fundamental band over a domain-specific noise floor; "fake" clips share
/// the band but carry a domain-specific spectral artifact (comb-filtered
/// noise, amplitude modulation, band-limited hiss, or inharmonic spur tones).
DatasetManifest synth_corpus(const SynthCorpusSpec& spec, const std::string& out_dir);

/// Domain tag used by the generator: "dom0", "dom1", ...
std::string synth_domain_name(int k);

}  // namespace moe::corpus
