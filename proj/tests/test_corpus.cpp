#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "moe/corpus.hpp"
#include "moe/frontend.hpp"
#include "moe/util.hpp"
#include "test_util.hpp"

using namespace moe;
using corpus::DatasetManifest;
using corpus::ManifestEntry;
using corpus::Split;

namespace {

std::vector<ManifestEntry> make_entries(int n_real, int n_fake, const std::string& domain = "d") {
  std::vector<ManifestEntry> out;
  for (int i = 0; i < n_real; ++i)
    out.push_back({domain + "/real_" + std::to_string(1000 + i) + ".wav", 0, domain, Split::Train});
  for (int i = 0; i < n_fake; ++i)
    out.push_back({domain + "/fake_" + std::to_string(1000 + i) + ".wav", 1, domain, Split::Train});
  return out;
}

std::map<std::pair<Split, int>, int> split_counts(const DatasetManifest& m) {
  std::map<std::pair<Split, int>, int> counts;
  for (const auto& e : m.entries) ++counts[{e.split, e.label}];
  return counts;
}

}  // namespace

TEST_CASE("load_manifest parses a valid CSV and sorts by path") {
  std::string dir = testutil::temp_dir("corpus_load");
  std::string csv =
      "path,label,domain,split\n"
      "b.wav,1,ASV,train\n"
      "a.wav,0,ASV,dev\n"
      "d.wav,0,FoR,eval\n"
      "c.wav,1,FoR,train\n";
  write_text_file(dir + "/m.csv", csv);
  DatasetManifest m = corpus::load_manifest(dir + "/m.csv");
  CHECK(m.entries.size() == 4);
  CHECK(m.name == "m");

  // Sort oracle on the fixture paths.
  std::vector<std::string> expect = {"b.wav", "a.wav", "d.wav", "c.wav"};
  std::sort(expect.begin(), expect.end());
  for (size_t i = 0; i < 4; ++i) CHECK(m.entries[i].path == expect[i]);
  CHECK(m.entries[0].label == 0);
  CHECK(m.entries[0].domain == "ASV");
  CHECK(m.entries[0].split == Split::Dev);
}

TEST_CASE("load_manifest rejects malformed rows with the line number") {
  std::string dir = testutil::temp_dir("corpus_bad");

  write_text_file(dir + "/label.csv", "path,label,domain,split\na.wav,0,d,train\nb.wav,2,d,train\n");
  CHECK_THROWS_WITH_AS(corpus::load_manifest(dir + "/label.csv"),
                       doctest::Contains(":3"), std::runtime_error);

  write_text_file(dir + "/cols.csv", "path,label,domain,split\na.wav,0,d\n");
  CHECK_THROWS_WITH_AS(corpus::load_manifest(dir + "/cols.csv"),
                       doctest::Contains(":2"), std::runtime_error);

  write_text_file(dir + "/split.csv", "path,label,domain,split\na.wav,0,d,test\n");
  CHECK_THROWS(corpus::load_manifest(dir + "/split.csv"));

  write_text_file(dir + "/header.csv", "file,label,domain,split\n");
  CHECK_THROWS(corpus::load_manifest(dir + "/header.csv"));

  CHECK_THROWS(corpus::load_manifest(dir + "/missing.csv"));
}

TEST_CASE("write_manifest then load_manifest is the identity") {
  std::string dir = testutil::temp_dir("corpus_roundtrip");
  DatasetManifest m = corpus::make_splits(make_entries(13, 9), {0.6, 0.2, 0.2}, 5, "m");
  corpus::write_manifest(m, dir + "/m.csv");
  DatasetManifest m2 = corpus::load_manifest(dir + "/m.csv");
  REQUIRE(m2.entries.size() == m.entries.size());
  for (size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(m2.entries[i].path == m.entries[i].path);
    CHECK(m2.entries[i].label == m.entries[i].label);
    CHECK(m2.entries[i].domain == m.entries[i].domain);
    CHECK(m2.entries[i].split == m.entries[i].split);
  }
  // Re-emission is byte-identical.
  corpus::write_manifest(m2, dir + "/m2.csv");
  CHECK(testutil::slurp(dir + "/m.csv") == testutil::slurp(dir + "/m2.csv"));
}

TEST_CASE("make_splits: 100 real + 100 fake at 60/20/20 gives exact per-class counts") {
  DatasetManifest m = corpus::make_splits(make_entries(100, 100), {0.6, 0.2, 0.2}, 7);
  auto counts = split_counts(m);
  for (int label = 0; label <= 1; ++label) {
    CHECK(counts[{Split::Train, label}] == 60);
    CHECK(counts[{Split::Dev, label}] == 20);
    CHECK(counts[{Split::Eval, label}] == 20);
  }
}

TEST_CASE("make_splits: degenerate ratios put everything in train") {
  DatasetManifest m = corpus::make_splits(make_entries(5, 3), {1.0, 0.0, 0.0}, 1);
  for (const auto& e : m.entries) CHECK(e.split == Split::Train);
}

TEST_CASE("make_splits is deterministic given the seed") {
  auto entries = make_entries(23, 17);
  DatasetManifest a = corpus::make_splits(entries, {0.6, 0.2, 0.2}, 42);
  DatasetManifest b = corpus::make_splits(entries, {0.6, 0.2, 0.2}, 42);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].path == b.entries[i].path);
    CHECK(a.entries[i].split == b.entries[i].split);
  }
  DatasetManifest c = corpus::make_splits(entries, {0.6, 0.2, 0.2}, 43);
  bool any_diff = false;
  for (size_t i = 0; i < a.entries.size(); ++i)
    if (a.entries[i].split != c.entries[i].split) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("make_splits stratification: per class within one sample of the exact ratio") {
  Rng rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    int n_real = 3 + static_cast<int>(rng.uniform_int(40));
    int n_fake = 3 + static_cast<int>(rng.uniform_int(40));
    double a = rng.uniform(0.1, 1.0), b = rng.uniform(0.1, 1.0), c = rng.uniform(0.1, 1.0);
    double s = a + b + c;
    std::array<double, 3> ratios{a / s, b / s, c / s};
    // Renormalize exactly to defeat accumulated rounding.
    ratios[2] = 1.0 - ratios[0] - ratios[1];

    auto entries = make_entries(n_real, n_fake);
    DatasetManifest m = corpus::make_splits(entries, ratios, rng.next_u64());
    CHECK(m.entries.size() == entries.size());

    std::set<std::string> paths;
    for (const auto& e : m.entries) paths.insert(e.path);
    CHECK(paths.size() == entries.size());  // disjoint and exhaustive

    auto counts = split_counts(m);
    for (int label = 0; label <= 1; ++label) {
      int n = label == 0 ? n_real : n_fake;
      for (int sp = 0; sp < 3; ++sp) {
        double expected = ratios[static_cast<size_t>(sp)] * n;
        CHECK(std::abs(counts[{static_cast<Split>(sp), label}] - expected) <= 1.0 + 1e-9);
      }
    }
  }
}

TEST_CASE("make_splits refuses classes smaller than the number of splits") {
  CHECK_THROWS(corpus::make_splits(make_entries(2, 10), {0.6, 0.2, 0.2}, 1));
  // Two samples across two non-empty splits is fine.
  CHECK_NOTHROW(corpus::make_splits(make_entries(2, 10), {0.5, 0.5, 0.0}, 1));
}

TEST_CASE("balanced_batches: batch 128 yields 64 of each class") {
  DatasetManifest m;
  m.entries = make_entries(80, 48);
  corpus::BalancedBatcher batcher(m, Split::Train, 128, 3);
  CHECK(batcher.batches_per_epoch() == 2);  // ceil(80 / 64)
  for (const auto& batch : batcher.epoch_batches(0)) {
    REQUIRE(batch.size() == 128);
    int real = 0, fake = 0;
    for (const auto& e : batch) (e.label == 0 ? real : fake)++;
    CHECK(real == 64);
    CHECK(fake == 64);
  }
}

TEST_CASE("balanced_batches: minority of one is repeated to cover the majority") {
  DatasetManifest m;
  m.entries = make_entries(1, 5);
  corpus::BalancedBatcher batcher(m, Split::Train, 2, 11);
  auto batches = batcher.epoch_batches(0);
  REQUIRE(batches.size() == 5);
  std::set<std::string> fakes;
  for (const auto& batch : batches) {
    REQUIRE(batch.size() == 2);
    int real = 0;
    for (const auto& e : batch) {
      if (e.label == 0) {
        ++real;
        CHECK(e.path == "d/real_1000.wav");  // the lone real entry, repeated
      } else {
        fakes.insert(e.path);
      }
    }
    CHECK(real == 1);
  }
  CHECK(fakes.size() == 5);  // every majority sample covered exactly once
}

TEST_CASE("balanced_batches preconditions") {
  DatasetManifest m;
  m.entries = make_entries(4, 4);
  CHECK_THROWS(corpus::BalancedBatcher(m, Split::Train, 3, 0));   // odd batch
  DatasetManifest single;
  single.entries = make_entries(4, 0);
  CHECK_THROWS(corpus::BalancedBatcher(single, Split::Train, 2, 0));  // one class
}

TEST_CASE("balanced_batches: deterministic per (seed, epoch), balanced always") {
  DatasetManifest m;
  m.entries = make_entries(11, 7);
  corpus::BalancedBatcher batcher(m, Split::Train, 6, 21);
  auto a = batcher.epoch_batches(4);
  auto b = batcher.epoch_batches(4);
  REQUIRE(a.size() == b.size());
  bool same = true;
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[i].size(); ++j)
      if (a[i][j].path != b[i][j].path) same = false;
  CHECK(same);

  auto c = batcher.epoch_batches(5);
  bool diff = false;
  for (size_t i = 0; i < a.size() && !diff; ++i)
    for (size_t j = 0; j < a[i].size(); ++j)
      if (a[i][j].path != c[i][j].path) diff = true;
  CHECK(diff);

  for (int epoch = 0; epoch < 4; ++epoch) {
    std::set<std::string> majority_seen;
    for (const auto& batch : batcher.epoch_batches(epoch)) {
      int real = 0, fake = 0;
      for (const auto& e : batch) {
        (e.label == 0 ? real : fake)++;
        if (e.label == 0) majority_seen.insert(e.path);
      }
      CHECK(real == fake);
    }
    CHECK(majority_seen.size() == 11);  // full pass over the majority class
  }
}

TEST_CASE("synth_corpus: counts, splits, and determinism") {
  corpus::SynthCorpusSpec spec;
  spec.num_domains = 2;
  spec.clips_per_domain_per_class = 8;
  spec.clip_seconds = 1.0;
  spec.seed = 7;

  std::string dir1 = testutil::temp_dir("synth_a");
  std::string dir2 = testutil::temp_dir("synth_b");
  DatasetManifest m1 = corpus::synth_corpus(spec, dir1);
  DatasetManifest m2 = corpus::synth_corpus(spec, dir2);

  CHECK(m1.entries.size() == 32);  // 2 domains x 2 classes x 8
  std::map<std::pair<std::string, int>, int> counts;
  for (const auto& e : m1.entries) ++counts[{e.domain, e.label}];
  for (const auto& [key, n] : counts) CHECK(n == 8);

  // Byte-identical manifests and audio across runs.
  CHECK(testutil::slurp(dir1 + "/manifest.csv") == testutil::slurp(dir2 + "/manifest.csv"));
  for (const auto& e : m1.entries)
    CHECK(testutil::slurp(join_path(dir1, e.path)) == testutil::slurp(join_path(dir2, e.path)));

  // Stratified per (domain, class): with n=8 the largest-remainder rule gives
  // 5/2/1 and every count sits within one sample of the exact ratio.
  std::map<std::tuple<std::string, int, Split>, int> sc;
  for (const auto& e : m1.entries) ++sc[{e.domain, e.label, e.split}];
  for (const auto& [key, n] : sc) {
    Split sp = std::get<2>(key);
    double expected = (sp == Split::Train ? 0.6 : 0.2) * 8;
    CHECK(std::abs(n - expected) <= 1.0);
  }
}

TEST_CASE("synth_corpus: domain-0 classes separate on mean spectral centroid") {
  corpus::SynthCorpusSpec spec;
  spec.num_domains = 2;
  spec.clips_per_domain_per_class = 16;
  spec.clip_seconds = 1.0;
  spec.seed = 3;
  std::string dir = testutil::temp_dir("synth_stump");
  DatasetManifest m = corpus::synth_corpus(spec, dir);

  // Mean spectral centroid per clip, from the linear power spectrogram.
  auto centroid = [&](const std::string& rel) {
    frontend::Waveform w = frontend::load_audio(join_path(dir, rel));
    Tensor p = frontend::stft_power(w, 1024, 256, true);
    double acc = 0.0;
    for (int64_t t = 0; t < p.dim(1); ++t) {
      double num = 0.0, den = 0.0;
      for (int64_t k = 0; k < p.dim(0); ++k) {
        double f = static_cast<double>(k) * 16000.0 / 1024.0;
        num += f * p.at2(k, t);
        den += p.at2(k, t);
      }
      acc += den > 0 ? num / den : 0.0;
    }
    return acc / static_cast<double>(p.dim(1));
  };

  std::vector<std::pair<double, int>> samples;
  for (const auto& e : m.entries)
    if (e.domain == "dom0" && e.split == Split::Train) samples.push_back({centroid(e.path), e.label});
  REQUIRE(samples.size() >= 16);

  // Depth-1 decision stump: best threshold over midpoints, either polarity.
  std::sort(samples.begin(), samples.end());
  int best = 0;
  for (size_t i = 0; i + 1 < samples.size(); ++i) {
    double thr = 0.5 * (samples[i].first + samples[i + 1].first);
    int correct_hi = 0, correct_lo = 0;
    for (const auto& [c, y] : samples) {
      if ((c > thr ? 1 : 0) == y) ++correct_hi;
      if ((c > thr ? 0 : 1) == y) ++correct_lo;
    }
    best = std::max({best, correct_hi, correct_lo});
  }
  double acc = static_cast<double>(best) / static_cast<double>(samples.size());
  CHECK(acc >= 0.9);
}

TEST_CASE("synth_corpus spec validation") {
  corpus::SynthCorpusSpec spec;
  spec.num_domains = 1;
  CHECK_THROWS(spec.validate());
  spec.num_domains = 2;
  spec.clips_per_domain_per_class = 4;
  CHECK_THROWS(spec.validate());
}
