#include "moe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "moe/frontend.hpp"
#include "moe/util.hpp"

namespace moe::corpus {

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Eval: return "eval";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "eval") return Split::Eval;
  throw std::invalid_argument("unknown split tag: '" + s + "'");
}

std::vector<ManifestEntry> DatasetManifest::filter(Split split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

std::vector<ManifestEntry> DatasetManifest::filter(Split split, const std::string& domain) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split && e.domain == domain) out.push_back(e);
  return out;
}

std::vector<std::string> DatasetManifest::domains() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.domain);
  return {s.begin(), s.end()};
}

static void sort_entries(std::vector<ManifestEntry>& v) {
  std::sort(v.begin(), v.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_manifest: cannot open " + path);

  DatasetManifest m;
  m.name = std::filesystem::path(path).stem().string();

  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_manifest: empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,domain,split")
    throw std::runtime_error("load_manifest: bad header (want 'path,label,domain,split'): " + path);

  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cols = split_csv_line(line);
    if (cols.size() != 4)
      throw std::runtime_error("load_manifest: " + path + ":" + std::to_string(line_no) +
                               ": expected 4 columns, got " + std::to_string(cols.size()));
    ManifestEntry e;
    e.path = cols[0];
    if (e.path.empty())
      throw std::runtime_error("load_manifest: " + path + ":" + std::to_string(line_no) +
                               ": empty path");
    if (cols[1] != "0" && cols[1] != "1")
      throw std::runtime_error("load_manifest: " + path + ":" + std::to_string(line_no) +
                               ": label must be 0 or 1, got '" + cols[1] + "'");
    e.label = cols[1] == "1" ? 1 : 0;
    e.domain = cols[2];
    try {
      e.split = parse_split(cols[3]);
    } catch (const std::exception& ex) {
      throw std::runtime_error("load_manifest: " + path + ":" + std::to_string(line_no) + ": " +
                               ex.what());
    }
    m.entries.push_back(std::move(e));
  }
  sort_entries(m.entries);
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::vector<ManifestEntry> entries = m.entries;
  sort_entries(entries);
  std::ostringstream out;
  out << "path,label,domain,split\n";
  for (const auto& e : entries)
    out << e.path << ',' << e.label << ',' << e.domain << ',' << split_name(e.split) << '\n';
  write_text_file(path, out.str());
}

DatasetManifest make_splits(const std::vector<ManifestEntry>& entries,
                            const std::array<double, 3>& ratios, uint64_t seed,
                            const std::string& name) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  for (double r : ratios)
    if (r < 0.0) throw std::invalid_argument("make_splits: ratios must be non-negative");
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("make_splits: ratios must sum to 1");
  int n_nonzero = 0;
  for (double r : ratios)
    if (r > 0.0) ++n_nonzero;
  if (n_nonzero == 0) throw std::invalid_argument("make_splits: all ratios are zero");

  DatasetManifest out;
  out.name = name;

  for (int label = 0; label <= 1; ++label) {
    std::vector<ManifestEntry> cls;
    for (const auto& e : entries)
      if (e.label == label) cls.push_back(e);
    if (cls.empty()) continue;
    int64_t n = static_cast<int64_t>(cls.size());
    if (n < n_nonzero)
      throw std::runtime_error("make_splits: cannot stratify label " + std::to_string(label) +
                               ": " + std::to_string(n) + " samples for " +
                               std::to_string(n_nonzero) + " splits");

    // Largest-remainder apportionment; rounding ties go to train, then dev.
    std::array<int64_t, 3> count{};
    std::array<double, 3> rem{};
    int64_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      double exact = ratios[static_cast<size_t>(s)] * static_cast<double>(n);
      count[static_cast<size_t>(s)] = static_cast<int64_t>(std::floor(exact));
      rem[static_cast<size_t>(s)] = exact - std::floor(exact);
      assigned += count[static_cast<size_t>(s)];
    }
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (rem[static_cast<size_t>(a)] != rem[static_cast<size_t>(b)])
        return rem[static_cast<size_t>(a)] > rem[static_cast<size_t>(b)];
      return a < b;
    });
    for (int64_t i = 0; i < n - assigned; ++i) ++count[static_cast<size_t>(order[static_cast<size_t>(i)])];

    // Deterministic within-class assignment; entries are pre-sorted so the
    // shuffle sees a canonical order regardless of caller ordering.
    sort_entries(cls);
    Rng rng(derive_seed(seed, "make_splits", static_cast<uint64_t>(label)));
    rng.shuffle(cls);

    int64_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (int64_t i = 0; i < count[static_cast<size_t>(s)]; ++i) {
        ManifestEntry e = cls[static_cast<size_t>(pos++)];
        e.split = static_cast<Split>(s);
        out.entries.push_back(std::move(e));
      }
    }
  }
  sort_entries(out.entries);
  return out;
}

BalancedBatcher::BalancedBatcher(const DatasetManifest& manifest, Split split, int batch_size,
                                 uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw std::invalid_argument("BalancedBatcher: batch_size must be a positive even number");
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    (e.label == 0 ? real_ : fake_).push_back(e);
  }
  if (real_.empty() || fake_.empty())
    throw std::runtime_error("BalancedBatcher: split '" + std::string(split_name(split)) +
                             "' does not contain both classes");
  int64_t half = batch_size / 2;
  int64_t majority = static_cast<int64_t>(std::max(real_.size(), fake_.size()));
  batches_per_epoch_ = (majority + half - 1) / half;
}

std::vector<std::vector<ManifestEntry>> BalancedBatcher::epoch_batches(int64_t epoch) const {
  int64_t half = batch_size_ / 2;
  int64_t needed = batches_per_epoch_ * half;

  auto epoch_order = [&](const std::vector<ManifestEntry>& cls, const char* tag) {
    Rng rng(derive_seed(derive_seed(seed_, tag), "epoch", static_cast<uint64_t>(epoch)));
    std::vector<ManifestEntry> order = cls;
    rng.shuffle(order);
    // Resample with replacement beyond one full pass over the class.
    while (static_cast<int64_t>(order.size()) < needed)
      order.push_back(cls[static_cast<size_t>(rng.uniform_int(cls.size()))]);
    return order;
  };

  std::vector<ManifestEntry> r = epoch_order(real_, "real");
  std::vector<ManifestEntry> f = epoch_order(fake_, "fake");

  std::vector<std::vector<ManifestEntry>> batches;
  batches.reserve(static_cast<size_t>(batches_per_epoch_));
  for (int64_t b = 0; b < batches_per_epoch_; ++b) {
    std::vector<ManifestEntry> batch;
    batch.reserve(static_cast<size_t>(batch_size_));
    for (int64_t i = 0; i < half; ++i) batch.push_back(r[static_cast<size_t>(b * half + i)]);
    for (int64_t i = 0; i < half; ++i) batch.push_back(f[static_cast<size_t>(b * half + i)]);
    batches.push_back(std::move(batch));
  }
  return batches;
}

void SynthCorpusSpec::validate() const {
  if (num_domains < 2) throw std::invalid_argument("SynthCorpusSpec: num_domains must be >= 2");
  if (clips_per_domain_per_class < 8)
    throw std::invalid_argument("SynthCorpusSpec: clips_per_domain_per_class must be >= 8");
  if (clip_seconds <= 0.0) throw std::invalid_argument("SynthCorpusSpec: clip_seconds must be > 0");
}

std::string synth_domain_name(int k) { return "dom" + std::to_string(k); }

namespace {

struct DomainRecipe {
  double f0_lo, f0_hi;   // fundamental band, Hz
  double noise_floor;    // linear amplitude
  int artifact_family;   // 0 comb noise, 1 AM, 2 band hiss, 3 spur tones
  int variant;           // parameter shift for domains beyond the first four
};

DomainRecipe recipe_for(int k) {
  DomainRecipe r;
  r.f0_lo = 100.0 + 70.0 * k;
  r.f0_hi = 150.0 + 70.0 * k;
  r.noise_floor = std::pow(10.0, -(40.0 + 2.0 * k) / 20.0);
  r.artifact_family = k % 4;
  r.variant = k / 4;
  return r;
}

// Low-pass FIR via Hann-windowed sinc, used to shape the band-limited hiss.
std::vector<double> lowpass_fir(double cutoff_hz, int fs, int taps) {
  std::vector<double> h(static_cast<size_t>(taps));
  double wc = 2.0 * M_PI * cutoff_hz / fs;
  int mid = (taps - 1) / 2;
  for (int i = 0; i < taps; ++i) {
    double t = i - mid;
    double sinc = (t == 0.0) ? wc / M_PI : std::sin(wc * t) / (M_PI * t);
    double win = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (taps - 1));
    h[static_cast<size_t>(i)] = sinc * win;
  }
  return h;
}

std::vector<double> fir_filter(const std::vector<double>& x, const std::vector<double>& h) {
  std::vector<double> y(x.size(), 0.0);
  int64_t n = static_cast<int64_t>(x.size());
  int64_t t = static_cast<int64_t>(h.size());
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    int64_t kmax = std::min(t, i + 1);
    for (int64_t k = 0; k < kmax; ++k) acc += h[static_cast<size_t>(k)] * x[static_cast<size_t>(i - k)];
    y[static_cast<size_t>(i)] = acc;
  }
  return y;
}

std::vector<double> synth_clip(const DomainRecipe& r, int label, int n, int fs, Rng& rng) {
  std::vector<double> x(static_cast<size_t>(n), 0.0);

  double f0 = rng.uniform(r.f0_lo, r.f0_hi);
  int n_harm = std::min(30, static_cast<int>(7200.0 / f0));
  double env_freq = rng.uniform(0.3, 1.0);
  double env_phase = rng.uniform(0.0, 2.0 * M_PI);
  double am_depth = 0.85;
  double am_freq = 6.0 + 0.5 * r.variant;
  double am_phase = rng.uniform(0.0, 2.0 * M_PI);

  std::vector<double> harm_phase(static_cast<size_t>(n_harm));
  for (auto& p : harm_phase) p = rng.uniform(0.0, 2.0 * M_PI);

  for (int h = 1; h <= n_harm; ++h) {
    double amp = std::pow(static_cast<double>(h), -1.1);
    double w = 2.0 * M_PI * f0 * h / fs;
    double ph = harm_phase[static_cast<size_t>(h - 1)];
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] += amp * std::sin(w * i + ph);
  }
  // Slow amplitude drift shared by both classes.
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / fs;
    x[static_cast<size_t>(i)] *= 1.0 + 0.15 * std::sin(2.0 * M_PI * env_freq * t + env_phase);
  }
  // Fake clips in AM domains carry a deep tremolo on the harmonic part.
  if (label == 1 && r.artifact_family == 1) {
    for (int i = 0; i < n; ++i) {
      double t = static_cast<double>(i) / fs;
      double env = 1.0 - am_depth * (0.5 + 0.5 * std::sin(2.0 * M_PI * am_freq * t + am_phase));
      x[static_cast<size_t>(i)] *= env;
    }
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  double gain = rng.uniform(0.55, 0.75) / std::max(peak, 1e-12);
  for (double& v : x) v *= gain;

  for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] += r.noise_floor * rng.normal();

  if (label == 1) {
    switch (r.artifact_family) {
      case 0: {  // comb-filtered noise, broadband with ~1 kHz spectral ridges
        int delay = 16 + 2 * r.variant;
        double level = 0.12;
        std::vector<double> e(static_cast<size_t>(n));
        for (auto& v : e) v = rng.normal();
        for (int i = 0; i < n; ++i) {
          double prev = i >= delay ? e[static_cast<size_t>(i - delay)] : 0.0;
          x[static_cast<size_t>(i)] += level * 0.5 * (e[static_cast<size_t>(i)] + prev);
        }
        break;
      }
      case 1:
        break;  // handled above (AM on the harmonic stack)
      case 2: {  // band-limited hiss around 6 kHz
        double center = 6000.0 - 400.0 * r.variant;
        std::vector<double> e(static_cast<size_t>(n));
        for (auto& v : e) v = rng.normal();
        std::vector<double> lp = fir_filter(e, lowpass_fir(800.0, fs, 101));
        double ph = rng.uniform(0.0, 2.0 * M_PI);
        for (int i = 0; i < n; ++i)
          x[static_cast<size_t>(i)] += 0.30 * lp[static_cast<size_t>(i)] *
                                       std::sin(2.0 * M_PI * center * i / fs + ph);
        break;
      }
      case 3: {  // pair of inharmonic spur tones near 4 kHz
        double f1 = 3800.0 + 120.0 * r.variant + rng.uniform(-40.0, 40.0);
        double f2 = 4150.0 + 120.0 * r.variant + rng.uniform(-40.0, 40.0);
        double p1 = rng.uniform(0.0, 2.0 * M_PI);
        double p2 = rng.uniform(0.0, 2.0 * M_PI);
        for (int i = 0; i < n; ++i) {
          double t = static_cast<double>(i) / fs;
          x[static_cast<size_t>(i)] += 0.16 * (std::sin(2.0 * M_PI * f1 * t + p1) +
                                               std::sin(2.0 * M_PI * f2 * t + p2));
        }
        break;
      }
    }
  }

  peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.98)
    for (double& v : x) v *= 0.98 / peak;
  return x;
}

}  // namespace

DatasetManifest synth_corpus(const SynthCorpusSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "audio", ec);
  if (ec) throw std::runtime_error("synth_corpus: cannot create " + out_dir + "/audio: " + ec.message());

  int fs_hz = frontend::kSampleRate;
  int n = static_cast<int>(std::lround(spec.clip_seconds * fs_hz));

  DatasetManifest manifest;
  manifest.name = "synth";
  for (int k = 0; k < spec.num_domains; ++k) {
    DomainRecipe recipe = recipe_for(k);
    std::vector<ManifestEntry> domain_entries;
    for (int label = 0; label <= 1; ++label) {
      for (int idx = 0; idx < spec.clips_per_domain_per_class; ++idx) {
        uint64_t clip_key = (static_cast<uint64_t>(k) << 32) |
                            (static_cast<uint64_t>(label) << 24) | static_cast<uint64_t>(idx);
        Rng rng(derive_seed(spec.seed, "synth-clip", clip_key));
        std::vector<double> clip = synth_clip(recipe, label, n, fs_hz, rng);

        char name[64];
        std::snprintf(name, sizeof(name), "%s_%s_%04d.wav", synth_domain_name(k).c_str(),
                      label == 0 ? "real" : "fake", idx);
        std::string rel = std::string("audio/") + name;
        frontend::save_wav16(join_path(out_dir, rel), clip, fs_hz);

        ManifestEntry e;
        e.path = rel;
        e.label = label;
        e.domain = synth_domain_name(k);
        domain_entries.push_back(std::move(e));
      }
    }
    DatasetManifest split_dom = make_splits(domain_entries, {0.6, 0.2, 0.2},
                                            derive_seed(spec.seed, "synth-splits", static_cast<uint64_t>(k)));
    for (auto& e : split_dom.entries) manifest.entries.push_back(std::move(e));
  }
  sort_entries(manifest.entries);
  write_manifest(manifest, join_path(out_dir, "manifest.csv"));
  return manifest;
}

}  // namespace moe::corpus
