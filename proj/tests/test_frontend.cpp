#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "moe/frontend.hpp"
#include "moe/util.hpp"
#include "test_util.hpp"

using namespace moe;
using frontend::MelConfig;
using frontend::Waveform;

namespace {

Waveform random_waveform(int64_t n, uint64_t seed, double amp = 0.5) {
  Waveform w;
  Rng rng(seed);
  w.samples.resize(static_cast<size_t>(n));
  for (auto& s : w.samples) s = rng.uniform(-amp, amp);
  return w;
}

}  // namespace

TEST_CASE("wav round trip: 16 kHz mono comes back unchanged up to quantization") {
  std::string dir = testutil::temp_dir("fe_roundtrip");
  Waveform w = random_waveform(48000, 1);
  frontend::save_wav16(dir + "/a.wav", w.samples, 16000);
  Waveform r = frontend::load_audio(dir + "/a.wav");
  REQUIRE(r.samples.size() == 48000);
  CHECK(r.sample_rate == 16000);
  double max_err = 0.0;
  for (size_t i = 0; i < r.samples.size(); ++i)
    max_err = std::max(max_err, std::abs(r.samples[i] - w.samples[i]));
  CHECK(max_err <= 1.0 / 32768.0 + 1e-9);
}

TEST_CASE("load_audio averages channels to mono") {
  std::string dir = testutil::temp_dir("fe_stereo");
  Waveform base = random_waveform(4000, 2);

  // Identical channels: mono output equals either channel.
  testutil::write_wav_pcm(dir + "/same.wav", {base.samples, base.samples}, 16000, 16);
  Waveform same = frontend::load_audio(dir + "/same.wav");
  REQUIRE(same.samples.size() == 4000);
  for (size_t i = 0; i < 100; ++i)
    CHECK(std::abs(same.samples[i] - base.samples[i]) <= 1.0 / 32768.0 + 1e-9);

  // Opposite channels cancel.
  std::vector<double> neg(base.samples.size());
  for (size_t i = 0; i < neg.size(); ++i) neg[i] = -base.samples[i];
  testutil::write_wav_pcm(dir + "/opp.wav", {base.samples, neg}, 16000, 16);
  Waveform opp = frontend::load_audio(dir + "/opp.wav");
  for (size_t i = 0; i < 100; ++i) CHECK(std::abs(opp.samples[i]) <= 1.0 / 32768.0 + 1e-9);
}

TEST_CASE("load_audio reads 24-bit and 32-bit PCM") {
  std::string dir = testutil::temp_dir("fe_depth");
  Waveform w = random_waveform(2000, 3);
  for (int bits : {24, 32}) {
    std::string p = dir + "/d" + std::to_string(bits) + ".wav";
    testutil::write_wav_pcm(p, {w.samples}, 16000, bits);
    Waveform r = frontend::load_audio(p);
    REQUIRE(r.samples.size() == 2000);
    for (size_t i = 0; i < 200; ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 2e-6);
  }
}

TEST_CASE("load_audio resamples 32 kHz to 16 kHz with the exact length rule") {
  std::string dir = testutil::temp_dir("fe_resample");
  Waveform w = random_waveform(96000, 4);
  testutil::write_wav_pcm(dir + "/r.wav", {w.samples}, 32000, 16);
  Waveform r = frontend::load_audio(dir + "/r.wav");
  CHECK(r.samples.size() == 48000);
  CHECK(r.sample_rate == 16000);
}

TEST_CASE("load_audio rejects unreadable or empty input") {
  std::string dir = testutil::temp_dir("fe_errors");
  CHECK_THROWS(frontend::load_audio(dir + "/missing.wav"));
  write_text_file(dir + "/junk.wav", "definitely not a wav file");
  CHECK_THROWS(frontend::load_audio(dir + "/junk.wav"));
}

TEST_CASE("resampler: 2:1 decimation of a pure tone stays within the stopband error") {
  int64_t n_in = 64000;
  std::vector<double> x(static_cast<size_t>(n_in));
  for (int64_t i = 0; i < n_in; ++i)
    x[static_cast<size_t>(i)] = 0.8 * std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 32000.0);
  std::vector<double> y = frontend::resample(x, 32000, 16000);
  REQUIRE(y.size() == 32000);
  double max_err = 0.0;
  for (size_t i = 400; i + 400 < y.size(); ++i) {
    double ideal = 0.8 * std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 16000.0);
    max_err = std::max(max_err, std::abs(y[i] - ideal));
  }
  CHECK(max_err <= 1e-3);  // >= 60 dB below the 0.8 carrier
}

TEST_CASE("resampler handles rational ratios (22050 -> 16000)") {
  int64_t n_in = 22050;
  std::vector<double> x(static_cast<size_t>(n_in));
  for (int64_t i = 0; i < n_in; ++i)
    x[static_cast<size_t>(i)] = 0.7 * std::sin(2.0 * M_PI * 500.0 * static_cast<double>(i) / 22050.0);
  std::vector<double> y = frontend::resample(x, 22050, 16000);
  REQUIRE(y.size() == (n_in * 320 + 440) / 441);
  double max_err = 0.0;
  for (size_t i = 400; i + 400 < y.size(); ++i) {
    double ideal = 0.7 * std::sin(2.0 * M_PI * 500.0 * static_cast<double>(i) / 16000.0);
    max_err = std::max(max_err, std::abs(y[i] - ideal));
  }
  CHECK(max_err <= 2e-3);
}

TEST_CASE("fix_length: tiling, truncation, idempotence at the spec'd lengths") {
  for (int64_t len : {int64_t{1}, int64_t{16000}, int64_t{20000}, int64_t{47999}, int64_t{48000},
                      int64_t{48001}, int64_t{50000}}) {
    Waveform w = random_waveform(len, 100 + static_cast<uint64_t>(len));
    Waveform f = frontend::fix_length(w);
    REQUIRE(f.samples.size() == 48000);

    // Tiling oracle: out[i] == in[i mod len]; truncation keeps the head.
    for (int64_t i = 0; i < 48000; ++i) {
      double expect = w.samples[static_cast<size_t>(i % len)];
      CHECK(f.samples[static_cast<size_t>(i)] == expect);
    }

    Waveform ff = frontend::fix_length(f);
    CHECK(testutil::bytes_equal(ff.samples, f.samples));
  }
  CHECK_THROWS(frontend::fix_length(Waveform{}));
}

TEST_CASE("fix_length: 16000 samples repeat exactly three times") {
  Waveform w = random_waveform(16000, 8);
  Waveform f = frontend::fix_length(w);
  for (int64_t i = 0; i < 16000; ++i) {
    CHECK(f.samples[static_cast<size_t>(i)] == w.samples[static_cast<size_t>(i)]);
    CHECK(f.samples[static_cast<size_t>(i + 16000)] == w.samples[static_cast<size_t>(i)]);
    CHECK(f.samples[static_cast<size_t>(i + 32000)] == w.samples[static_cast<size_t>(i)]);
  }
}

TEST_CASE("melspec: 48000 samples with defaults give an 80 x 188 matrix") {
  Waveform w = random_waveform(48000, 5);
  frontend::MelSpectrogram ms = frontend::melspec(w);
  CHECK(ms.n_mels() == 80);
  CHECK(ms.n_frames() == 188);  // 1 + floor(48000 / 256)
}

TEST_CASE("melspec of silence is exactly log(log_floor)") {
  Waveform w;
  w.samples.assign(48000, 0.0);
  frontend::MelSpectrogram ms = frontend::melspec(w);
  double expect = std::log(1e-6);
  for (int64_t i = 0; i < ms.values.numel(); ++i) CHECK(ms.values[i] == expect);
}

TEST_CASE("melspec: a 1 kHz tone peaks in the filterbank's nearest mel bin, every frame") {
  Waveform w;
  w.samples.resize(48000);
  for (int64_t i = 0; i < 48000; ++i)
    w.samples[static_cast<size_t>(i)] = 0.7 * std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 16000.0);
  frontend::MelSpectrogram ms = frontend::melspec(w);

  // Filterbank center-frequency oracle, straight from the mel formulas.
  MelConfig cfg;
  double mel_lo = 2595.0 * std::log10(1.0 + 0.0 / 700.0);
  double mel_hi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  int expect_bin = 0;
  double best = 1e18;
  for (int m = 0; m < cfg.n_mels; ++m) {
    double center_mel = mel_lo + (mel_hi - mel_lo) * (m + 1) / (cfg.n_mels + 1);
    double center_hz = 700.0 * (std::pow(10.0, center_mel / 2595.0) - 1.0);
    if (std::abs(center_hz - 1000.0) < best) {
      best = std::abs(center_hz - 1000.0);
      expect_bin = m;
    }
  }

  for (int64_t t = 2; t < ms.n_frames() - 2; ++t) {
    int64_t argmax = 0;
    for (int64_t m = 1; m < ms.n_mels(); ++m)
      if (ms.values.at2(m, t) > ms.values.at2(argmax, t)) argmax = m;
    CHECK(argmax == expect_bin);
  }
}

TEST_CASE("melspec is shift-faithful at frame granularity") {
  Waveform x = random_waveform(48000, 6);
  Waveform y;
  y.samples.resize(48000);
  Rng rng(7);
  for (int i = 0; i < 256; ++i) y.samples[static_cast<size_t>(i)] = rng.uniform(-0.5, 0.5);
  for (int64_t i = 256; i < 48000; ++i)
    y.samples[static_cast<size_t>(i)] = x.samples[static_cast<size_t>(i - 256)];

  frontend::MelSpectrogram mx = frontend::melspec(x);
  frontend::MelSpectrogram my = frontend::melspec(y);
  // Interior frames: the delayed window must stay clear of both the fresh
  // head samples and the reflect padding at the truncated tail.
  for (int64_t t = 2; t <= 184; ++t)
    for (int64_t m = 0; m < 80; ++m)
      CHECK(std::abs(mx.values.at2(m, t) - my.values.at2(m, t + 1)) <= 1e-5);
}

TEST_CASE("melspec values are finite and floored for random input") {
  Waveform w = random_waveform(20000, 9, 1.0);
  frontend::MelSpectrogram ms = frontend::melspec(w);
  double floor_val = std::log(1e-6);
  for (int64_t i = 0; i < ms.values.numel(); ++i) {
    CHECK(std::isfinite(ms.values[i]));
    CHECK(ms.values[i] >= floor_val - 1e-12);
  }
}

TEST_CASE("melspec frame-count formula holds across lengths") {
  Rng rng(10);
  for (int trial = 0; trial < 8; ++trial) {
    int64_t len = 300 + static_cast<int64_t>(rng.uniform_int(60000));
    Waveform w = random_waveform(len, 50 + static_cast<uint64_t>(trial));
    frontend::MelSpectrogram ms = frontend::melspec(w);
    CHECK(ms.n_frames() == 1 + len / 256);
  }
}

TEST_CASE("stft/mel preconditions") {
  MelConfig cfg;
  cfg.hop = 2048;
  CHECK_THROWS(cfg.validate());
  cfg = MelConfig{};
  cfg.log_floor = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = MelConfig{};
  cfg.center = false;
  Waveform w = random_waveform(512, 11);
  CHECK_THROWS(frontend::melspec(w, cfg));  // shorter than n_fft without centering
}
