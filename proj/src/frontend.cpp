#include "moe/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace moe::frontend {

namespace {

uint32_t read_u32(std::istream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& f) {
  unsigned char b[2];
  f.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& f, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  f.write(reinterpret_cast<char*>(b), 2);
}

double kaiser_i0(double x) {
  // Series expansion of the zeroth-order modified Bessel function.
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

// Mirror an out-of-range index into [0, len) with reflect (no edge repeat).
int64_t reflect_index(int64_t i, int64_t len) {
  if (len == 1) return 0;
  int64_t period = 2 * (len - 1);
  i = ((i % period) + period) % period;
  return i < len ? i : period - i;
}

}  // namespace

void MelConfig::validate() const {
  if (n_fft <= 0 || (n_fft & (n_fft - 1)) != 0)
    throw std::invalid_argument("MelConfig: n_fft must be a positive power of two");
  if (hop <= 0 || hop > n_fft) throw std::invalid_argument("MelConfig: require 0 < hop <= n_fft");
  if (n_mels < 1) throw std::invalid_argument("MelConfig: n_mels must be >= 1");
  if (log_floor <= 0.0) throw std::invalid_argument("MelConfig: log_floor must be > 0");
  if (fmax <= fmin || fmin < 0.0) throw std::invalid_argument("MelConfig: bad fmin/fmax");
}

Waveform load_audio(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_audio: cannot open " + path);

  char tag[4];
  f.read(tag, 4);
  if (!f || std::memcmp(tag, "RIFF", 4) != 0)
    throw std::runtime_error("load_audio: not a RIFF file: " + path);
  read_u32(f);  // riff size
  f.read(tag, 4);
  if (!f || std::memcmp(tag, "WAVE", 4) != 0)
    throw std::runtime_error("load_audio: not a WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<char> payload;
  bool got_fmt = false, got_data = false;

  while (f && !(got_fmt && got_data)) {
    f.read(tag, 4);
    if (!f) break;
    uint32_t size = read_u32(f);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = read_u16(f);
      channels = read_u16(f);
      rate = read_u32(f);
      read_u32(f);  // byte rate
      read_u16(f);  // block align
      bits = read_u16(f);
      uint32_t consumed = 16;
      if (format == 0xFFFE && size >= 40) {
        read_u16(f);  // cbSize
        read_u16(f);  // valid bits
        read_u32(f);  // channel mask
        format = read_u16(f);
        f.seekg(14, std::ios::cur);  // rest of the sub-format GUID
        consumed = 40;
      }
      if (size > consumed) f.seekg(size - consumed, std::ios::cur);
      got_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      payload.resize(size);
      f.read(payload.data(), size);
      got_data = true;
    } else {
      f.seekg(size + (size & 1), std::ios::cur);
    }
  }

  if (!got_fmt || !got_data) throw std::runtime_error("load_audio: missing fmt/data chunk: " + path);
  if (channels == 0 || rate == 0) throw std::runtime_error("load_audio: malformed fmt chunk: " + path);
  if (format != 1 && format != 3)
    throw std::runtime_error("load_audio: unsupported format tag (want PCM or float): " + path);

  size_t bytes_per_sample = bits / 8;
  if (format == 1 && bits != 16 && bits != 24 && bits != 32)
    throw std::runtime_error("load_audio: unsupported PCM bit depth: " + path);
  if (format == 3 && bits != 32)
    throw std::runtime_error("load_audio: unsupported float bit depth: " + path);

  size_t frame_bytes = bytes_per_sample * channels;
  size_t n_frames = frame_bytes ? payload.size() / frame_bytes : 0;
  if (n_frames == 0) throw std::runtime_error("load_audio: zero-length audio: " + path);

  std::vector<double> mono(n_frames, 0.0);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* s = p + (i * channels + c) * bytes_per_sample;
      double v = 0.0;
      if (format == 3) {
        float fv;
        std::memcpy(&fv, s, 4);
        v = fv;
      } else if (bits == 16) {
        int16_t iv = static_cast<int16_t>(s[0] | (s[1] << 8));
        v = iv / 32768.0;
      } else if (bits == 24) {
        int32_t iv = s[0] | (s[1] << 8) | (s[2] << 16);
        if (iv & 0x800000) iv |= ~0xFFFFFF;
        v = iv / 8388608.0;
      } else {  // 32-bit int
        int32_t iv;
        std::memcpy(&iv, s, 4);
        v = iv / 2147483648.0;
      }
      acc += v;
    }
    mono[i] = acc / channels;
  }

  Waveform w;
  w.samples = (static_cast<int>(rate) == kSampleRate)
                  ? std::move(mono)
                  : resample(mono, static_cast<int>(rate), kSampleRate);
  w.sample_rate = kSampleRate;

  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 1.0)
    for (double& v : w.samples) v /= peak;
  return w;
}

void save_wav16(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_wav16: cannot open for writing " + path);

  uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  write_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  write_u32(f, 16);
  write_u16(f, 1);  // PCM
  write_u16(f, 1);  // mono
  write_u32(f, static_cast<uint32_t>(sample_rate));
  write_u32(f, static_cast<uint32_t>(sample_rate * 2));
  write_u16(f, 2);
  write_u16(f, 16);
  f.write("data", 4);
  write_u32(f, data_bytes);
  for (double v : samples) {
    double c = std::clamp(v, -1.0, 1.0);
    auto s = static_cast<int16_t>(std::lrint(c * 32767.0));
    unsigned char b[2] = {static_cast<unsigned char>(s & 0xff),
                          static_cast<unsigned char>((s >> 8) & 0xff)};
    f.write(reinterpret_cast<char*>(b), 2);
  }
  if (!f) throw std::runtime_error("save_wav16: write failed " + path);
}

Waveform fix_length(const Waveform& w, int64_t target) {
  if (w.samples.empty()) throw std::invalid_argument("fix_length: empty waveform");
  if (target <= 0) throw std::invalid_argument("fix_length: target must be positive");
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(static_cast<size_t>(target));
  int64_t len = static_cast<int64_t>(w.samples.size());
  for (int64_t i = 0; i < target; ++i)
    out.samples[static_cast<size_t>(i)] = w.samples[static_cast<size_t>(i % len)];
  return out;
}

std::vector<double> resample(const std::vector<double>& x, int fs_in, int fs_out) {
  if (fs_in <= 0 || fs_out <= 0) throw std::invalid_argument("resample: bad sample rates");
  if (fs_in == fs_out) return x;
  if (x.empty()) return {};

  int64_t g = std::gcd(fs_in, fs_out);
  int64_t up = fs_out / g;    // L
  int64_t down = fs_in / g;   // M

  // Kaiser-windowed sinc on the upsampled grid. 24 taps per phase with
  // beta = 8 gives roughly 80 dB of stopband attenuation.
  const int taps_per_phase = 24;
  const double beta = 8.0;
  int64_t T = taps_per_phase * up + 1;
  int64_t delay = (T - 1) / 2;
  double cutoff = 0.95 * M_PI / static_cast<double>(std::max(up, down));
  double i0_beta = kaiser_i0(beta);

  std::vector<double> h(static_cast<size_t>(T));
  for (int64_t m = 0; m < T; ++m) {
    double t = static_cast<double>(m - delay);
    double sinc = (t == 0.0) ? cutoff / M_PI : std::sin(cutoff * t) / (M_PI * t);
    double r = 2.0 * m / static_cast<double>(T - 1) - 1.0;
    double win = kaiser_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
    h[static_cast<size_t>(m)] = static_cast<double>(up) * sinc * win;
  }

  int64_t n_in = static_cast<int64_t>(x.size());
  int64_t n_out = (n_in * up + down - 1) / down;  // ceil
  std::vector<double> y(static_cast<size_t>(n_out), 0.0);
  for (int64_t n = 0; n < n_out; ++n) {
    int64_t pos = n * down + delay;  // position on the upsampled grid
    int64_t m0 = pos % up;           // first tap aligned with an input sample
    double acc = 0.0;
    for (int64_t m = m0; m < T; m += up) {
      int64_t i = (pos - m) / up;
      if (i >= 0 && i < n_in) acc += h[static_cast<size_t>(m)] * x[static_cast<size_t>(i)];
    }
    y[static_cast<size_t>(n)] = acc;
  }
  return y;
}

void fft_radix2(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft_radix2: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

Tensor stft_power(const Waveform& w, int n_fft, int hop, bool center) {
  int64_t len = static_cast<int64_t>(w.samples.size());
  if (len == 0) throw std::invalid_argument("stft_power: empty waveform");
  if (!center && len < n_fft)
    throw std::invalid_argument("stft_power: signal shorter than n_fft without center padding");

  int64_t n_frames = center ? 1 + len / hop : 1 + (len - n_fft) / hop;
  int64_t n_bins = n_fft / 2 + 1;
  int64_t pad = center ? n_fft / 2 : 0;

  // Periodic Hann window.
  std::vector<double> win(static_cast<size_t>(n_fft));
  for (int i = 0; i < n_fft; ++i)
    win[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n_fft);

  Tensor out({n_bins, n_frames});
  std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));
  for (int64_t t = 0; t < n_frames; ++t) {
    int64_t start = t * hop - pad;
    for (int i = 0; i < n_fft; ++i) {
      int64_t idx = start + i;
      double s;
      if (idx >= 0 && idx < len) s = w.samples[static_cast<size_t>(idx)];
      else if (center) s = w.samples[static_cast<size_t>(reflect_index(idx, len))];
      else s = 0.0;
      buf[static_cast<size_t>(i)] = s * win[static_cast<size_t>(i)];
    }
    fft_radix2(buf);
    for (int64_t k = 0; k < n_bins; ++k)
      out.at2(k, t) = std::norm(buf[static_cast<size_t>(k)]);
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor mel_filterbank(const MelConfig& cfg, int sample_rate) {
  cfg.validate();
  int64_t n_bins = cfg.n_fft / 2 + 1;
  Tensor fb({cfg.n_mels, n_bins});

  double mel_lo = hz_to_mel(cfg.fmin);
  double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> hz_pts(static_cast<size_t>(cfg.n_mels) + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m)
    hz_pts[static_cast<size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.n_mels + 1));

  for (int m = 0; m < cfg.n_mels; ++m) {
    double f_l = hz_pts[static_cast<size_t>(m)];
    double f_c = hz_pts[static_cast<size_t>(m) + 1];
    double f_r = hz_pts[static_cast<size_t>(m) + 2];
    for (int64_t k = 0; k < n_bins; ++k) {
      double fk = static_cast<double>(k) * sample_rate / cfg.n_fft;
      double up = (fk - f_l) / (f_c - f_l);
      double dn = (f_r - fk) / (f_r - f_c);
      fb.at2(m, k) = std::max(0.0, std::min(up, dn));
    }
  }
  return fb;
}

MelSpectrogram melspec(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  Tensor power = stft_power(w, cfg.n_fft, cfg.hop, cfg.center);
  Tensor fb = mel_filterbank(cfg, w.sample_rate);

  int64_t n_frames = power.dim(1);
  int64_t n_bins = power.dim(0);
  MelSpectrogram ms;
  ms.config = cfg;
  ms.values = Tensor({cfg.n_mels, n_frames});
  for (int m = 0; m < cfg.n_mels; ++m) {
    for (int64_t t = 0; t < n_frames; ++t) {
      double acc = 0.0;
      for (int64_t k = 0; k < n_bins; ++k) acc += fb.at2(m, k) * power.at2(k, t);
      ms.values.at2(m, t) = std::log(acc + cfg.log_floor);
    }
  }
  return ms;
}

}  // namespace moe::frontend
