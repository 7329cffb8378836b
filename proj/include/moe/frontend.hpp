#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "moe/tensor.hpp"

namespace moe::frontend {

inline constexpr int kSampleRate = 16000;
inline constexpr int64_t kWindowSamples = 48000;  // 3 s at 16 kHz

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = kSampleRate;
};

struct MelConfig {
  int n_fft = 1024;
  int hop = 256;
  int n_mels = 80;
  double log_floor = 1e-6;
  bool center = true;  // reflect padding by n_fft/2 on both sides
  double fmin = 0.0;
  double fmax = 8000.0;

  void validate() const;
};

struct MelSpectrogram {
  Tensor values;  // n_mels x n_frames, natural-log mel power
  MelConfig config;

  int64_t n_mels() const { return values.dim(0); }
  int64_t n_frames() const { return values.dim(1); }
};

/// Reads a PCM WAV file (16/24/32-bit int or 32-bit float, any rate, any
/// channel count), averages channels to mono, resamples to 16 kHz if needed
/// and rescales so the peak stays within [-1, 1].
Waveform load_audio(const std::string& path);

/// Writes 16-bit PCM mono WAV. Samples are clamped to [-1, 1].
void save_wav16(const std::string& path, const std::vector<double>& samples, int sample_rate);

/// Enforces the fixed 3 s analysis window: shorter inputs are tiled
/// (repeat-concatenated) up to `target` samples, longer ones keep the head.
Waveform fix_length(const Waveform& w, int64_t target = kWindowSamples);

/// Polyphase windowed-sinc resampler (Kaiser window, ~80 dB stopband).
/// Output length is ceil(n_in * fs_out / fs_in).
std::vector<double> resample(const std::vector<double>& x, int fs_in, int fs_out);

/// STFT power spectrogram, (n_fft/2 + 1) x n_frames, periodic Hann window.
/// With center=true the signal is reflect-padded by n_fft/2 per side and
/// n_frames == 1 + floor(len / hop).
Tensor stft_power(const Waveform& w, int n_fft, int hop, bool center);

/// Triangular HTK-style mel filterbank, n_mels x (n_fft/2 + 1).
Tensor mel_filterbank(const MelConfig& cfg, int sample_rate);

/// Log-mel spectrogram: mel_filterbank * stft_power, then ln(. + log_floor).
MelSpectrogram melspec(const Waveform& w, const MelConfig& cfg = MelConfig{});

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

}  // namespace moe::frontend
