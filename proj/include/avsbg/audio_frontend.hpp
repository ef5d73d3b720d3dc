#pragma once

// Log-mel spectrogram segments, one per video frame, with VGGish-style
// framing: 25 ms periodic-Hann windows every 10 ms, 96 frames (0.96 s) per
// segment, 64 mel bands between 125 Hz and 7.5 kHz, log(power + floor).

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "avsbg/tensor.hpp"

namespace avsbg::audio {

struct MelParams {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int frames_per_segment = 96;
  int n_mels = 64;
  double fmin_hz = 125.0;
  double fmax_hz = 7500.0;
  double log_floor = 1e-6;
};

struct MelSegmentBatch {
  Tensor segments;  // [T, frames_per_segment, n_mels]
  MelParams params;
  bool padded = false;
  std::string warning;
};

inline double hertz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }

inline int window_samples(const MelParams& p, int sample_rate) {
  return static_cast<int>(std::lround(sample_rate * p.window_ms / 1000.0));
}
inline int hop_samples(const MelParams& p, int sample_rate) {
  return static_cast<int>(std::lround(sample_rate * p.hop_ms / 1000.0));
}
inline int fft_length(int window) {
  int n = 1;
  while (n < window) n <<= 1;
  return n;
}

/// Weight of mel band `band` at frequency `hz` (triangles equally spaced in mel).
inline double mel_band_weight(double hz, int band, const MelParams& p) {
  const double lo = hertz_to_mel(p.fmin_hz), hi = hertz_to_mel(p.fmax_hz);
  const double step = (hi - lo) / (p.n_mels + 1);
  const double left = lo + band * step, centre = left + step, right = centre + step;
  const double m = hertz_to_mel(hz);
  return std::max(0.0, std::min((m - left) / (centre - left), (right - m) / (right - centre)));
}

/// [n_fft/2+1, n_mels] filterbank; the DC bin carries no weight.
inline Tensor mel_filterbank(int n_fft, int sample_rate, const MelParams& p) {
  const int bins = n_fft / 2 + 1;
  Tensor fb({bins, p.n_mels});
  const double nyquist = sample_rate / 2.0;
  for (int k = 1; k < bins; ++k) {
    const double hz = nyquist * k / (bins - 1);
    for (int b = 0; b < p.n_mels; ++b) fb.at(k, b) = mel_band_weight(hz, b, p);
  }
  return fb;
}

inline std::vector<double> periodic_hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / n);
  return w;
}

/// Sample index of the first STFT window of segment t (segment centred on t + 0.5 s).
inline long segment_start(int t, int sample_rate, const MelParams& p) {
  const long centre = std::lround((t + 0.5) * sample_rate);
  return centre - static_cast<long>(p.frames_per_segment) * hop_samples(p, sample_rate) / 2;
}

/// Power spectrum |X_k|^2 of one zero-padded, windowed frame.
inline std::vector<double> power_spectrum(std::span<const double> frame, int n_fft) {
  std::vector<double> buf(static_cast<std::size_t>(n_fft), 0.0);
  std::copy(frame.begin(), frame.end(), buf.begin());
  std::vector<std::complex<double>> bins;
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  fft.fwd(bins, buf);
  std::vector<double> out(static_cast<std::size_t>(n_fft / 2 + 1));
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::norm(bins[k]);
  return out;
}

inline MelSegmentBatch melspectrogram(std::span<const double> waveform, int sample_rate, int frames,
                                      const MelParams& p = {}) {
  if (frames < 1 || sample_rate <= 0) throw ArgumentError("melspectrogram: frames and sample_rate must be positive");
  const int win = window_samples(p, sample_rate), hop = hop_samples(p, sample_rate), n_fft = fft_length(win);
  const Tensor fb = mel_filterbank(n_fft, sample_rate, p);
  const std::vector<double> hann = periodic_hann(win);
  const int bins = n_fft / 2 + 1;

  MelSegmentBatch out{Tensor({frames, p.frames_per_segment, p.n_mels}), p, false, {}};
  const auto len = static_cast<long>(waveform.size());
  if (len < static_cast<long>(frames) * sample_rate) {
    out.padded = true;
    out.warning = "waveform has " + std::to_string(len) + " samples, expected at least " +
                  std::to_string(static_cast<long>(frames) * sample_rate) + "; zero-padded";
  }
  std::vector<double> frame(static_cast<std::size_t>(win));
  for (int t = 0; t < frames; ++t) {
    const long start = segment_start(t, sample_rate, p);
    for (int r = 0; r < p.frames_per_segment; ++r) {
      const long s0 = start + static_cast<long>(r) * hop;
      for (int i = 0; i < win; ++i) {
        const long s = s0 + i;
        const double x = (s >= 0 && s < len) ? waveform[static_cast<std::size_t>(s)] : 0.0;
        if (s < 0 || s >= len) out.padded = true;
        frame[static_cast<std::size_t>(i)] = x * hann[static_cast<std::size_t>(i)];
      }
      const std::vector<double> power = power_spectrum(frame, n_fft);
      for (int b = 0; b < p.n_mels; ++b) {
        double e = 0.0;
        for (int k = 0; k < bins; ++k) e += power[static_cast<std::size_t>(k)] * fb.at(k, b);
        out.segments.at(t, r, b) = std::log(e + p.log_floor);
      }
    }
  }
  if (out.padded && out.warning.empty()) out.warning = "segment windows extend past the waveform; zero-padded";
  return out;
}

}  // namespace avsbg::audio
