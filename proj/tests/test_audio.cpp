#include <gtest/gtest.h>

#include <numbers>

#include "avsbg/audio_frontend.hpp"
#include "oracles.hpp"

using namespace avsbg;
using namespace avsbg::audio;

namespace {

constexpr int kRate = 16000;

std::vector<double> tone(double hz, double seconds, double amp = 0.5) {
  std::vector<double> x(static_cast<std::size_t>(seconds * kRate));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / kRate);
  return x;
}

// Log-mel row recomputed with a direct DFT and independently coded triangles.
std::vector<double> oracle_row(const std::vector<double>& wave, long start) {
  const int win = 400, n_fft = 512, mels = 64;
  std::vector<double> frame(win);
  for (int i = 0; i < win; ++i) {
    const long s = start + i;
    const double x = s >= 0 && s < static_cast<long>(wave.size()) ? wave[static_cast<std::size_t>(s)] : 0.0;
    frame[static_cast<std::size_t>(i)] = x * (0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / win));
  }
  const auto power = oracle::dft_power(frame, n_fft);
  auto mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  const double lo = mel(125.0), hi = mel(7500.0), step = (hi - lo) / (mels + 1);
  std::vector<double> row(mels);
  for (int b = 0; b < mels; ++b) {
    double e = 0;
    for (int k = 1; k <= n_fft / 2; ++k) {
      const double m = mel(8000.0 * k / (n_fft / 2));
      const double l = lo + b * step, c = l + step, r = c + step;
      double w = 0;
      if (m > l && m <= c) w = (m - l) / step;
      else if (m > c && m < r) w = (r - m) / step;
      e += w * power[static_cast<std::size_t>(k)];
    }
    row[static_cast<std::size_t>(b)] = std::log(e + 1e-6);
  }
  return row;
}

}  // namespace

TEST(MelFrontend, DerivedGeometry) {
  const MelParams p;
  EXPECT_EQ(window_samples(p, kRate), 400);
  EXPECT_EQ(hop_samples(p, kRate), 160);
  EXPECT_EQ(fft_length(400), 512);
  const auto batch = melspectrogram(tone(440, 5), kRate, 5);
  EXPECT_EQ(batch.segments.shape(), (Shape{5, 96, 64}));
  EXPECT_FALSE(batch.padded);
  EXPECT_TRUE(batch.warning.empty());
}

TEST(MelFrontend, SilenceIsLogFloorEverywhere) {
  const std::vector<double> zeros(5 * kRate, 0.0);
  const auto batch = melspectrogram(zeros, kRate, 5);
  for (double v : batch.segments.values()) EXPECT_EQ(v, std::log(1e-6));
}

TEST(MelFrontend, ValuesNeverBelowFloor) {
  std::mt19937_64 rng(1);
  const Tensor noise = oracle::random_tensor({5 * kRate}, rng);
  const auto batch = melspectrogram(noise.values(), kRate, 5);
  for (double v : batch.segments.values()) EXPECT_GE(v, std::log(1e-6));
}

TEST(MelFrontend, MatchesDirectDftOracle) {
  const auto wave = tone(440, 5);
  const auto batch = melspectrogram(wave, kRate, 5);
  for (int t : {0, 2, 4})
    for (int r : {0, 47, 95}) {
      const auto want = oracle_row(wave, segment_start(t, kRate, MelParams{}) + r * 160L);
      for (int b = 0; b < 64; ++b) EXPECT_NEAR(batch.segments.at(t, r, b), want[static_cast<std::size_t>(b)], 1e-7);
    }
}

TEST(MelFrontend, PureToneLandsInItsMelBand) {
  const auto batch = melspectrogram(tone(440, 5), kRate, 5);
  // band whose triangle peaks closest to 440 Hz
  int expected = 0;
  double best = -1;
  for (int b = 0; b < 64; ++b) {
    const double w = mel_band_weight(440.0, b, MelParams{});
    if (w > best) best = w, expected = b;
  }
  for (int t = 0; t < 5; ++t)
    for (int r = 0; r < 96; ++r) {
      int arg = 0;
      for (int b = 1; b < 64; ++b)
        if (batch.segments.at(t, r, b) > batch.segments.at(t, r, arg)) arg = b;
      EXPECT_EQ(arg, expected) << "t=" << t << " row=" << r;
    }
}

TEST(MelFrontend, OneHopShiftMovesRowsByOne) {
  std::mt19937_64 rng(3);
  const Tensor base = oracle::random_tensor({5 * kRate}, rng);
  std::vector<double> shifted(160, 0.0);
  shifted.insert(shifted.end(), base.values().begin(), base.values().end() - 160);
  const auto a = melspectrogram(base.values(), kRate, 5).segments;
  const auto b = melspectrogram(shifted, kRate, 5).segments;
  for (int t = 1; t < 5; ++t)
    for (int r = 1; r < 96; ++r)
      for (int m = 0; m < 64; ++m) EXPECT_NEAR(b.at(t, r, m), a.at(t, r - 1, m), 1e-9);
}

TEST(MelFrontend, GainAddsLogSquareAboveFloor) {
  std::mt19937_64 rng(5);
  const Tensor base = oracle::random_tensor({5 * kRate}, rng, -0.1, 0.1);
  const double c = 3.0;
  std::vector<double> louder(base.values().begin(), base.values().end());
  for (double& x : louder) x *= c;
  const auto a = melspectrogram(base.values(), kRate, 5).segments;
  const auto b = melspectrogram(louder, kRate, 5).segments;
  int checked = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > std::log(1e-2)) {
      EXPECT_NEAR(b[i] - a[i], std::log(c * c), 1e-3);
      ++checked;
    }
  EXPECT_GT(checked, 1000);
}

TEST(MelFrontend, ShortWaveformIsPaddedWithWarning) {
  const auto batch = melspectrogram(tone(440, 2.5), kRate, 5);
  EXPECT_TRUE(batch.padded);
  EXPECT_FALSE(batch.warning.empty());
  EXPECT_EQ(batch.segments.shape(), (Shape{5, 96, 64}));
  const Tensor last = batch.segments.slice0(4, 1);
  for (double v : last.values()) EXPECT_EQ(v, std::log(1e-6));
}

TEST(MelFrontend, RejectsBadArguments) {
  const std::vector<double> x(kRate);
  EXPECT_THROW(melspectrogram(x, kRate, 0), ArgumentError);
  EXPECT_THROW(melspectrogram(x, 0, 1), ArgumentError);
}

TEST(MelFrontend, FilterbankShape) {
  const Tensor fb = mel_filterbank(512, kRate, MelParams{});
  EXPECT_EQ(fb.shape(), (Shape{257, 64}));
  for (int b = 0; b < 64; ++b) EXPECT_EQ(fb.at(0, b), 0.0);
  for (double v : fb.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}
