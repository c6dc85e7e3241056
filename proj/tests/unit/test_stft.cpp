#include <cmath>
#include <complex>
#include <random>
#include <set>

#include "doctest.h"
#include "hitlsep/error.hpp"
#include "hitlsep/stft.hpp"
#include "test_util.hpp"

using namespace hitlsep;

namespace {

double interior_rel_error(const std::vector<double>& a, const std::vector<double>& b, std::size_t margin) {
  double num = 0, den = 0;
  for (std::size_t i = margin; i + margin < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += a[i] * a[i];
  }
  return std::sqrt(num / den);
}

// Naive DFT of one Hann-windowed frame; independent of FFTW.
std::complex<double> naive_bin(const std::vector<double>& frame, int k) {
  const int n = static_cast<int>(frame.size());
  std::complex<double> acc = 0;
  for (int i = 0; i < n; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2 * M_PI * i / n);
    acc += frame[i] * w * std::polar(1.0, -2 * M_PI * k * i / n);
  }
  return acc;
}

}  // namespace

TEST_CASE("StftParams validation") {
  CHECK_NOTHROW((StftParams{2048, 512}.validate()));
  CHECK_THROWS_AS((StftParams{1000, 250}.validate()), ValidationError);
  CHECK_THROWS_AS((StftParams{256, 0}.validate()), ValidationError);
  CHECK_THROWS_AS((StftParams{256, 257}.validate()), ValidationError);
}

TEST_CASE("frame count follows 1 + floor(len / hop)") {
  AudioClip c(std::vector<double>(22050, 0.0), 22050);
  Spectrogram s = stft(c, {2048, 512});
  CHECK(s.n_frames == 44);
  CHECK(s.n_bins() == 1025);
  for (const auto& v : s.frames) CHECK(v == std::complex<double>(0, 0));
}

TEST_CASE("stft frames equal a naive DFT of the reflect-padded signal") {
  std::mt19937 rng(11);
  const std::vector<double> x = test::noise(rng, 700, 0.5);
  const StftParams p{64, 16};
  Spectrogram s = stft(AudioClip(x, 1000), p);
  for (std::size_t t : {std::size_t{0}, std::size_t{1}, std::size_t{10}, s.n_frames - 1}) {
    std::vector<double> frame(64);
    for (int n = 0; n < 64; ++n) {
      long long i = static_cast<long long>(t) * 16 - 32 + n;
      if (i < 0) i = -i;
      if (i >= 700) i = 2 * 699 - i;
      frame[n] = x[static_cast<std::size_t>(i)];
    }
    for (int k : {0, 3, 17, 32}) {
      const auto ref = naive_bin(frame, k);
      CHECK(std::abs(s.at(k, t) - ref) < 1e-9);
    }
  }
}

TEST_CASE("bin-centred sine peaks at its bin in every interior frame") {
  const int rate = 8000, n_fft = 256, k = 13;
  const double f = static_cast<double>(k) * rate / n_fft;
  std::vector<double> x(8000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * std::sin(2 * M_PI * f * i / rate);
  Spectrogram s = stft(AudioClip(x, rate), {n_fft, 64});
  for (std::size_t t = 4; t + 4 < s.n_frames; ++t) {
    std::size_t best = 0;
    for (std::size_t b = 0; b < s.n_bins(); ++b) {
      if (std::abs(s.at(b, t)) > std::abs(s.at(best, t))) best = b;
    }
    CHECK(best == static_cast<std::size_t>(k));
    // Analytic: Hann-windowed sinusoid at bin centre has |X_k| = A * N / 4.
    CHECK(std::abs(s.at(k, t)) == doctest::Approx(0.5 * n_fft / 4.0).epsilon(1e-9));
  }
}

TEST_CASE("istft inverts stft on interior samples") {
  std::mt19937 rng(2);
  for (int len : {512, 1000, 4097}) {
    const StftParams p{128, 32};
    AudioClip x(test::noise(rng, static_cast<std::size_t>(len), 0.8), 8000);
    AudioClip y = istft(stft(x, p), x.length());
    CHECK(y.length() == x.length());
    CHECK(interior_rel_error(x.samples, y.samples, 64) <= 1e-6);
  }
}

TEST_CASE("istft of zeros is silence and degenerate hops are signalled") {
  AudioClip z(std::vector<double>(1000, 0.0), 8000);
  AudioClip out = istft(stft(z, {128, 32}), 1000);
  for (double v : out.samples) CHECK(v == 0.0);

  std::mt19937 rng(4);
  AudioClip x(test::noise(rng, 1024, 0.5), 8000);
  CHECK_THROWS_AS(istft(stft(x, StftParams{128, 128}), 1024), NumericError);
  CHECK_THROWS_AS(istft(stft(x, StftParams{128, 32}), 900), ShapeError);
}

TEST_CASE("stft is linear") {
  std::mt19937 rng(8);
  const StftParams p{128, 32};
  AudioClip x(test::noise(rng, 900, 0.5), 8000);
  AudioClip y(test::noise(rng, 900, 0.5), 8000);
  const double a = 0.7, b = -1.3;
  AudioClip mix = x;
  for (std::size_t i = 0; i < mix.samples.size(); ++i) mix.samples[i] = a * x.samples[i] + b * y.samples[i];
  Spectrogram sx = stft(x, p), sy = stft(y, p), sm = stft(mix, p);
  double worst = 0;
  for (std::size_t i = 0; i < sm.frames.size(); ++i) {
    worst = std::max(worst, std::abs(sm.frames[i] - (a * sx.frames[i] + b * sy.frames[i])));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("Parseval: spectrogram energy = n_fft * (sum w^2 / hop) * signal energy") {
  std::mt19937 rng(9);
  const StftParams p{128, 32};
  // Zero margins keep reflect padding out of the picture.
  std::vector<double> x(2000, 0.0);
  auto burst = test::noise(rng, 1500, 0.5);
  std::copy(burst.begin(), burst.end(), x.begin() + 250);
  Spectrogram s = stft(AudioClip(x, 8000), p);
  double spec_e = 0;
  for (std::size_t t = 0; t < s.n_frames; ++t) {
    for (std::size_t b = 0; b < s.n_bins(); ++b) {
      const double w = (b == 0 || b + 1 == s.n_bins()) ? 1.0 : 2.0;
      spec_e += w * std::norm(s.at(b, t));
    }
  }
  double sig_e = 0;
  for (double v : x) sig_e += v * v;
  const auto w = hann_window(128);
  double wsq = 0;
  for (double v : w) wsq += v * v;
  const double factor = 128.0 * wsq / 32.0;
  CHECK(spec_e / (factor * sig_e) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("tile_starts: examples and brute-force coverage") {
  CHECK(tile_starts(512, 512, 512) == std::vector<std::size_t>{0});
  CHECK(tile_starts(1024, 512, 512) == std::vector<std::size_t>{0, 512});
  CHECK(tile_starts(700, 512, 512) == std::vector<std::size_t>{0, 188});

  for (std::size_t n = 1; n < 300; n += 7) {
    for (std::size_t tw : {1u, 16u, 64u}) {
      for (std::size_t stride : {1u, 16u, 64u}) {
        if (stride > tw) {
          CHECK_THROWS_AS(tile_starts(n, tw, stride), ValidationError);
          continue;
        }
        const auto starts = tile_starts(n, tw, stride);
        std::vector<int> cover(n, 0);
        for (std::size_t s : starts) {
          if (n >= tw) CHECK(s + tw <= n);
          for (std::size_t t = s; t < std::min(n, s + tw); ++t) cover[t]++;
        }
        for (int c : cover) CHECK(c >= 1);
      }
    }
  }
}

TEST_CASE("slice_windows crops the top bin, records origins and flags short input") {
  std::mt19937 rng(12);
  AudioClip x(test::noise(rng, 32 * 99, 0.5), 8000);
  Spectrogram s = stft(x, {128, 32});
  REQUIRE(s.n_frames == 100);
  auto wins = slice_windows(s, {64, 64}, 64, TiledMode{}, "song");
  REQUIRE(wins.size() == 2);
  CHECK(wins[0].start_frame == 0);
  CHECK(wins[1].start_frame == 36);
  CHECK(wins[1].song_id == "song");
  CHECK(wins[1].at(5, 3) == static_cast<float>(std::abs(s.at(5, 39))));
  CHECK_FALSE(wins[0].padded);

  auto rnd = slice_windows(s, {64, 64}, 64, RandomMode{42, 5});
  auto rnd2 = slice_windows(s, {64, 64}, 64, RandomMode{42, 5});
  REQUIRE(rnd.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rnd[i].start_frame == rnd2[i].start_frame);
    CHECK(rnd[i].start_frame + 64 <= 100);
  }

  AudioClip shortc(test::noise(rng, 320, 0.5), 8000);
  auto sh = slice_windows(stft(shortc, {128, 32}), {64, 64}, 64, TiledMode{});
  REQUIRE(sh.size() == 1);
  CHECK(sh[0].padded);
  CHECK(sh[0].at(0, 63) == 0.0f);

  CHECK_THROWS_AS(slice_windows(s, WindowShape{66, 64}, 64, TiledMode{}), ShapeError);
}

TEST_CASE("apply_mask: identity, silence, magnitude bound, shape errors") {
  std::mt19937 rng(13);
  AudioClip x(test::noise(rng, 3000, 0.5), 8000);
  Spectrogram s = stft(x, {128, 32});

  AudioClip ident = apply_mask(s, constant_mask(s, 1.0f));
  CHECK(interior_rel_error(x.samples, ident.samples, 64) <= 1e-6);

  AudioClip silent = apply_mask(s, constant_mask(s, 0.0f));
  for (double v : silent.samples) CHECK(v == 0.0);

  MaskGrid m;
  m.rows = 64;
  m.cols = s.n_frames;
  m.values.resize(m.rows * m.cols);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : m.values) v = u(rng);
  Spectrogram masked = mask_spectrogram(s, m);
  for (std::size_t t = 0; t < s.n_frames; ++t) {
    for (std::size_t b = 0; b < s.n_bins(); ++b) {
      CHECK(std::abs(masked.at(b, t)) <= std::abs(s.at(b, t)) + 1e-15);
    }
    CHECK(masked.at(64, t) == std::complex<double>(0, 0));  // uncovered Nyquist bin
  }

  MaskGrid bad = m;
  bad.cols -= 1;
  bad.values.resize(bad.rows * bad.cols);
  CHECK_THROWS_AS(apply_mask(s, bad), ShapeError);
  MaskGrid out_of_range = m;
  out_of_range.values[0] = 1.5f;
  CHECK_THROWS_AS(apply_mask(s, out_of_range), ValidationError);
}

TEST_CASE("assemble_mask lets later windows win on overlap") {
  const WindowShape shape{2, 4};
  std::vector<std::vector<float>> masks = {std::vector<float>(8, 0.25f), std::vector<float>(8, 0.75f)};
  MaskGrid g = assemble_mask(6, shape, {0, 2}, masks);
  CHECK(g.at(0, 1) == 0.25f);
  CHECK(g.at(1, 2) == 0.75f);
  CHECK(g.at(0, 5) == 0.75f);
}
