#include "hitlsep/stft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <memory>
#include <mutex>
#include <random>
#include <string>

#include "hitlsep/error.hpp"
#include "hitlsep/kernels.hpp"

namespace hitlsep {

void StftParams::validate() const {
  if (n_fft <= 0 || !std::has_single_bit(static_cast<unsigned>(n_fft))) {
    throw ValidationError("n_fft must be a positive power of two, got " + std::to_string(n_fft));
  }
  if (hop <= 0 || hop > n_fft) {
    throw ValidationError("hop must satisfy 0 < hop <= n_fft, got " + std::to_string(hop));
  }
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(int n)
      : n_(n),
        real_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        spec_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(n, real_.get(), spec_.get(), FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, spec_.get(), real_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* real() { return real_.get(); }
  std::complex<double>* spectrum() { return reinterpret_cast<std::complex<double>*>(spec_.get()); }
  void forward() { fftw_execute(forward_); }
  /// Unnormalised: output is n times the true inverse.
  void inverse() { fftw_execute(inverse_); }
  int size() const { return n_; }

 private:
  int n_;
  std::unique_ptr<double, FftwFree> real_;
  std::unique_ptr<fftw_complex, FftwFree> spec_;
  fftw_plan forward_{};
  fftw_plan inverse_{};
};

std::size_t reflect_index(long long i, std::size_t len) {
  if (len == 1) return 0;
  const long long period = 2 * (static_cast<long long>(len) - 1);
  long long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long long>(len)) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

Spectrogram stft(const AudioClip& clip, const StftParams& params) {
  params.validate();
  if (clip.channels != 1) throw ShapeError("stft expects a mono clip");
  const std::size_t len = clip.samples.size();
  if (len == 0) throw ShapeError("stft needs at least one sample");

  const int n_fft = params.n_fft;
  const std::size_t pad = static_cast<std::size_t>(n_fft / 2);
  const std::size_t hop = static_cast<std::size_t>(params.hop);

  Spectrogram spec;
  spec.params = params;
  spec.source_rate = clip.sample_rate;
  spec.signal_length = len;
  spec.n_frames = 1 + len / hop;
  const std::size_t n_bins = spec.n_bins();
  spec.frames.resize(spec.n_frames * n_bins);

  const std::vector<double> window = hann_window(n_fft);
  const auto& k = kernels::active();
  std::vector<double> frame(static_cast<std::size_t>(n_fft));
  RealFft fft(n_fft);
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    const long long first = static_cast<long long>(t * hop) - static_cast<long long>(pad);
    const bool interior = first >= 0 && first + n_fft <= static_cast<long long>(len);
    if (interior) {
      k.multiply(frame.size(), clip.samples.data() + first, window.data(), fft.real());
    } else {
      for (int n = 0; n < n_fft; ++n) frame[n] = clip.samples[reflect_index(first + n, len)];
      k.multiply(frame.size(), frame.data(), window.data(), fft.real());
    }
    fft.forward();
    std::copy_n(fft.spectrum(), n_bins, spec.frames.begin() + static_cast<std::ptrdiff_t>(t * n_bins));
  }
  return spec;
}

AudioClip istft(const Spectrogram& spec, std::size_t out_len) {
  spec.params.validate();
  const std::size_t n_bins = spec.n_bins();
  if (spec.frames.size() != spec.n_frames * n_bins) throw ShapeError("malformed spectrogram");
  const std::size_t hop = static_cast<std::size_t>(spec.params.hop);
  if (spec.n_frames != 1 + out_len / hop) {
    throw ShapeError("istft: " + std::to_string(out_len) + " samples need " +
                     std::to_string(1 + out_len / hop) + " frames, spectrogram has " +
                     std::to_string(spec.n_frames));
  }

  const int n_fft = spec.params.n_fft;
  const std::size_t pad = static_cast<std::size_t>(n_fft / 2);
  const std::size_t padded_len = out_len + 2 * pad;
  std::vector<double> acc(padded_len + static_cast<std::size_t>(n_fft), 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  const std::vector<double> window = hann_window(n_fft);
  const auto& k = kernels::active();
  std::vector<double> windowed(static_cast<std::size_t>(n_fft));

  RealFft fft(n_fft);
  const double scale = 1.0 / n_fft;
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    std::copy_n(spec.frames.begin() + static_cast<std::ptrdiff_t>(t * n_bins), n_bins, fft.spectrum());
    fft.inverse();
    k.multiply(windowed.size(), fft.real(), window.data(), windowed.data());
    const std::size_t start = t * hop;
    for (int n = 0; n < n_fft; ++n) {
      acc[start + n] += windowed[n] * scale;
      norm[start + n] += window[n] * window[n];
    }
  }

  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double w = norm[i + pad];
    if (w < 1e-10) {
      throw NumericError("istft: window-square sum vanishes at sample " + std::to_string(i) +
                         " (hop " + std::to_string(hop) + " too large for n_fft " +
                         std::to_string(n_fft) + ")");
    }
    out[i] = acc[i + pad] / w;
  }
  return AudioClip(std::move(out), spec.source_rate, AudioRole::Estimate);
}

std::vector<std::size_t> tile_starts(std::size_t n_frames, std::size_t time_win, std::size_t stride) {
  if (time_win == 0 || stride == 0) throw ValidationError("tile_starts: window and stride must be positive");
  if (stride > time_win) throw ValidationError("tile_starts: stride larger than the window leaves gaps");
  std::vector<std::size_t> starts;
  if (n_frames <= time_win) {
    starts.push_back(0);
    return starts;
  }
  std::size_t s = 0;
  for (; s + time_win <= n_frames; s += stride) starts.push_back(s);
  if (starts.back() + time_win < n_frames) starts.push_back(n_frames - time_win);
  return starts;
}

MagWindow extract_window(const Spectrogram& spec, WindowShape shape, std::size_t start_frame,
                         std::string song_id) {
  if (shape.freq <= 0 || shape.time <= 0) throw ShapeError("window shape must be positive");
  if (static_cast<std::size_t>(shape.freq) > spec.n_bins()) {
    throw ShapeError("window needs " + std::to_string(shape.freq) + " bins, spectrogram has " +
                     std::to_string(spec.n_bins()));
  }
  if (start_frame >= spec.n_frames) throw ShapeError("window start beyond spectrogram end");
  MagWindow w;
  w.shape = shape;
  w.song_id = std::move(song_id);
  w.start_frame = start_frame;
  w.values.assign(static_cast<std::size_t>(shape.freq) * shape.time, 0.0f);
  const std::size_t avail = std::min<std::size_t>(shape.time, spec.n_frames - start_frame);
  w.padded = avail < static_cast<std::size_t>(shape.time);
  for (std::size_t t = 0; t < avail; ++t) {
    for (int f = 0; f < shape.freq; ++f) {
      w.values[static_cast<std::size_t>(f) * shape.time + t] =
          static_cast<float>(std::abs(spec.at(static_cast<std::size_t>(f), start_frame + t)));
    }
  }
  return w;
}

std::vector<MagWindow> slice_windows(const Spectrogram& spec, WindowShape shape, std::size_t stride,
                                     const SliceMode& mode, const std::string& song_id) {
  if (shape.time < 1) throw ShapeError("time window must be at least one frame");
  const auto tw = static_cast<std::size_t>(shape.time);
  std::vector<std::size_t> starts;
  if (std::holds_alternative<TiledMode>(mode)) {
    starts = tile_starts(spec.n_frames, tw, stride);
  } else {
    const auto& r = std::get<RandomMode>(mode);
    std::mt19937_64 rng(r.seed);
    const std::size_t last = spec.n_frames > tw ? spec.n_frames - tw : 0;
    std::uniform_int_distribution<std::size_t> pick(0, last);
    for (std::size_t i = 0; i < r.count; ++i) starts.push_back(pick(rng));
  }
  std::vector<MagWindow> out;
  out.reserve(starts.size());
  for (std::size_t s : starts) out.push_back(extract_window(spec, shape, s, song_id));
  return out;
}

MaskGrid constant_mask(const Spectrogram& spec, float value) {
  MaskGrid m;
  m.rows = spec.n_bins();
  m.cols = spec.n_frames;
  m.values.assign(m.rows * m.cols, value);
  return m;
}

MaskGrid assemble_mask(std::size_t n_frames, WindowShape shape, const std::vector<std::size_t>& starts,
                       const std::vector<std::vector<float>>& window_masks) {
  if (starts.size() != window_masks.size()) throw ShapeError("assemble_mask: one mask per start required");
  MaskGrid m;
  m.rows = static_cast<std::size_t>(shape.freq);
  m.cols = n_frames;
  m.values.assign(m.rows * m.cols, 0.0f);
  const auto tw = static_cast<std::size_t>(shape.time);
  for (std::size_t w = 0; w < starts.size(); ++w) {
    if (window_masks[w].size() != m.rows * tw) throw ShapeError("assemble_mask: window mask has wrong size");
    for (std::size_t t = 0; t < tw && starts[w] + t < n_frames; ++t) {
      for (std::size_t f = 0; f < m.rows; ++f) m.at(f, starts[w] + t) = window_masks[w][f * tw + t];
    }
  }
  return m;
}

Spectrogram mask_spectrogram(const Spectrogram& mixture, const MaskGrid& mask) {
  if (mask.cols != mixture.n_frames || mask.rows > mixture.n_bins() ||
      mask.values.size() != mask.rows * mask.cols) {
    throw ShapeError("mask shape (" + std::to_string(mask.rows) + ", " + std::to_string(mask.cols) +
                     ") does not fit spectrogram (" + std::to_string(mixture.n_bins()) + ", " +
                     std::to_string(mixture.n_frames) + ")");
  }
  Spectrogram out = mixture;
  const std::size_t n_bins = mixture.n_bins();
  for (std::size_t t = 0; t < mixture.n_frames; ++t) {
    for (std::size_t b = 0; b < n_bins; ++b) {
      double g = 0.0;
      if (b < mask.rows) {
        g = mask.at(b, t);
        if (!(g >= 0.0 && g <= 1.0)) {
          throw ValidationError("mask entry outside [0, 1] at bin " + std::to_string(b) + ", frame " +
                                std::to_string(t));
        }
      }
      // mask * |X| * e^{i arg X} == mask * X
      out.at(b, t) = g * mixture.at(b, t);
    }
  }
  return out;
}

AudioClip apply_mask(const Spectrogram& mixture, const MaskGrid& mask) {
  return istft(mask_spectrogram(mixture, mask), mixture.signal_length);
}

}  // namespace hitlsep
