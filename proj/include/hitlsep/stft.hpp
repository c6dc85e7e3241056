#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "hitlsep/audio.hpp"

namespace hitlsep {

struct StftParams {
  int n_fft = 2048;
  int hop = 512;

  int n_bins() const { return n_fft / 2 + 1; }
  /// Throws ValidationError unless 0 < hop <= n_fft and n_fft is a power of two.
  void validate() const;
  bool operator==(const StftParams&) const = default;
};

/// Complex STFT frames, stored frame-major: frame t occupies [t * n_bins, (t + 1) * n_bins).
struct Spectrogram {
  StftParams params;
  int source_rate = 0;
  std::size_t n_frames = 0;
  std::size_t signal_length = 0;  // samples of the analysed clip
  std::vector<std::complex<double>> frames;

  std::size_t n_bins() const { return static_cast<std::size_t>(params.n_bins()); }
  std::complex<double>& at(std::size_t bin, std::size_t frame) { return frames[frame * n_bins() + bin]; }
  const std::complex<double>& at(std::size_t bin, std::size_t frame) const {
    return frames[frame * n_bins() + bin];
  }
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(int n);

/// Centered STFT: the clip is reflect-padded by n_fft/2 on both ends and
/// yields 1 + floor(len / hop) Hann-windowed frames.
Spectrogram stft(const AudioClip& clip, const StftParams& params);

/// Overlap-add inverse with squared-window normalisation. Throws NumericError
/// when the window-square sum vanishes at an output sample.
AudioClip istft(const Spectrogram& spec, std::size_t out_len);

/// Model input/output geometry: (frequency bins, time frames).
struct WindowShape {
  int freq = 1024;
  int time = 512;
  bool operator==(const WindowShape&) const = default;
};

/// Non-negative magnitude grid, row-major [freq][time].
struct MagWindow {
  WindowShape shape;
  std::vector<float> values;
  std::string song_id;
  std::size_t start_frame = 0;
  bool padded = false;  // spectrogram shorter than the window; zero-filled on the right

  float at(int f, int t) const { return values[static_cast<std::size_t>(f) * shape.time + t]; }
};

struct TiledMode {};
struct RandomMode {
  std::uint64_t seed = 0;
  std::size_t count = 1;
};
using SliceMode = std::variant<TiledMode, RandomMode>;

/// Window start frames for the tiled layout: consecutive windows at `stride`,
/// the last one right-aligned to the spectrogram end.
std::vector<std::size_t> tile_starts(std::size_t n_frames, std::size_t time_win, std::size_t stride);

/// Magnitude window at an explicit start frame, frequency axis cropped to the lowest bins.
MagWindow extract_window(const Spectrogram& spec, WindowShape shape, std::size_t start_frame,
                         std::string song_id = {});

std::vector<MagWindow> slice_windows(const Spectrogram& spec, WindowShape shape, std::size_t stride,
                                     const SliceMode& mode, const std::string& song_id = {});

/// Per-bin mask covering the lowest `rows` bins of every frame, row-major [bin][frame].
/// Bins at or above `rows` are treated as mask 0.
struct MaskGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  float& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

MaskGrid constant_mask(const Spectrogram& spec, float value);

/// Places window masks at their origins; where windows overlap the later one wins.
/// Frames no window covers get mask 0.
MaskGrid assemble_mask(std::size_t n_frames, WindowShape shape,
                       const std::vector<std::size_t>& starts,
                       const std::vector<std::vector<float>>& window_masks);

/// mask * |X| * exp(i arg X) for every covered bin, 0 elsewhere.
Spectrogram mask_spectrogram(const Spectrogram& mixture, const MaskGrid& mask);

/// mask_spectrogram followed by istft back to the analysed length.
AudioClip apply_mask(const Spectrogram& mixture, const MaskGrid& mask);

}  // namespace hitlsep
