#include <algorithm>
#include <cmath>

#include "hitlsep/error.hpp"
#include "hitlsep/separate.hpp"

namespace hitlsep {

MaskGrid predict_mask(const MaskNet& net, const Spectrogram& mixture, std::size_t batch) {
  const WindowShape shape = net.config().input;
  const auto tw = static_cast<std::size_t>(shape.time);
  const auto starts = tile_starts(mixture.n_frames, tw, tw);
  std::vector<std::vector<float>> masks;
  masks.reserve(starts.size());
  for (std::size_t b = 0; b < starts.size(); b += batch) {
    std::vector<MagWindow> windows;
    for (std::size_t i = b; i < std::min(starts.size(), b + batch); ++i) {
      windows.push_back(extract_window(mixture, shape, starts[i]));
    }
    auto out = forward<float>(net, windows, NetMode::Eval, 0);
    for (auto& m : out) masks.push_back(std::move(m));
  }
  return assemble_mask(mixture.n_frames, shape, starts, masks);
}

AudioClip separate(const MaskNet& net, const SeparationSetup& setup, const AudioClip& mixture) {
  if (mixture.channels != 1) throw ValidationError("separate: expected a mono mixture");
  if (mixture.sample_rate != setup.sample_rate) {
    throw ValidationError("separate: mixture rate " + std::to_string(mixture.sample_rate) +
                          " Hz differs from the model's " + std::to_string(setup.sample_rate) + " Hz");
  }
  const Spectrogram spec = stft(mixture, setup.stft);
  AudioClip est = apply_mask(spec, predict_mask(net, spec));
  est.role = AudioRole::Estimate;
  return est;
}

MaskGrid ideal_ratio_mask(const Spectrogram& vocals, const Spectrogram& accompaniment, double eps) {
  if (vocals.n_frames != accompaniment.n_frames || vocals.n_bins() != accompaniment.n_bins()) {
    throw ShapeError("ideal_ratio_mask: stem spectrograms differ in shape");
  }
  MaskGrid m;
  m.rows = vocals.n_bins();
  m.cols = vocals.n_frames;
  m.values.resize(m.rows * m.cols);
  for (std::size_t t = 0; t < m.cols; ++t) {
    for (std::size_t b = 0; b < m.rows; ++b) {
      const double v = std::abs(vocals.at(b, t));
      const double a = std::abs(accompaniment.at(b, t));
      m.at(b, t) = static_cast<float>(v / (v + a + eps));
    }
  }
  return m;
}

}  // namespace hitlsep
