#pragma once

#include "hitlsep/audio.hpp"
#include "hitlsep/model.hpp"
#include "hitlsep/setup.hpp"
#include "hitlsep/stft.hpp"

namespace hitlsep {

/// Eval-mode masks over the whole spectrogram: windows tiled at the model's time
/// width (last one right-aligned) and stitched back together.
MaskGrid predict_mask(const MaskNet& net, const Spectrogram& mixture, std::size_t batch = 32);

/// Vocal estimate for a mono mixture already at the setup's sample rate.
AudioClip separate(const MaskNet& net, const SeparationSetup& setup, const AudioClip& mixture);

/// |V| / (|V| + |A| + eps) over every bin.
MaskGrid ideal_ratio_mask(const Spectrogram& vocals, const Spectrogram& accompaniment, double eps = 1e-8);

}  // namespace hitlsep
