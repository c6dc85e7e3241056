#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "hitlsep/adam.hpp"
#include "hitlsep/model.hpp"
#include "hitlsep/stft.hpp"

namespace hitlsep {

/// Everything needed to go from a waveform to model windows and back.
struct SeparationSetup {
  int sample_rate = 22050;
  StftParams stft{2048, 512};
  NetConfig net;

  /// 22050 Hz, STFT 2048/512, 1024 x 512 windows, depth 6, 16 base channels.
  static SeparationSetup canonical();
  /// 8 kHz, STFT 128/32, 64 x 64 windows, depth 3, 4 base channels. Same hop/n_fft
  /// ratio and the same "drop the Nyquist bin" crop as the canonical setup.
  static SeparationSetup desk();

  void validate() const;
  bool operator==(const SeparationSetup&) const = default;
};

void to_json(nlohmann::json& j, const SeparationSetup& s);
void from_json(const nlohmann::json& j, SeparationSetup& s);

SeparationSetup load_setup(const std::filesystem::path& path);

/// Model plus optimiser state plus the setup it was trained for.
struct Checkpoint {
  SeparationSetup setup;
  MaskNet net;
  AdamState adam;
};

/// Binary container: magic, format version, key=value header, then named
/// little-endian float32 tensors with shape prefixes.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// As above, but rejects checkpoints whose network config differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const NetConfig& expected);

}  // namespace hitlsep
