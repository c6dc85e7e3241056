#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace hitlsep {

enum class AudioRole { Mixture, Vocals, Accompaniment, Estimate };

std::string_view to_string(AudioRole role);

/// A sampled waveform. Stereo material is stored interleaved (L R L R ...)
/// until it is folded down with to_mono().
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  int channels = 1;
  AudioRole role = AudioRole::Mixture;

  AudioClip() = default;
  AudioClip(std::vector<double> s, int rate, AudioRole r = AudioRole::Mixture, int ch = 1);

  /// Frames per channel.
  std::size_t length() const { return samples.size() / static_cast<std::size_t>(channels); }
  double duration_seconds() const {
    return static_cast<double>(length()) / static_cast<double>(sample_rate);
  }

  /// Throws ValidationError when the rate is not positive or any sample is non-finite.
  void validate() const;
};

enum class WavEncoding { Pcm16, Float32 };

/// Reads 16-bit PCM or 32-bit float WAV with one or two channels.
AudioClip load_wav(const std::filesystem::path& path, AudioRole role = AudioRole::Mixture);

void save_wav(const AudioClip& clip, const std::filesystem::path& path,
              WavEncoding encoding = WavEncoding::Float32);

/// Encodes a clip as WAV bytes (used by the HTTP service).
std::vector<char> encode_wav(const AudioClip& clip, WavEncoding encoding = WavEncoding::Float32);

/// Splits an interleaved stereo clip into its left and right channels.
std::pair<AudioClip, AudioClip> split_channels(const AudioClip& stereo);

/// out[i] = (left[i] + right[i]) / 2
AudioClip to_mono(const AudioClip& left, const AudioClip& right);

/// Mono clips pass through; stereo clips are averaged.
AudioClip mixdown(const AudioClip& clip);

/// Band-limited (Kaiser-windowed sinc) sample-rate conversion.
AudioClip resample(const AudioClip& clip, int target_rate);

/// Root-mean-square of a sample range; 0 for an empty range.
double rms(std::span<const double> samples);

/// 20 log10(rms), floored at -200 dB.
double rms_dbfs(std::span<const double> samples);

}  // namespace hitlsep
