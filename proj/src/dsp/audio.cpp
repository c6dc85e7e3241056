#include "hitlsep/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

#include "hitlsep/error.hpp"

namespace hitlsep {

std::string_view to_string(AudioRole role) {
  switch (role) {
    case AudioRole::Mixture: return "mixture";
    case AudioRole::Vocals: return "vocals";
    case AudioRole::Accompaniment: return "accompaniment";
    case AudioRole::Estimate: return "estimate";
  }
  return "unknown";
}

AudioClip::AudioClip(std::vector<double> s, int rate, AudioRole r, int ch)
    : samples(std::move(s)), sample_rate(rate), channels(ch), role(r) {}

void AudioClip::validate() const {
  if (sample_rate <= 0) throw ValidationError("audio clip has non-positive sample rate");
  if (channels != 1 && channels != 2) throw ValidationError("audio clip must have 1 or 2 channels");
  if (samples.size() % static_cast<std::size_t>(channels) != 0) {
    throw ValidationError("interleaved sample count is not a multiple of the channel count");
  }
  for (double v : samples) {
    if (!std::isfinite(v)) throw ValidationError("audio clip contains non-finite samples");
  }
}

namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::vector<char>& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

[[noreturn]] void wav_fail(const std::filesystem::path& path, const std::string& reason) {
  throw ValidationError("cannot read WAV '" + path.string() + "': " + reason);
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path, AudioRole role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV '" + path.string() + "': file is unreadable");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    wav_fail(path, "not a RIFF/WAVE file");
  }

  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  const char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* chunk = bytes.data() + pos;
    const auto size = read_le<std::uint32_t>(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) wav_fail(path, "truncated fmt chunk");
      format = read_le<std::uint16_t>(chunk + 8);
      channels = read_le<std::uint16_t>(chunk + 10);
      rate = read_le<std::uint32_t>(chunk + 12);
      bits = read_le<std::uint16_t>(chunk + 22);
      if (format == kFormatExtensible) {
        if (avail < 26) wav_fail(path, "truncated extensible fmt chunk");
        format = read_le<std::uint16_t>(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }

  if (format == 0) wav_fail(path, "missing fmt chunk");
  if (data == nullptr) wav_fail(path, "missing data chunk");
  if (channels != 1 && channels != 2) {
    wav_fail(path, "unsupported channel count " + std::to_string(channels));
  }
  if (rate == 0) wav_fail(path, "sample rate is zero");

  std::vector<double> samples;
  if (format == kFormatPcm && bits == 16) {
    const std::size_t n = data_size / 2;
    samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      samples[i] = static_cast<double>(read_le<std::int16_t>(data + 2 * i)) / 32768.0;
    }
  } else if (format == kFormatFloat && bits == 32) {
    const std::size_t n = data_size / 4;
    samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float v = read_le<float>(data + 4 * i);
      if (!std::isfinite(v)) wav_fail(path, "non-finite float sample");
      samples[i] = static_cast<double>(v);
    }
  } else {
    wav_fail(path, "unsupported encoding (format " + std::to_string(format) + ", " +
                       std::to_string(bits) + " bits); expected 16-bit PCM or 32-bit float");
  }
  samples.resize(samples.size() - samples.size() % channels);
  return AudioClip(std::move(samples), static_cast<int>(rate), role, channels);
}

std::vector<char> encode_wav(const AudioClip& clip, WavEncoding encoding) {
  clip.validate();
  const bool pcm = encoding == WavEncoding::Pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(clip.channels * bits / 8);
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * bits / 8);

  std::vector<char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_le<std::uint32_t>(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, pcm ? kFormatPcm : kFormatFloat);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(clip.channels));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate) * block);
  put_le<std::uint16_t>(out, block);
  put_le<std::uint16_t>(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_le<std::uint32_t>(out, data_bytes);
  for (double v : clip.samples) {
    if (pcm) {
      const double scaled = std::round(v * 32768.0);
      put_le<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0)));
    } else {
      put_le<float>(out, static_cast<float>(v));
    }
  }
  return out;
}

void save_wav(const AudioClip& clip, const std::filesystem::path& path, WavEncoding encoding) {
  const std::vector<char> bytes = encode_wav(clip, encoding);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write WAV '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to WAV '" + path.string() + "'");
}

std::pair<AudioClip, AudioClip> split_channels(const AudioClip& stereo) {
  if (stereo.channels != 2) throw ShapeError("split_channels expects a stereo clip");
  const std::size_t n = stereo.length();
  std::vector<double> left(n);
  std::vector<double> right(n);
  for (std::size_t i = 0; i < n; ++i) {
    left[i] = stereo.samples[2 * i];
    right[i] = stereo.samples[2 * i + 1];
  }
  return {AudioClip(std::move(left), stereo.sample_rate, stereo.role),
          AudioClip(std::move(right), stereo.sample_rate, stereo.role)};
}

AudioClip to_mono(const AudioClip& left, const AudioClip& right) {
  if (left.channels != 1 || right.channels != 1) {
    throw ShapeError("to_mono expects two single-channel clips");
  }
  if (left.sample_rate != right.sample_rate) {
    throw ShapeError("to_mono: sample rate mismatch (" + std::to_string(left.sample_rate) + " vs " +
                     std::to_string(right.sample_rate) + ")");
  }
  if (left.samples.size() != right.samples.size()) {
    throw ShapeError("to_mono: length mismatch (" + std::to_string(left.samples.size()) + " vs " +
                     std::to_string(right.samples.size()) + ")");
  }
  std::vector<double> out(left.samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (left.samples[i] + right.samples[i]) / 2.0;
  return AudioClip(std::move(out), left.sample_rate, left.role);
}

AudioClip mixdown(const AudioClip& clip) {
  if (clip.channels == 1) return clip;
  auto [l, r] = split_channels(clip);
  return to_mono(l, r);
}

namespace {

struct SincKernel {
  double cutoff;
  double half_width;
  double beta = 8.6;
  double norm;

  SincKernel(double ratio)
      : cutoff(0.97 * std::min(1.0, ratio)),  // relative to the input Nyquist
        half_width(16.0 / cutoff),
        norm(std::cyl_bessel_i(0.0, beta)) {}

  double operator()(double tau) const {
    const double x = cutoff * tau;
    const double sinc = x == 0.0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
    const double r = tau / half_width;
    const double win = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    return cutoff * sinc * win;
  }
};

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw ValidationError("resample: target rate must be positive");
  if (clip.channels != 1) throw ShapeError("resample expects a mono clip");
  if (target_rate == clip.sample_rate) return clip;

  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const SincKernel kernel(ratio);
  const std::size_t n_in = clip.samples.size();
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));
  std::vector<double> out(n_out, 0.0);

  // Output j sits at input time t = j * down / up. For a reduced ratio up/down the
  // fractional offset cycles through `up` phases, so taps are tabulated per phase.
  const long long g = std::gcd(target_rate, clip.sample_rate);
  const long long up = target_rate / g;
  const long long down = clip.sample_rate / g;
  const auto taps = static_cast<long long>(std::ceil(kernel.half_width)) * 2 + 2;

  auto convolve = [&](std::size_t j, long long first, const double* weights) {
    double acc = 0.0;
    for (long long k = 0; k < taps; ++k) {
      const long long i = first + k;
      if (i < 0 || i >= static_cast<long long>(n_in)) continue;
      acc += clip.samples[static_cast<std::size_t>(i)] * weights[k];
    }
    out[j] = acc;
  };

  if (up <= 4096) {
    std::vector<double> table(static_cast<std::size_t>(up * taps));
    const long long reach = taps / 2 - 1;
    for (long long ph = 0; ph < up; ++ph) {
      const double frac = static_cast<double>(ph) / static_cast<double>(up);
      for (long long k = 0; k < taps; ++k) {
        const double tau = frac + static_cast<double>(reach - k);
        table[static_cast<std::size_t>(ph * taps + k)] =
            std::abs(tau) <= kernel.half_width ? kernel(tau) : 0.0;
      }
    }
    for (std::size_t j = 0; j < n_out; ++j) {
      const long long num = static_cast<long long>(j) * down;
      const long long base = num / up;
      const long long ph = num % up;
      convolve(j, base - reach, table.data() + ph * taps);
    }
  } else {
    std::vector<double> weights(static_cast<std::size_t>(taps));
    const long long reach = taps / 2 - 1;
    for (std::size_t j = 0; j < n_out; ++j) {
      const double t = static_cast<double>(j) / ratio;
      const auto base = static_cast<long long>(std::floor(t));
      const double frac = t - static_cast<double>(base);
      for (long long k = 0; k < taps; ++k) {
        const double tau = frac + static_cast<double>(reach - k);
        weights[static_cast<std::size_t>(k)] = std::abs(tau) <= kernel.half_width ? kernel(tau) : 0.0;
      }
      convolve(j, base - reach, weights.data());
    }
  }
  return AudioClip(std::move(out), target_rate, clip.role);
}

double rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (double v : samples) s += v * v;
  return std::sqrt(s / static_cast<double>(samples.size()));
}

double rms_dbfs(std::span<const double> samples) {
  const double r = rms(samples);
  if (r <= 1e-10) return -200.0;
  return 20.0 * std::log10(r);
}

}  // namespace hitlsep
