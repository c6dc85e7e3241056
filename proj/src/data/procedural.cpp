#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "hitlsep/data.hpp"
#include "hitlsep/error.hpp"
#include "hitlsep/rng.hpp"

namespace hitlsep {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Note {
  double start_s = 0;
  double dur_s = 0;
  double f0 = 0;
  double amp = 0;
};

struct Voice {
  std::vector<double> harmonic_gain;  // per harmonic number, index 0 = fundamental
  double attack_s = 0.02;
  double release_s = 0.05;
  double decay_tau_s = 0.0;  // 0 = sustained
  double vibrato_depth = 0.0;
  double vibrato_rate = 5.5;
  double vibrato_onset_s = 0.2;
  double scoop = 0.0;
};

double midi_hz(double m) { return 440.0 * std::pow(2.0, (m - 69.0) / 12.0); }

std::vector<double> normalised(std::vector<double> g) {
  double e = 0;
  for (double v : g) e += v * v;
  if (e > 0) {
    for (double& v : g) v /= std::sqrt(e);
  }
  return g;
}

/// Adds one harmonic note, harmonics evaluated with the sin(k x) recurrence.
void render(std::vector<double>& out, int sr, const Note& note, const Voice& voice, double fmax) {
  const auto begin = static_cast<std::size_t>(std::llround(note.start_s * sr));
  if (begin >= out.size()) return;
  const std::size_t len = std::min(static_cast<std::size_t>(std::llround(note.dur_s * sr)), out.size() - begin);
  const double top = note.f0 * (1.0 + voice.vibrato_depth);
  std::size_t n_harm = 0;
  while (n_harm < voice.harmonic_gain.size() && top * static_cast<double>(n_harm + 1) < fmax) ++n_harm;
  if (n_harm == 0 || len == 0) return;
  const double att = std::max(1.0, voice.attack_s * sr);
  const double rel = std::max(1.0, voice.release_s * sr);
  double phase = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double vib = voice.vibrato_depth * std::sin(kTwoPi * voice.vibrato_rate * t) *
                       std::min(1.0, t / voice.vibrato_onset_s);
    const double scoop = 1.0 - voice.scoop * std::exp(-t / 0.04);
    phase += kTwoPi * note.f0 * (1.0 + vib) * scoop / sr;
    if (phase > kTwoPi) phase -= kTwoPi;
    double env = 1.0;
    if (static_cast<double>(i) < att) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / att);
    const double left = static_cast<double>(len - i);
    if (left < rel) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * left / rel);
    if (voice.decay_tau_s > 0) env *= std::exp(-t / voice.decay_tau_s);
    const double s1 = std::sin(phase);
    const double c2 = 2.0 * std::cos(phase);
    double prev = 0.0, cur = s1, acc = 0.0;
    for (std::size_t k = 0; k < n_harm; ++k) {
      acc += voice.harmonic_gain[k] * cur;
      const double next = c2 * cur - prev;
      prev = cur;
      cur = next;
    }
    out[begin + i] += note.amp * env * acc;
  }
}

Voice vocal_voice(Rng& rng) {
  Voice v;
  v.attack_s = 0.03;
  v.release_s = 0.06;
  v.vibrato_depth = rng.uniform(0.012, 0.025);
  v.vibrato_rate = rng.uniform(5.0, 6.2);
  v.vibrato_onset_s = 0.2;
  v.scoop = rng.uniform(0.01, 0.04);
  return v;
}

std::vector<double> vowel_gains(double f0, std::size_t n, Rng& rng) {
  static constexpr double kVowels[5][3] = {
      {730, 1090, 2440}, {270, 2290, 3010}, {300, 870, 2240}, {530, 1840, 2480}, {570, 840, 2410}};
  const auto& f = kVowels[rng.below(5)];
  std::vector<double> g(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double fk = f0 * static_cast<double>(k + 1);
    auto bump = [&](double c, double w) { return std::exp(-((fk - c) / w) * ((fk - c) / w)); };
    g[k] = std::pow(static_cast<double>(k + 1), -0.7) *
           (0.15 + bump(f[0], 120) + 0.7 * bump(f[1], 180) + 0.35 * bump(f[2], 260));
  }
  return normalised(std::move(g));
}

struct Interval {
  double a, b;
};

/// Voiced stretches between the long silent runs.
std::vector<Interval> voiced_regions(double len, Rng& rng) {
  const auto runs = static_cast<std::size_t>(std::max(1.0, std::ceil(0.2 * len / 8.0)));
  std::vector<double> run_len(runs);
  double silent = 0;
  for (auto& r : run_len) {
    r = rng.uniform(8.0, std::min(10.5, std::max(8.0, len / static_cast<double>(runs) - 0.5)));
    silent += r;
  }
  const double voiced = std::max(0.0, len - silent);
  std::vector<double> w(runs + 1);
  double wsum = 0;
  for (auto& x : w) wsum += (x = rng.uniform(0.3, 1.0));
  std::vector<Interval> out;
  double t = 0;
  for (std::size_t i = 0; i <= runs; ++i) {
    const double part = voiced * w[i] / wsum;
    if (part > 0.3) out.push_back({t, t + part});
    t += part;
    if (i < runs) t += run_len[i];
  }
  return out;
}

constexpr int kPenta[5] = {0, 2, 4, 7, 9};

double scale_midi(int root, int degree) {
  const int oct = degree >= 0 ? degree / 5 : -((-degree + 4) / 5);
  const int idx = degree - oct * 5;
  return root + 12 * oct + kPenta[idx];
}

/// Returns the voiced regions it filled.
std::vector<Interval> add_vocals(std::vector<double>& out, int sr, double len, int key, Rng& rng, double fmax) {
  const Voice base = vocal_voice(rng);
  const auto regions = voiced_regions(len, rng);
  for (const Interval& region : regions) {
    double t = region.a + rng.uniform(0.0, 0.2);
    int degree = static_cast<int>(rng.below(5));
    while (t < region.b - 0.3) {
      const std::size_t notes = 3 + rng.below(5);
      for (std::size_t i = 0; i < notes && t < region.b - 0.25; ++i) {
        degree = std::clamp(degree + static_cast<int>(rng.below(5)) - 2, -2, 7);
        Note n;
        n.start_s = t;
        n.dur_s = std::min(rng.uniform(0.25, 0.7), region.b - t);
        n.f0 = midi_hz(scale_midi(key, degree));
        n.amp = rng.uniform(0.8, 1.0);
        Voice v = base;
        v.harmonic_gain = vowel_gains(n.f0, 24, rng);
        render(out, sr, n, v, fmax);
        t += n.dur_s + (rng.chance(0.5) ? 0.0 : rng.uniform(0.02, 0.08));
      }
      t += rng.uniform(0.2, 0.8);
    }
  }
  return regions;
}

struct Genre {
  bool square_pad;
  double pad_cutoff;
  double lead_prob;  // per bar while the vocals sing
  double solo_prob;  // per instrumental break
  bool lead_reed;    // sustained odd-harmonic lead in the vocal range
  double lead_amp;
  int lead_shift;  // semitones
  int hat_div;
  double hat_tau;
};

Genre genre_params(const std::string& g) {
  if (g == "A") return {false, 900.0, 0.1, 0.3, false, 0.16, 0, 2, 0.02};
  if (g == "B") return {true, 2000.0, 0.5, 1.0, true, 0.22, -12, 4, 0.035};
  throw ValidationError("unknown genre '" + g + "' (expected A or B)");
}

void add_pads_and_bass(std::vector<double>& out, int sr, double len, int key, const Genre& g, double fmax) {
  static constexpr int kProg[4][3] = {{0, 4, 7}, {7, 11, 14}, {9, 12, 16}, {5, 9, 12}};
  Voice pad;
  pad.attack_s = 0.08;
  pad.release_s = 0.08;
  std::vector<double> gains(40);
  for (std::size_t k = 0; k < gains.size(); ++k) {
    const double kk = static_cast<double>(k + 1);
    const bool odd = (k % 2) == 0;
    gains[k] = (g.square_pad && !odd) ? 0.0 : 1.0 / kk;
  }
  Voice bass;
  bass.attack_s = 0.01;
  bass.release_s = 0.05;
  bass.decay_tau_s = 0.6;
  bass.harmonic_gain = normalised({1.0, 0.5, 0.25, 0.12});
  const double bar = 2.0;
  for (int b = 0; b * bar < len; ++b) {
    const auto& chord = kProg[b % 4];
    for (int v = 0; v < 3; ++v) {
      for (double detune : {-0.0023, 0.0023}) {
        Note n{b * bar, bar + 0.06, midi_hz(key - 12 + chord[v]) * (1.0 + detune), 0.05};
        std::vector<double> gv(gains.size());
        for (std::size_t k = 0; k < gv.size(); ++k) {
          const double fk = n.f0 * static_cast<double>(k + 1);
          gv[k] = gains[k] / (1.0 + (fk / g.pad_cutoff) * (fk / g.pad_cutoff));
        }
        pad.harmonic_gain = normalised(std::move(gv));
        render(out, sr, n, pad, fmax);
      }
    }
    for (int beat = 0; beat < 4; beat += 2) {
      Note n{b * bar + beat * 0.5, 0.9, midi_hz(key - 24 + chord[0]), 0.14};
      render(out, sr, n, bass, fmax);
    }
  }
}

void add_drums(std::vector<double>& out, int sr, double len, const Genre& g, Rng& rng) {
  const double beat = 0.5;
  auto hit = [&](double t0, double dur, auto&& sample) {
    const auto b = static_cast<std::size_t>(std::llround(t0 * sr));
    const auto n = static_cast<std::size_t>(dur * sr);
    for (std::size_t i = 0; i < n && b + i < out.size(); ++i) out[b + i] += sample(static_cast<double>(i) / sr);
  };
  const bool busy = g.hat_div == 4;
  for (int k = 0; k * beat < len; ++k) {
    const double t = k * beat;
    const int pos = k % 4;
    if (pos == 0 || pos == 2 || (busy && pos == 3 && (k / 4) % 2 == 1)) {
      double ph = 0;
      hit(t, 0.25, [&](double s) {
        ph += kTwoPi * (50.0 + 90.0 * std::exp(-s / 0.03)) / sr;
        return 0.35 * std::exp(-s / 0.12) * std::sin(ph);
      });
    }
    if (pos == 1 || pos == 3) {
      double lp = 0, ph = 0;
      hit(t, 0.2, [&](double s) {
        const double x = rng.normal();
        lp += 0.25 * (x - lp);
        ph += kTwoPi * 180.0 / sr;
        return std::exp(-s / 0.08) * (0.1 * (x - lp) + 0.08 * std::sin(ph));
      });
    }
    for (int h = 0; h < g.hat_div; ++h) {
      double lp = 0;
      const double amp = busy ? 0.05 : 0.04;
      hit(t + h * beat / g.hat_div, 0.08, [&](double s) {
        const double x = rng.normal();
        lp += 0.5 * (x - lp);
        return amp * std::exp(-s / g.hat_tau) * (x - lp);
      });
    }
  }
}

void add_lead(std::vector<double>& out, int sr, double len, int key, const Genre& g, const std::vector<Interval>& voiced,
              Rng& rng, double fmax) {
  Voice lead;
  if (g.lead_reed) {
    lead.attack_s = 0.02;
    lead.release_s = 0.04;
    std::vector<double> gains(30);
    for (std::size_t k = 0; k < gains.size(); ++k) gains[k] = (k % 2 == 0 ? 1.0 : 0.35) / static_cast<double>(k + 1);
    lead.harmonic_gain = normalised(std::move(gains));
  } else {
    lead.attack_s = 0.04;
    lead.release_s = 0.05;
    lead.harmonic_gain = normalised({1.0, 0.25, 0.1});
  }
  const double bar = 2.0;
  auto phrase = [&](double t0, double t1) {
    int degree = 3 + static_cast<int>(rng.below(4));
    for (double t = t0; t < t1 - 0.1; t += bar / 4) {
      degree = std::clamp(degree + static_cast<int>(rng.below(3)) - 1, 2, 9);
      Note n{t, std::min(bar / 4, t1 - t), midi_hz(scale_midi(key, degree) + g.lead_shift), g.lead_amp};
      render(out, sr, n, lead, fmax);
    }
  };
  // Instrumental breaks get a solo; elsewhere the lead comes and goes per bar.
  double t = 0;
  for (const Interval& v : voiced) {
    if (v.a - t > 1.0 && rng.chance(g.solo_prob)) phrase(t, v.a);
    for (double b = std::ceil(v.a / bar) * bar; b + bar <= v.b; b += bar) {
      if (rng.chance(g.lead_prob)) phrase(b, b + bar);
    }
    t = v.b;
  }
  if (len - t > 1.0 && rng.chance(g.solo_prob)) phrase(t, len);
}

double sum_sq(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return s;
}

/// Snaps to multiples of 2^-23 so that stems and their sum are exact in float32.
void quantise(std::vector<double>& v) {
  for (double& x : v) x = std::clamp(std::round(x * 0x1.0p23), -0x1.0p23 + 1, 0x1.0p23 - 1) * 0x1.0p-23;
}

}  // namespace

GeneratedSong generate_song(const std::string& song_id, const std::string& genre, double len_s, int sample_rate,
                            std::uint64_t seed) {
  if (!(len_s >= 10.0)) throw ValidationError("song length must be at least 10 s, got " + std::to_string(len_s));
  if (sample_rate < 4000) throw ValidationError("sample rate must be at least 4000 Hz");
  const Genre g = genre_params(genre);
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(std::llround(len_s * sample_rate));
  const double fmax = 0.45 * sample_rate;
  const int key = 55 + static_cast<int>(rng.below(8));

  std::vector<double> voc(n, 0.0), acc(n, 0.0);
  Rng vrng(mix_seed(seed, 1)), arng(mix_seed(seed, 2)), drng(mix_seed(seed, 3));
  const auto voiced = add_vocals(voc, sample_rate, len_s, key, vrng, fmax);
  add_pads_and_bass(acc, sample_rate, len_s, key, g, fmax);
  add_drums(acc, sample_rate, len_s, g, drng);
  add_lead(acc, sample_rate, len_s, key, g, voiced, arng, fmax);

  // Vocal-to-accompaniment level over the voiced samples, then peak headroom.
  std::size_t voiced_samples = 0;
  double acc_voiced = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (voc[i] != 0.0) {
      ++voiced_samples;
      acc_voiced += acc[i] * acc[i];
    }
  }
  if (voiced_samples > 0 && acc_voiced > 0) {
    const double ratio_db = rng.uniform(-2.0, 4.0);
    const double gain = std::sqrt(acc_voiced / sum_sq(voc)) * std::pow(10.0, ratio_db / 20.0);
    for (double& x : voc) x *= gain;
  }
  double peak = 0;
  for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, std::abs(voc[i] + acc[i]));
  if (peak > 0.9) {
    for (std::size_t i = 0; i < n; ++i) {
      voc[i] *= 0.9 / peak;
      acc[i] *= 0.9 / peak;
    }
  }
  quantise(voc);
  quantise(acc);
  std::vector<double> mix(n);
  for (std::size_t i = 0; i < n; ++i) mix[i] = voc[i] + acc[i];

  GeneratedSong song;
  song.song_id = song_id;
  song.genre = genre;
  song.vocals = AudioClip(std::move(voc), sample_rate, AudioRole::Vocals);
  song.accompaniment = AudioClip(std::move(acc), sample_rate, AudioRole::Accompaniment);
  song.mixture = AudioClip(std::move(mix), sample_rate, AudioRole::Mixture);
  return song;
}

void generate_procedural_dataset(const ProceduralConfig& config, const fs::path& root) {
  struct Plan {
    SplitName split;
    std::size_t count;
    const std::string& genre;
  };
  const Plan plans[] = {{SplitName::Train, config.n_train, config.train_genre},
                        {SplitName::Hitl, config.n_hitl, config.hitl_genre},
                        {SplitName::Test, config.n_test, config.test_genre}};
  nlohmann::json manifest;
  manifest["songs"] = nlohmann::json::array();
  manifest["seed"] = config.seed;
  manifest["sample_rate"] = config.sample_rate;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError(root.string() + ": cannot create directory: " + ec.message());
  for (const Plan& plan : plans) {
    const std::string split(to_string(plan.split));
    for (std::size_t i = 0; i < plan.count; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s-%03zu", split.c_str(), i);
      const GeneratedSong song = generate_song(id, plan.genre, config.song_len_s, config.sample_rate,
                                               mix_seed(config.seed, hash_tag(id)));
      const fs::path dir = root / split / id;
      fs::create_directories(dir, ec);
      if (ec) throw IoError(dir.string() + ": cannot create directory: " + ec.message());
      save_wav(song.mixture, dir / "mixture.wav");
      save_wav(song.vocals, dir / "vocals.wav");
      save_wav(song.accompaniment, dir / "accompaniment.wav");
      manifest["songs"].push_back({{"id", id},
                                   {"split", split},
                                   {"duration_s", song.mixture.duration_seconds()},
                                   {"genre", plan.genre}});
    }
  }
  std::ofstream out(root / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError((root / "manifest.json").string() + ": write failed");
}

}  // namespace hitlsep
