#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "hitlsep/error.hpp"
#include "hitlsep/eval.hpp"
#include "hitlsep/separate.hpp"

namespace hitlsep {

std::vector<double> SdrReport::included() const {
  std::vector<double> v;
  for (const auto& f : frames) {
    if (f.sdr_db) v.push_back(*f.sdr_db);
  }
  return v;
}

SdrReport framewise_sdr(const AudioClip& reference, const AudioClip& estimate, double frame_s, std::string song_id) {
  if (reference.length() != estimate.length() || reference.sample_rate != estimate.sample_rate ||
      reference.channels != estimate.channels) {
    throw ValidationError("framewise_sdr: reference (" + std::to_string(reference.length()) + " samples @ " +
                          std::to_string(reference.sample_rate) + " Hz) and estimate (" +
                          std::to_string(estimate.length()) + " @ " + std::to_string(estimate.sample_rate) +
                          " Hz) differ");
  }
  if (reference.samples.empty()) throw ValidationError("framewise_sdr: empty input");
  if (!(frame_s > 0)) throw ValidationError("framewise_sdr: frame_s must be positive");
  const auto frame = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(frame_s * reference.sample_rate)));
  const std::size_t n = reference.samples.size();
  SdrReport r;
  r.song_id = std::move(song_id);
  r.frame_s = frame_s;
  for (std::size_t b = 0, k = 0; b < n; b += frame, ++k) {
    const std::size_t e = std::min(n, b + frame);
    if (e - b < frame && 2 * (e - b) < frame) break;
    double num = 0.0, den = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      const double ref = reference.samples[i];
      const double err = ref - estimate.samples[i];
      num += ref * ref;
      den += err * err;
    }
    FrameSdr f{k, static_cast<double>(b) / reference.sample_rate, std::nullopt};
    if (num < kSilentFrameEnergy) {
      ++r.excluded_frames;
    } else if (den == 0.0) {
      f.sdr_db = kSdrCapDb;
    } else {
      f.sdr_db = std::clamp(10.0 * std::log10(num / den), -kSdrCapDb, kSdrCapDb);
    }
    r.frames.push_back(f);
  }
  const auto inc = r.included();
  if (!inc.empty()) {
    r.mean_sdr = aggregate(inc, Stat::Mean);
    r.median_sdr = aggregate(inc, Stat::Median);
  }
  return r;
}

double aggregate(std::span<const double> values, Stat stat) {
  if (values.empty()) throw ValidationError("aggregate: no included frames");
  if (stat == Stat::Mean) {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

SplitReport summarize(std::vector<SdrReport> songs) {
  std::sort(songs.begin(), songs.end(), [](const SdrReport& a, const SdrReport& b) { return a.song_id < b.song_id; });
  SplitReport r;
  std::vector<double> means, medians;
  for (const auto& s : songs) {
    if (s.mean_sdr) means.push_back(*s.mean_sdr);
    if (s.median_sdr) medians.push_back(*s.median_sdr);
  }
  if (!means.empty()) r.mean_of_means = aggregate(means, Stat::Mean);
  if (!medians.empty()) r.median_of_medians = aggregate(medians, Stat::Median);
  r.songs = std::move(songs);
  return r;
}

SplitReport evaluate_songs(const std::vector<SongAudio>& songs, const Estimator& estimator,
                           const EvalOptions& options) {
  std::vector<SdrReport> reports(songs.size());
  for (const auto& s : songs) {
    if (!s.vocals) throw ValidationError("evaluate: song '" + s.song_id + "' has no vocal stem");
  }
  const unsigned hw = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  const auto workers = static_cast<unsigned>(std::min<std::size_t>(hw, songs.size()));
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex error_mutex, progress_mutex;
  std::exception_ptr error;
  auto work = [&] {
    for (std::size_t i; (i = next++) < songs.size();) {
      try {
        const AudioClip est = estimator(songs[i]);
        reports[i] = framewise_sdr(*songs[i].vocals, est, options.frame_s, songs[i].song_id);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
      const std::size_t d = ++done;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(d, songs.size());
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  return summarize(std::move(reports));
}

SplitReport evaluate_model(const MaskNet& net, const SeparationSetup& setup, const std::vector<SongAudio>& songs,
                           const EvalOptions& options) {
  return evaluate_songs(
      songs, [&](const SongAudio& s) { return separate(net, setup, s.mixture); }, options);
}

std::vector<SongAudio> load_split_audio(const DatasetSplit& split, int sample_rate) {
  std::vector<SongAudio> out;
  out.reserve(split.entries.size());
  for (const auto& e : split.entries) {
    if (!e.vocals_path) throw ValidationError("evaluate: song '" + e.song_id + "' has no vocal stem");
    out.push_back(load_song(e, sample_rate));
  }
  return out;
}

SplitReport evaluate_model(const MaskNet& net, const SeparationSetup& setup, const DatasetSplit& split,
                           const EvalOptions& options) {
  return evaluate_model(net, setup, load_split_audio(split, setup.sample_rate), options);
}

Estimator baseline_estimator(Baseline baseline, const SeparationSetup& setup) {
  switch (baseline) {
    case Baseline::UnitMask:
      return [setup](const SongAudio& s) {
        const Spectrogram spec = stft(s.mixture, setup.stft);
        return apply_mask(spec, constant_mask(spec, 1.0f));
      };
    case Baseline::IdealRatioMask:
      return [setup](const SongAudio& s) {
        if (!s.accompaniment) throw ValidationError("ideal ratio mask needs the accompaniment stem");
        const Spectrogram spec = stft(s.mixture, setup.stft);
        return apply_mask(spec, ideal_ratio_mask(stft(*s.vocals, setup.stft), stft(*s.accompaniment, setup.stft)));
      };
    case Baseline::OracleVocals:
      return [](const SongAudio& s) { return *s.vocals; };
  }
  throw ValidationError("unknown baseline");
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

}  // namespace

void emit_csv(const SplitReport& report, const std::filesystem::path& frames_path,
              const std::filesystem::path& summary_path) {
  if (report.songs.empty()) throw ValidationError("emit_csv: no reports");
  std::ofstream frames(frames_path);
  if (!frames) throw IoError(frames_path.string() + ": cannot open for writing");
  frames << "song_id,frame_index,t_start_s,sdr_db,included\n";
  for (const auto& s : report.songs) {
    for (const auto& f : s.frames) {
      frames << s.song_id << ',' << f.index << ',' << num(f.t_start_s) << ',' << opt(f.sdr_db) << ','
             << (f.sdr_db ? "true" : "false") << '\n';
    }
  }
  std::ofstream summary(summary_path);
  if (!summary) throw IoError(summary_path.string() + ": cannot open for writing");
  summary << "song_id,mean_sdr,median_sdr\n";
  for (const auto& s : report.songs) summary << s.song_id << ',' << opt(s.mean_sdr) << ',' << opt(s.median_sdr) << '\n';
  if (!frames || !summary) throw IoError("emit_csv: write failed");
}

nlohmann::json report_to_json(const SplitReport& report) {
  auto opt_json = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["summary"] = {{"mean_of_means", opt_json(report.mean_of_means)},
                  {"median_of_medians", opt_json(report.median_of_medians)},
                  {"songs", report.songs.size()}};
  j["songs"] = nlohmann::json::array();
  for (const auto& s : report.songs) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : s.frames) {
      frames.push_back({{"frame_index", f.index}, {"t_start_s", f.t_start_s}, {"sdr_db", opt_json(f.sdr_db)}});
    }
    j["songs"].push_back({{"song_id", s.song_id},
                          {"frame_s", s.frame_s},
                          {"mean_sdr", opt_json(s.mean_sdr)},
                          {"median_sdr", opt_json(s.median_sdr)},
                          {"excluded_frames", s.excluded_frames},
                          {"frames", frames}});
  }
  return j;
}

SplitReport report_from_json(const nlohmann::json& j) {
  auto opt_get = [](const nlohmann::json& v) {
    return v.is_null() ? std::optional<double>() : std::optional<double>(v.get<double>());
  };
  try {
    SplitReport r;
    r.mean_of_means = opt_get(j.at("summary").at("mean_of_means"));
    r.median_of_medians = opt_get(j.at("summary").at("median_of_medians"));
    for (const auto& s : j.at("songs")) {
      SdrReport rep;
      rep.song_id = s.at("song_id").get<std::string>();
      rep.frame_s = s.at("frame_s").get<double>();
      rep.mean_sdr = opt_get(s.at("mean_sdr"));
      rep.median_sdr = opt_get(s.at("median_sdr"));
      rep.excluded_frames = s.at("excluded_frames").get<std::size_t>();
      for (const auto& f : s.at("frames")) {
        rep.frames.push_back({f.at("frame_index").get<std::size_t>(), f.at("t_start_s").get<double>(),
                              opt_get(f.at("sdr_db"))});
      }
      r.songs.push_back(std::move(rep));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed report JSON: ") + e.what());
  }
}

}  // namespace hitlsep
