#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hitlsep/audio.hpp"
#include "hitlsep/data.hpp"
#include "hitlsep/model.hpp"
#include "hitlsep/setup.hpp"

namespace hitlsep {

inline constexpr double kSdrCapDb = 100.0;
inline constexpr double kSilentFrameEnergy = 1e-10;

struct FrameSdr {
  std::size_t index = 0;
  double t_start_s = 0.0;
  std::optional<double> sdr_db;  // empty when the reference frame is silent
};

struct SdrReport {
  std::string song_id;
  double frame_s = 1.0;
  std::vector<FrameSdr> frames;
  std::optional<double> mean_sdr;
  std::optional<double> median_sdr;
  std::size_t excluded_frames = 0;

  std::vector<double> included() const;
};

/// Per-frame 10 log10(sum ref^2 / sum (ref - est)^2) over non-overlapping frames
/// (a trailing partial frame counts when at least half a frame long). Frames whose
/// reference energy is below 1e-10 are excluded; values are capped to +-100 dB.
SdrReport framewise_sdr(const AudioClip& reference, const AudioClip& estimate, double frame_s = 1.0,
                        std::string song_id = {});

enum class Stat { Mean, Median };
/// Mean, or median with midpoint averaging for even counts. Throws on empty input.
double aggregate(std::span<const double> values, Stat stat);

struct SplitReport {
  std::vector<SdrReport> songs;  // ordered by song_id
  std::optional<double> mean_of_means;
  std::optional<double> median_of_medians;
};

/// Orders songs and fills the across-song summary.
SplitReport summarize(std::vector<SdrReport> songs);

/// Produces a vocal estimate for a song (mono, setup rate).
using Estimator = std::function<AudioClip(const SongAudio&)>;

struct EvalOptions {
  double frame_s = 1.0;
  unsigned threads = 0;  // 0 = hardware concurrency
  std::function<void(std::size_t done, std::size_t total)> progress;
};

SplitReport evaluate_songs(const std::vector<SongAudio>& songs, const Estimator& estimator,
                           const EvalOptions& options = {});
SplitReport evaluate_model(const MaskNet& net, const SeparationSetup& setup, const std::vector<SongAudio>& songs,
                           const EvalOptions& options = {});
/// Loads every song of the split at the setup rate first; songs need vocal stems.
SplitReport evaluate_model(const MaskNet& net, const SeparationSetup& setup, const DatasetSplit& split,
                           const EvalOptions& options = {});

enum class Baseline { UnitMask, IdealRatioMask, OracleVocals };
Estimator baseline_estimator(Baseline baseline, const SeparationSetup& setup);

std::vector<SongAudio> load_split_audio(const DatasetSplit& split, int sample_rate);

/// Writes the per-frame CSV (song_id, frame_index, t_start_s, sdr_db, included)
/// and the per-song summary CSV (song_id, mean_sdr, median_sdr).
void emit_csv(const SplitReport& report, const std::filesystem::path& frames_path,
              const std::filesystem::path& summary_path);

nlohmann::json report_to_json(const SplitReport& report);
SplitReport report_from_json(const nlohmann::json& j);

}  // namespace hitlsep
