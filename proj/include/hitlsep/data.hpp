#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hitlsep/audio.hpp"
#include "hitlsep/model.hpp"
#include "hitlsep/setup.hpp"
#include "hitlsep/stft.hpp"

namespace hitlsep {

enum class SplitName { Train, Hitl, Test };
std::string_view to_string(SplitName split);
SplitName split_from_string(std::string_view name);

struct SongEntry {
  std::string song_id;
  std::filesystem::path mixture_path;
  std::optional<std::filesystem::path> vocals_path;
  std::optional<std::filesystem::path> accompaniment_path;
  double duration_s = 0.0;
  std::string genre;  // from the manifest when present

  bool labeled() const { return vocals_path.has_value() && accompaniment_path.has_value(); }
};

struct DatasetSplit {
  SplitName name = SplitName::Train;
  std::vector<SongEntry> entries;

  const SongEntry* find(std::string_view song_id) const;
  /// Entries whose genre matches (all entries for an empty filter).
  DatasetSplit filtered(std::string_view genre) const;
};

struct Dataset {
  std::filesystem::path root;
  DatasetSplit train{SplitName::Train, {}};
  DatasetSplit hitl{SplitName::Hitl, {}};
  DatasetSplit test{SplitName::Test, {}};

  const DatasetSplit& split(SplitName name) const;
  /// Searches all three splits.
  const SongEntry* find(std::string_view song_id) const;
};

/// Scans `<root>/<split>/<song_id>/{mixture,vocals,accompaniment}.wav`.
/// Validates stem lengths and additivity (|m - v - a| <= 1e-6 after mono fold-down)
/// and song-id uniqueness across splits. Missing split directories are empty splits.
Dataset load_dataset(const std::filesystem::path& root);

/// Stems of one song folded to mono and resampled to `sample_rate`.
struct SongAudio {
  std::string song_id;
  AudioClip mixture;
  std::optional<AudioClip> vocals;
  std::optional<AudioClip> accompaniment;
};
SongAudio load_song(const SongEntry& entry, int sample_rate);

/// Mixture (and vocal) spectrograms of one song at the setup's rate.
struct SongSpectra {
  std::string song_id;
  AudioClip mixture;
  Spectrogram mix;
  std::optional<Spectrogram> vocals;
};
SongSpectra analyse_song(const SongAudio& song, const SeparationSetup& setup);

/// Training pairs (mixture window, oracle-vocal window) at the given start frames.
std::vector<TrainingExample> paired_examples(const SongSpectra& song, WindowShape shape,
                                             const std::vector<std::size_t>& starts, ExampleSource source);

/// `count` seeded-random window start frames for a spectrogram of `n_frames`.
std::vector<std::size_t> random_starts(std::size_t n_frames, std::size_t time_win, std::size_t count,
                                       std::uint64_t seed);

struct ExemplarStore {
  std::vector<TrainingExample> examples;
  std::vector<std::string> song_ids;  // selected train songs, in selection order
  double fraction = 1.0;
  std::size_t per_song = 8;
  std::uint64_t seed = 0;
};

/// Picks floor(fraction * n_songs) train songs uniformly (seeded), then `per_song`
/// random windows from each with oracle-vocal targets.
ExemplarStore build_exemplar_store(const DatasetSplit& train, const SeparationSetup& setup, double fraction,
                                   std::size_t per_song, std::uint64_t seed);
/// Same selection over songs already analysed.
ExemplarStore build_exemplar_store(const std::vector<SongSpectra>& train, WindowShape shape, double fraction,
                                   std::size_t per_song, std::uint64_t seed);

struct ProceduralConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 8;
  std::size_t n_hitl = 2;
  std::size_t n_test = 4;
  double song_len_s = 30.0;
  int sample_rate = 8000;
  std::string train_genre = "A";
  std::string hitl_genre = "A";
  std::string test_genre = "A";
};

/// In-memory stems of one generated song.
struct GeneratedSong {
  std::string song_id;
  std::string genre;
  AudioClip vocals;
  AudioClip accompaniment;
  AudioClip mixture;
};

/// Deterministic synthetic song: vibrato vocal lines with long silent stretches over
/// pads, bass, drums and a lead instrument. Genre "A" or "B" sets the accompaniment
/// timbre and how often the lead plays.
GeneratedSong generate_song(const std::string& song_id, const std::string& genre, double len_s,
                            int sample_rate, std::uint64_t seed);

/// Writes the full dataset and `manifest.json` under `root`.
void generate_procedural_dataset(const ProceduralConfig& config, const std::filesystem::path& root);

}  // namespace hitlsep
