#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "hitlsep/data.hpp"
#include "hitlsep/error.hpp"
#include "hitlsep/rng.hpp"

namespace hitlsep {

namespace fs = std::filesystem;

std::string_view to_string(SplitName split) {
  switch (split) {
    case SplitName::Train: return "train";
    case SplitName::Hitl: return "hitl";
    case SplitName::Test: return "test";
  }
  return "?";
}

SplitName split_from_string(std::string_view name) {
  if (name == "train") return SplitName::Train;
  if (name == "hitl") return SplitName::Hitl;
  if (name == "test") return SplitName::Test;
  throw ValidationError("unknown split '" + std::string(name) + "' (expected train, hitl or test)");
}

const SongEntry* DatasetSplit::find(std::string_view song_id) const {
  for (const auto& e : entries) {
    if (e.song_id == song_id) return &e;
  }
  return nullptr;
}

DatasetSplit DatasetSplit::filtered(std::string_view genre) const {
  DatasetSplit out{name, {}};
  for (const auto& e : entries) {
    if (genre.empty() || e.genre == genre) out.entries.push_back(e);
  }
  return out;
}

const DatasetSplit& Dataset::split(SplitName name) const {
  switch (name) {
    case SplitName::Train: return train;
    case SplitName::Hitl: return hitl;
    case SplitName::Test: return test;
  }
  return train;
}

const SongEntry* Dataset::find(std::string_view song_id) const {
  for (const DatasetSplit* s : {&train, &hitl, &test}) {
    if (const SongEntry* e = s->find(song_id)) return e;
  }
  return nullptr;
}

namespace {

std::map<std::string, std::string> read_manifest_genres(const fs::path& root) {
  std::map<std::string, std::string> genres;
  const fs::path p = root / "manifest.json";
  if (!fs::exists(p)) return genres;
  std::ifstream in(p);
  nlohmann::json j;
  try {
    in >> j;
    for (const auto& s : j.at("songs")) {
      if (s.contains("genre")) genres[s.at("id").get<std::string>()] = s.at("genre").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(p.string() + ": malformed manifest: " + e.what());
  }
  return genres;
}

void validate_song(const SongEntry& e) {
  const AudioClip mix = mixdown(load_wav(e.mixture_path, AudioRole::Mixture));
  std::optional<AudioClip> voc, acc;
  if (e.vocals_path) voc = mixdown(load_wav(*e.vocals_path, AudioRole::Vocals));
  if (e.accompaniment_path) acc = mixdown(load_wav(*e.accompaniment_path, AudioRole::Accompaniment));
  for (const auto* stem : {&voc, &acc}) {
    if (*stem && ((*stem)->length() != mix.length() || (*stem)->sample_rate != mix.sample_rate)) {
      throw ValidationError("song '" + e.song_id + "': stem length mismatch (mixture " +
                            std::to_string(mix.length()) + " samples, stem " +
                            std::to_string((*stem)->length()) + ")");
    }
  }
  if (voc && acc) {
    double worst = 0.0;
    for (std::size_t i = 0; i < mix.length(); ++i) {
      worst = std::max(worst, std::abs(mix.samples[i] - voc->samples[i] - acc->samples[i]));
    }
    if (worst > 1e-6) {
      throw ValidationError("song '" + e.song_id + "': vocals + accompaniment differ from mixture by " +
                            std::to_string(worst));
    }
  }
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError(root.string() + ": dataset root is not a directory");
  Dataset ds;
  ds.root = root;
  const auto genres = read_manifest_genres(root);
  std::set<std::string> seen;
  for (DatasetSplit* sp : {&ds.train, &ds.hitl, &ds.test}) {
    DatasetSplit& split = *sp;
    const SplitName name = split.name;
    const fs::path dir = root / std::string(to_string(name));
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> songs;
    for (const auto& d : fs::directory_iterator(dir)) {
      if (d.is_directory()) songs.push_back(d.path());
    }
    std::sort(songs.begin(), songs.end());
    for (const auto& song_dir : songs) {
      SongEntry e;
      e.song_id = song_dir.filename().string();
      if (!seen.insert(e.song_id).second) {
        throw ValidationError("duplicate song_id '" + e.song_id + "' (found again in split " +
                              std::string(to_string(name)) + ")");
      }
      e.mixture_path = song_dir / "mixture.wav";
      if (!fs::exists(e.mixture_path)) {
        throw ValidationError("song '" + e.song_id + "': missing mixture (" + e.mixture_path.string() + ")");
      }
      if (fs::exists(song_dir / "vocals.wav")) e.vocals_path = song_dir / "vocals.wav";
      if (fs::exists(song_dir / "accompaniment.wav")) e.accompaniment_path = song_dir / "accompaniment.wav";
      if (auto it = genres.find(e.song_id); it != genres.end()) e.genre = it->second;
      validate_song(e);
      e.duration_s = load_wav(e.mixture_path).duration_seconds();
      split.entries.push_back(std::move(e));
    }
  }
  return ds;
}

SongAudio load_song(const SongEntry& entry, int sample_rate) {
  auto conform = [&](const fs::path& p, AudioRole role) {
    AudioClip c = resample(mixdown(load_wav(p, role)), sample_rate);
    c.role = role;
    return c;
  };
  SongAudio s;
  s.song_id = entry.song_id;
  s.mixture = conform(entry.mixture_path, AudioRole::Mixture);
  if (entry.vocals_path) s.vocals = conform(*entry.vocals_path, AudioRole::Vocals);
  if (entry.accompaniment_path) s.accompaniment = conform(*entry.accompaniment_path, AudioRole::Accompaniment);
  return s;
}

SongSpectra analyse_song(const SongAudio& song, const SeparationSetup& setup) {
  if (song.mixture.sample_rate != setup.sample_rate) {
    throw ValidationError("song '" + song.song_id + "': sample rate " + std::to_string(song.mixture.sample_rate) +
                          " differs from setup rate " + std::to_string(setup.sample_rate));
  }
  SongSpectra s;
  s.song_id = song.song_id;
  s.mixture = song.mixture;
  s.mix = stft(song.mixture, setup.stft);
  if (song.vocals) s.vocals = stft(*song.vocals, setup.stft);
  return s;
}

std::vector<TrainingExample> paired_examples(const SongSpectra& song, WindowShape shape,
                                             const std::vector<std::size_t>& starts, ExampleSource source) {
  if (!song.vocals) throw ValidationError("song '" + song.song_id + "' has no vocal stem");
  std::vector<TrainingExample> out;
  out.reserve(starts.size());
  for (std::size_t s : starts) {
    TrainingExample ex;
    ex.x = extract_window(song.mix, shape, s, song.song_id);
    ex.y = extract_window(*song.vocals, shape, s, song.song_id).values;
    ex.source = source;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::size_t> random_starts(std::size_t n_frames, std::size_t time_win, std::size_t count,
                                       std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t last = n_frames > time_win ? n_frames - time_win : 0;
  std::vector<std::size_t> starts(count);
  for (auto& s : starts) s = rng.below(last + 1);
  return starts;
}

namespace {

std::vector<std::size_t> select_songs(std::size_t n_songs, double fraction, std::uint64_t seed) {
  if (n_songs == 0) throw ValidationError("exemplar store: train split is empty");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("exemplar store: fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n_songs) + 1e-9));
  if (k == 0) {
    throw ValidationError("exemplar store: fraction " + std::to_string(fraction) + " of " +
                          std::to_string(n_songs) + " songs selects no song");
  }
  std::vector<std::size_t> idx(n_songs);
  for (std::size_t i = 0; i < n_songs; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 1));
  rng.shuffle(idx);
  idx.resize(k);
  return idx;
}

void fill_store(ExemplarStore& store, const SongSpectra& song, WindowShape shape) {
  const auto starts = random_starts(song.mix.n_frames, static_cast<std::size_t>(shape.time), store.per_song,
                                    mix_seed(store.seed, hash_tag(song.song_id)));
  auto ex = paired_examples(song, shape, starts, ExampleSource::OriginalTrain);
  store.examples.insert(store.examples.end(), std::make_move_iterator(ex.begin()),
                        std::make_move_iterator(ex.end()));
  store.song_ids.push_back(song.song_id);
}

}  // namespace

ExemplarStore build_exemplar_store(const DatasetSplit& train, const SeparationSetup& setup, double fraction,
                                   std::size_t per_song, std::uint64_t seed) {
  ExemplarStore store{{}, {}, fraction, per_song, seed};
  for (std::size_t i : select_songs(train.entries.size(), fraction, seed)) {
    fill_store(store, analyse_song(load_song(train.entries[i], setup.sample_rate), setup), setup.net.input);
  }
  return store;
}

ExemplarStore build_exemplar_store(const std::vector<SongSpectra>& train, WindowShape shape, double fraction,
                                   std::size_t per_song, std::uint64_t seed) {
  ExemplarStore store{{}, {}, fraction, per_song, seed};
  for (std::size_t i : select_songs(train.size(), fraction, seed)) fill_store(store, train[i], shape);
  return store;
}

}  // namespace hitlsep
