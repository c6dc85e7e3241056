#include <algorithm>
#include <cmath>
#include <map>

#include "hitlsep/adapt.hpp"
#include "hitlsep/error.hpp"
#include "hitlsep/rng.hpp"
#include "hitlsep/separate.hpp"

namespace hitlsep {

std::string_view to_string(AdaptMethod m) { return m == AdaptMethod::ZeroTarget ? "zero_target" : "synthetic"; }

AdaptMethod adapt_method_from_string(std::string_view s) {
  if (s == "zero_target") return AdaptMethod::ZeroTarget;
  if (s == "synthetic") return AdaptMethod::Synthetic;
  throw ValidationError("unknown adaptation method '" + std::string(s) + "' (expected zero_target or synthetic)");
}

AdaptConfig AdaptConfig::defaults(AdaptMethod method) {
  AdaptConfig c;
  c.method = method;
  c.exemplar_fraction = method == AdaptMethod::ZeroTarget ? 1.0 : 0.2;
  return c;
}

void AdaptConfig::validate() const {
  if (x < 1) throw ValidationError("adapt config: x must be >= 1");
  if (z < 1) throw ValidationError("adapt config: z must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ValidationError("adapt config: lr must be positive");
  if (!(exemplar_fraction > 0.0 && exemplar_fraction <= 1.0)) {
    throw ValidationError("adapt config: exemplar_fraction must be in (0, 1]");
  }
}

void to_json(nlohmann::json& j, const AdaptConfig& c) {
  j = {{"method", std::string(to_string(c.method))},
       {"lr", c.lr},
       {"epochs", c.epochs},
       {"x", c.x},
       {"y", c.y},
       {"z", c.z},
       {"exemplar_fraction", c.exemplar_fraction},
       {"seed", c.seed}};
  if (c.window_stride) j["window_stride"] = c.window_stride;
}

void from_json(const nlohmann::json& j, AdaptConfig& c) {
  if (!j.is_object()) throw ValidationError("adapt config: expected a JSON object");
  try {
    const AdaptMethod m =
        j.contains("method") ? adapt_method_from_string(j["method"].get<std::string>()) : AdaptMethod::ZeroTarget;
    c = AdaptConfig::defaults(m);
    auto count = [&](const char* key, std::size_t& out) {
      if (!j.contains(key)) return;
      const auto& v = j[key];
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ValidationError(std::string("adapt config: '") + key + "' must be a non-negative integer");
      }
      out = v.get<std::size_t>();
    };
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    count("epochs", c.epochs);
    count("x", c.x);
    count("y", c.y);
    count("z", c.z);
    count("window_stride", c.window_stride);
    if (j.contains("exemplar_fraction")) c.exemplar_fraction = j["exemplar_fraction"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("adapt config: ") + e.what());
  }
  c.validate();
}

std::vector<TrainingExample> build_zero_target_examples(const std::vector<SongSpectra>& hitl_songs,
                                                        const std::vector<AnnotationSet>& annotations,
                                                        WindowShape shape, std::size_t stride) {
  const auto tw = static_cast<std::size_t>(shape.time);
  const auto fw = static_cast<std::size_t>(shape.freq);
  if (stride == 0) stride = tw;
  std::vector<TrainingExample> out;
  for (const auto& set : annotations) {
    if (set.segments.empty()) continue;
    const auto song = std::find_if(hitl_songs.begin(), hitl_songs.end(),
                                   [&](const SongSpectra& s) { return s.song_id == set.song_id; });
    if (song == hitl_songs.end()) throw ValidationError("annotations reference unknown song '" + set.song_id + "'");
    const Spectrogram& spec = song->mix;
    if (fw > spec.n_bins()) throw ShapeError("zero-target windows need more bins than the spectrogram has");
    const double rate = spec.source_rate;
    const double hop = spec.params.hop;
    const double duration = static_cast<double>(spec.signal_length) / rate;
    for (const auto& seg : set.segments) {
      if (seg.start_s < 0 || seg.end_s > duration + 1e-6 || seg.start_s >= seg.end_s) {
        throw ValidationError("segment (" + std::to_string(seg.start_s) + ", " + std::to_string(seg.end_s) +
                              ") outside song '" + set.song_id + "' bounds");
      }
      // Frames whose centre lies inside the segment.
      const auto f0 = static_cast<std::size_t>(std::ceil(seg.start_s * rate / hop - 1e-9));
      const auto f1 = std::min(spec.n_frames, static_cast<std::size_t>(std::floor(seg.end_s * rate / hop + 1e-9)) + 1);
      if (f1 <= f0) continue;
      const std::size_t len = f1 - f0;
      auto emit = [&](std::size_t start, bool cyclic) {
        TrainingExample ex;
        ex.source = ExampleSource::ZeroTarget;
        ex.x.shape = shape;
        ex.x.song_id = set.song_id;
        ex.x.start_frame = start;
        ex.x.values.resize(fw * tw);
        for (std::size_t t = 0; t < tw; ++t) {
          const std::size_t frame = cyclic ? f0 + t % len : start + t;
          for (std::size_t f = 0; f < fw; ++f) ex.x.values[f * tw + t] = static_cast<float>(std::abs(spec.at(f, frame)));
        }
        ex.y.assign(fw * tw, 0.0f);
        out.push_back(std::move(ex));
      };
      if (len < tw) {
        emit(f0, true);
      } else {
        for (std::size_t s = f0; s + tw <= f1; s += stride) emit(s, false);
      }
    }
  }
  return out;
}

namespace {

AdamState fresh_adam(const MaskNet& net, double lr) {
  std::vector<std::size_t> sizes;
  for (const auto& p : net.params) sizes.push_back(p.size());
  return AdamState::for_sizes(sizes, lr);
}

/// Appends y seeded exemplars: without replacement while the store allows it.
void add_exemplars(std::vector<TrainingExample>& batch, const ExemplarStore& store, std::size_t y, Rng& rng) {
  if (y == 0) return;
  const std::size_t n = store.examples.size();
  if (y <= n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < y; ++i) {
      std::swap(idx[i], idx[i + rng.below(n - i)]);
      batch.push_back(store.examples[idx[i]]);
    }
  } else {
    for (std::size_t i = 0; i < y; ++i) batch.push_back(store.examples[rng.below(n)]);
  }
}

BatchRecord record(const std::vector<TrainingExample>& batch, double loss) {
  BatchRecord r;
  r.loss = loss;
  for (const auto& ex : batch) {
    r.sources.push_back(ex.source);
    r.song_ids.push_back(ex.x.song_id);
  }
  return r;
}

void check_store(const ExemplarStore& store, const AdaptConfig& config) {
  if (config.y > 0 && store.examples.empty()) {
    throw ValidationError("adaptation with y > 0 needs a non-empty exemplar store");
  }
}

}  // namespace

AdaptResult adapt_zero_target(const MaskNet& net, const std::vector<TrainingExample>& hitl_examples,
                              const ExemplarStore& store, const AdaptConfig& config, const ProgressFn& progress) {
  config.validate();
  if (config.method != AdaptMethod::ZeroTarget) throw ValidationError("adapt_zero_target: method must be zero_target");
  AdaptResult result;
  result.net = net;
  result.adam = fresh_adam(net, config.lr);
  if (hitl_examples.empty()) {
    result.warnings.push_back("no zero-target examples; model unchanged");
    return result;
  }
  check_store(store, config);
  result.net.mode = NetMode::Train;
  const std::size_t n = hitl_examples.size();
  const std::size_t per_epoch = (n + config.x - 1) / config.x;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng order_rng(mix_seed(config.seed, 0x100 + epoch));
    order_rng.shuffle(order);
    Rng replay_rng(mix_seed(config.seed, 0x200 + epoch));
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<TrainingExample> batch;
      batch.reserve(config.x + config.y);
      for (std::size_t j = 0; j < config.x; ++j) batch.push_back(hitl_examples[order[(b * config.x + j) % n]]);
      add_exemplars(batch, store, config.y, replay_rng);
      const double loss = train_step(result.net, result.adam, batch, mix_seed(config.seed, 0x300 + step++));
      result.batches.push_back(record(batch, loss));
      if (progress) {
        progress(static_cast<double>(epoch * per_epoch + b + 1) / static_cast<double>(config.epochs * per_epoch));
      }
    }
  }
  result.net.mode = NetMode::Eval;
  return result;
}

SyntheticTrack build_synthetic_track(const AudioClip& hitl_mixture, const std::vector<Segment>& segments,
                                     const AudioClip& train_vocals, std::string hitl_song_id,
                                     std::string train_song_id) {
  if (hitl_mixture.sample_rate != train_vocals.sample_rate) {
    throw ValidationError("synthetic track: HITL mixture and train vocals differ in sample rate");
  }
  if (hitl_mixture.channels != 1 || train_vocals.channels != 1) {
    throw ValidationError("synthetic track: clips must be mono");
  }
  if (segments.empty()) throw ValidationError("synthetic track: no segments (zero-length loop)");
  const double rate = hitl_mixture.sample_rate;
  const auto fade = static_cast<std::size_t>(std::llround(kLoopCrossfadeSeconds * rate));
  std::vector<std::pair<std::size_t, std::size_t>> pieces;
  std::size_t total = 0;
  for (const auto& s : segments) {
    const auto a = static_cast<std::size_t>(std::llround(std::max(0.0, s.start_s) * rate));
    const auto b = std::min(hitl_mixture.length(), static_cast<std::size_t>(std::llround(s.end_s * rate)));
    if (b < a + 2 * fade + 1) continue;
    pieces.emplace_back(a, b);
    total += b - a - fade;
  }
  if (total == 0) throw ValidationError("synthetic track: segments yield a zero-length loop");

  std::vector<double> loop(total, 0.0);
  std::size_t offset = 0;
  for (auto [a, b] : pieces) {
    const std::size_t len = b - a;
    for (std::size_t i = 0; i < len; ++i) {
      double w = 1.0;
      if (i < fade) w = (static_cast<double>(i) + 0.5) / static_cast<double>(fade);
      if (i + fade >= len) w = (static_cast<double>(len - i) - 0.5) / static_cast<double>(fade);
      loop[(offset + i) % total] += w * hitl_mixture.samples[a + i];
    }
    offset += len - fade;
  }

  const std::size_t n = train_vocals.length();
  SyntheticTrack t;
  t.hitl_song_id = std::move(hitl_song_id);
  t.train_song_id = std::move(train_song_id);
  t.segments = segments;
  t.loop_length = total;
  std::vector<double> acc(n), mix(n);
  for (std::size_t i = 0; i < n; ++i) {
    acc[i] = loop[i % total];
    mix[i] = acc[i] + train_vocals.samples[i];
  }
  t.accompaniment = AudioClip(std::move(acc), train_vocals.sample_rate, AudioRole::Accompaniment);
  t.mixture = AudioClip(std::move(mix), train_vocals.sample_rate, AudioRole::Mixture);
  t.oracle_vocals = train_vocals;
  t.oracle_vocals.role = AudioRole::Vocals;
  return t;
}

AdaptResult adapt_synthetic(const MaskNet& net, const SeparationSetup& setup, const std::vector<SongAudio>& hitl_songs,
                            const std::vector<AnnotationSet>& annotations, const std::vector<SongAudio>& train_songs,
                            const ExemplarStore& store, const AdaptConfig& config, const ProgressFn& progress) {
  config.validate();
  if (config.method != AdaptMethod::Synthetic) throw ValidationError("adapt_synthetic: method must be synthetic");
  if (train_songs.empty()) throw ValidationError("adapt_synthetic: train split is empty");
  for (const auto& s : train_songs) {
    if (!s.vocals) throw ValidationError("adapt_synthetic: train song '" + s.song_id + "' has no vocal stem");
  }
  AdaptResult result;
  result.net = net;
  result.adam = fresh_adam(net, config.lr);

  std::vector<SongSpectra> tracks;
  for (const auto& set : annotations) {
    if (set.segments.empty()) continue;
    const auto song = std::find_if(hitl_songs.begin(), hitl_songs.end(),
                                   [&](const SongAudio& s) { return s.song_id == set.song_id; });
    if (song == hitl_songs.end()) throw ValidationError("annotations reference unknown song '" + set.song_id + "'");
    Rng pick(mix_seed(config.seed, hash_tag(set.song_id)));
    const SongAudio& donor = train_songs[pick.below(train_songs.size())];
    const SyntheticTrack track =
        build_synthetic_track(song->mixture, set.segments, *donor.vocals, set.song_id, donor.song_id);
    SongAudio audio{track.hitl_song_id + "+" + track.train_song_id, track.mixture, track.oracle_vocals,
                    track.accompaniment};
    tracks.push_back(analyse_song(audio, setup));
    result.synthetic_pairs.push_back(track.hitl_song_id + "<-" + track.train_song_id);
  }
  if (tracks.empty()) {
    result.warnings.push_back("no annotated segments; model unchanged");
    return result;
  }
  check_store(store, config);
  result.net.mode = NetMode::Train;
  const WindowShape shape = setup.net.input;
  const std::size_t total = config.epochs * tracks.size() * config.z;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng replay_rng(mix_seed(config.seed, 0x200 + epoch));
    for (std::size_t k = 0; k < tracks.size(); ++k) {
      for (std::size_t zi = 0; zi < config.z; ++zi) {
        const auto starts = random_starts(tracks[k].mix.n_frames, static_cast<std::size_t>(shape.time), config.x,
                                          mix_seed(config.seed, 0x400 + step));
        std::vector<TrainingExample> batch = paired_examples(tracks[k], shape, starts, ExampleSource::Synthetic);
        add_exemplars(batch, store, config.y, replay_rng);
        const double loss = train_step(result.net, result.adam, batch, mix_seed(config.seed, 0x300 + step));
        ++step;
        result.batches.push_back(record(batch, loss));
        if (progress) progress(static_cast<double>(step) / static_cast<double>(total));
      }
    }
  }
  result.net.mode = NetMode::Eval;
  return result;
}

AdaptResult adapt(const MaskNet& net, const SeparationSetup& setup, const std::vector<SongAudio>& hitl_songs,
                  const std::vector<AnnotationSet>& annotations, const std::vector<SongAudio>& train_songs,
                  const ExemplarStore& store, const AdaptConfig& config, const ProgressFn& progress) {
  if (config.method == AdaptMethod::Synthetic) {
    return adapt_synthetic(net, setup, hitl_songs, annotations, train_songs, store, config, progress);
  }
  std::vector<SongSpectra> spectra;
  for (const auto& set : annotations) {
    if (set.segments.empty()) continue;
    const auto song = std::find_if(hitl_songs.begin(), hitl_songs.end(),
                                   [&](const SongAudio& s) { return s.song_id == set.song_id; });
    if (song == hitl_songs.end()) throw ValidationError("annotations reference unknown song '" + set.song_id + "'");
    SongAudio mix_only{song->song_id, song->mixture, std::nullopt, std::nullopt};
    spectra.push_back(analyse_song(mix_only, setup));
  }
  const auto examples = build_zero_target_examples(spectra, annotations, setup.net.input, config.window_stride);
  return adapt_zero_target(net, examples, store, config, progress);
}

std::vector<AnnotationSet> annotate_songs(const MaskNet& net, const SeparationSetup& setup,
                                          const std::vector<SongAudio>& songs, const AnnotatorParams& params) {
  std::vector<AnnotationSet> out;
  for (const auto& s : songs) {
    if (!s.vocals) throw ValidationError("annotate: song '" + s.song_id + "' has no oracle vocals");
    out.push_back(simulate_annotations(*s.vocals, separate(net, setup, s.mixture), s.song_id, params));
  }
  return out;
}

std::vector<IterationResult> iterate_hitl(const MaskNet& net, const SeparationSetup& setup,
                                          const std::vector<std::vector<SongAudio>>& hitl_batches,
                                          const std::vector<SongAudio>& train_songs, const ExemplarStore& store,
                                          const std::vector<SongAudio>& test_songs, const AdaptConfig& config,
                                          const AnnotatorParams& annotator) {
  std::vector<IterationResult> out;
  out.reserve(hitl_batches.size());
  const MaskNet* current = &net;
  for (std::size_t i = 0; i < hitl_batches.size(); ++i) {
    AdaptConfig cfg = config;
    cfg.seed = mix_seed(config.seed, 0x900 + i);
    IterationResult it;
    it.annotations = annotate_songs(*current, setup, hitl_batches[i], annotator);
    AdaptResult r = adapt(*current, setup, hitl_batches[i], it.annotations, train_songs, store, cfg);
    it.net = std::move(r.net);
    it.batches = std::move(r.batches);
    it.test_report = evaluate_model(it.net, setup, test_songs);
    out.push_back(std::move(it));
    current = &out.back().net;
  }
  return out;
}

}  // namespace hitlsep
