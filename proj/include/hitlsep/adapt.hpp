#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hitlsep/adam.hpp"
#include "hitlsep/annotate.hpp"
#include "hitlsep/data.hpp"
#include "hitlsep/eval.hpp"
#include "hitlsep/model.hpp"
#include "hitlsep/setup.hpp"

namespace hitlsep {

using ProgressFn = std::function<void(double fraction)>;

/// One optimisation step: L1 loss, Adam update, then running-statistics update.
/// Returns the batch loss; a non-finite loss throws NumericError and changes nothing.
double train_step(MaskNet& net, AdamState& adam, std::span<const TrainingExample> batch, std::uint64_t dropout_seed);

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t crops_per_song = 4;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::vector<double> step_loss;
};

/// Base model on labeled train songs: per epoch `crops_per_song` seeded random
/// windows per song, shuffled into batches.
TrainResult train_base(const std::vector<SongSpectra>& train, const SeparationSetup& setup, const TrainConfig& config,
                       const ProgressFn& progress = {});
TrainResult train_base(const DatasetSplit& train, const SeparationSetup& setup, const TrainConfig& config,
                       const ProgressFn& progress = {});

enum class AdaptMethod { ZeroTarget, Synthetic };
std::string_view to_string(AdaptMethod m);
AdaptMethod adapt_method_from_string(std::string_view s);

struct AdaptConfig {
  AdaptMethod method = AdaptMethod::ZeroTarget;
  double lr = 1e-5;
  std::size_t epochs = 1;
  std::size_t x = 1;
  std::size_t y = 15;
  std::size_t z = 1;
  double exemplar_fraction = 1.0;
  std::uint64_t seed = 0;
  /// Frame stride between zero-target windows inside a segment; 0 = one window width.
  std::size_t window_stride = 0;

  /// Defaults for the method (exemplar fraction 1.0 zero-target, 0.2 synthetic).
  static AdaptConfig defaults(AdaptMethod method);
  void validate() const;
};
void to_json(nlohmann::json& j, const AdaptConfig& c);
/// Missing fields take the method's defaults.
void from_json(const nlohmann::json& j, AdaptConfig& c);

/// Sources and song ids of one adaptation batch, in batch order.
struct BatchRecord {
  std::vector<ExampleSource> sources;
  std::vector<std::string> song_ids;
  double loss = 0.0;
};

struct AdaptResult {
  MaskNet net;
  AdamState adam;
  std::vector<BatchRecord> batches;
  std::vector<std::string> warnings;
  std::vector<std::string> synthetic_pairs;  // "hitl_song<-train_song" per synthetic track
};

/// Mixture windows from inside each annotated segment with all-zero targets.
/// Segments shorter than a window are tiled cyclically along time to fill one.
std::vector<TrainingExample> build_zero_target_examples(const std::vector<SongSpectra>& hitl_songs,
                                                        const std::vector<AnnotationSet>& annotations,
                                                        WindowShape shape, std::size_t stride = 0);

/// Replay finetuning: each batch holds x zero-target examples and y random exemplars.
AdaptResult adapt_zero_target(const MaskNet& net, const std::vector<TrainingExample>& hitl_examples,
                              const ExemplarStore& store, const AdaptConfig& config, const ProgressFn& progress = {});

struct SyntheticTrack {
  AudioClip mixture;
  AudioClip oracle_vocals;
  AudioClip accompaniment;
  std::string hitl_song_id;
  std::string train_song_id;
  std::vector<Segment> segments;
  std::size_t loop_length = 0;  // samples in one period of the tiled accompaniment
};

inline constexpr double kLoopCrossfadeSeconds = 0.010;

/// Joins the segment audio into a seamless loop (linear crossfades at every seam,
/// the wrap included), tiles it to the vocal length and adds the vocals on top.
SyntheticTrack build_synthetic_track(const AudioClip& hitl_mixture, const std::vector<Segment>& segments,
                                     const AudioClip& train_vocals, std::string hitl_song_id = {},
                                     std::string train_song_id = {});

/// One synthetic track per annotated HITL song (train song picked at random),
/// z batches of x track windows plus y exemplars each.
AdaptResult adapt_synthetic(const MaskNet& net, const SeparationSetup& setup, const std::vector<SongAudio>& hitl_songs,
                            const std::vector<AnnotationSet>& annotations, const std::vector<SongAudio>& train_songs,
                            const ExemplarStore& store, const AdaptConfig& config, const ProgressFn& progress = {});

/// Dispatches on config.method.
AdaptResult adapt(const MaskNet& net, const SeparationSetup& setup, const std::vector<SongAudio>& hitl_songs,
                  const std::vector<AnnotationSet>& annotations, const std::vector<SongAudio>& train_songs,
                  const ExemplarStore& store, const AdaptConfig& config, const ProgressFn& progress = {});

/// Separates every song and runs the simulated annotator on it.
std::vector<AnnotationSet> annotate_songs(const MaskNet& net, const SeparationSetup& setup,
                                          const std::vector<SongAudio>& songs, const AnnotatorParams& params = {});

struct IterationResult {
  MaskNet net;
  SplitReport test_report;
  std::vector<AnnotationSet> annotations;
  std::vector<BatchRecord> batches;
};

/// Per HITL batch: annotate with the current model, adapt, evaluate on the test songs.
std::vector<IterationResult> iterate_hitl(const MaskNet& net, const SeparationSetup& setup,
                                          const std::vector<std::vector<SongAudio>>& hitl_batches,
                                          const std::vector<SongAudio>& train_songs, const ExemplarStore& store,
                                          const std::vector<SongAudio>& test_songs, const AdaptConfig& config,
                                          const AnnotatorParams& annotator = {});

}  // namespace hitlsep
