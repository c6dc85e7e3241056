#include <cmath>

#include "hitlsep/adapt.hpp"
#include "hitlsep/error.hpp"
#include "hitlsep/rng.hpp"

namespace hitlsep {

double train_step(MaskNet& net, AdamState& adam, std::span<const TrainingExample> batch, std::uint64_t dropout_seed) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  auto r = l1_loss<float>(net, batch, dropout_seed);
  if (!std::isfinite(r.loss)) throw NumericError("non-finite loss " + std::to_string(r.loss));
  std::vector<std::vector<float>*> params;
  params.reserve(net.params.size());
  for (auto& p : net.params) params.push_back(&p.values);
  adam_step(params, r.grads, adam);
  update_running_stats(net, r.bn_stats);
  return r.loss;
}

namespace {

AdamState fresh_adam(const MaskNet& net, double lr) {
  std::vector<std::size_t> sizes;
  for (const auto& p : net.params) sizes.push_back(p.size());
  return AdamState::for_sizes(sizes, lr);
}

}  // namespace

TrainResult train_base(const std::vector<SongSpectra>& train, const SeparationSetup& setup, const TrainConfig& config,
                       const ProgressFn& progress) {
  setup.validate();
  if (config.batch_size == 0 || config.crops_per_song == 0) {
    throw ValidationError("train_base: batch_size and crops_per_song must be positive");
  }
  if (!(config.lr > 0)) throw ValidationError("train_base: lr must be positive");
  for (const auto& s : train) {
    if (!s.vocals) throw ValidationError("train_base: song '" + s.song_id + "' has no vocal stem");
  }
  if (config.epochs > 0 && train.empty()) throw ValidationError("train_base: train split is empty");

  TrainResult result;
  result.checkpoint.setup = setup;
  NetConfig nc = setup.net;
  nc.seed = config.seed;
  result.checkpoint.setup.net = nc;
  result.checkpoint.net = init(nc);
  result.checkpoint.net.mode = NetMode::Train;
  result.checkpoint.adam = fresh_adam(result.checkpoint.net, config.lr);
  const WindowShape shape = setup.net.input;
  const auto tw = static_cast<std::size_t>(shape.time);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(config.seed, 0x7000 + epoch);
    std::vector<TrainingExample> examples;
    for (const auto& song : train) {
      const auto starts = random_starts(song.mix.n_frames, tw, config.crops_per_song,
                                        mix_seed(epoch_seed, hash_tag(song.song_id)));
      auto ex = paired_examples(song, shape, starts, ExampleSource::OriginalTrain);
      examples.insert(examples.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
    }
    Rng rng(epoch_seed);
    rng.shuffle(examples);
    double sum = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < examples.size(); b += config.batch_size) {
      const std::size_t e = std::min(examples.size(), b + config.batch_size);
      double loss;
      try {
        loss = train_step(result.checkpoint.net, result.checkpoint.adam,
                          std::span<const TrainingExample>(examples.data() + b, e - b), mix_seed(config.seed, step));
      } catch (const NumericError& err) {
        throw NumericError("train_base: epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                           err.what());
      }
      result.step_loss.push_back(loss);
      sum += loss;
      ++batches;
      ++step;
    }
    result.epoch_loss.push_back(sum / static_cast<double>(batches));
    if (progress) progress(static_cast<double>(epoch + 1) / static_cast<double>(config.epochs));
  }
  result.checkpoint.net.mode = NetMode::Eval;
  return result;
}

TrainResult train_base(const DatasetSplit& train, const SeparationSetup& setup, const TrainConfig& config,
                       const ProgressFn& progress) {
  std::vector<SongSpectra> songs;
  for (const auto& e : train.entries) songs.push_back(analyse_song(load_song(e, setup.sample_rate), setup));
  return train_base(songs, setup, config, progress);
}

}  // namespace hitlsep
