// Command-line driver for the HITL separation pipeline.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "hitlsep/adapt.hpp"
#include "hitlsep/error.hpp"
#include "hitlsep/separate.hpp"
#include "hitlsep/service.hpp"

using namespace hitlsep;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool g_quiet = false;

void note(const std::string& msg) {
  if (!g_quiet) std::cerr << msg << '\n';
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

// "desk", "canonical" or a JSON file with optional "setup" and "train" sections.
struct RunConfig {
  SeparationSetup setup = SeparationSetup::desk();
  TrainConfig train;
};

RunConfig load_run_config(const std::string& spec) {
  RunConfig rc;
  json j;
  if (spec == "desk" || spec == "canonical") {
    j = {{"setup", {{"preset", spec}}}};
  } else {
    j = read_json(spec);
  }
  rc.setup = (j.contains("setup") ? j["setup"] : j).get<SeparationSetup>();
  rc.setup.validate();
  if (j.contains("train")) {
    const auto& t = j["train"];
    rc.train.epochs = t.value("epochs", rc.train.epochs);
    rc.train.crops_per_song = t.value("crops_per_song", rc.train.crops_per_song);
    rc.train.batch_size = t.value("batch_size", rc.train.batch_size);
    rc.train.lr = t.value("lr", rc.train.lr);
  }
  return rc;
}

fs::path summary_path_for(const fs::path& frames) {
  return frames.parent_path() / (frames.stem().string() + "_summary.csv");
}

std::vector<AnnotationSet> load_annotation_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("annotation directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<AnnotationSet> out;
  for (const auto& f : files) out.push_back(load_annotations(f));
  return out;
}

void print_summary(const std::string& label, const SplitReport& r) {
  if (g_quiet) return;
  auto fmt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("n/a"); };
  std::cout << label << ": " << r.songs.size() << " songs, mean of means " << fmt(r.mean_of_means)
            << " dB, median of medians " << fmt(r.median_of_medians) << " dB\n";
}

std::vector<SongAudio> annotated_audio(const Dataset& ds, const std::vector<AnnotationSet>& sets, int rate) {
  std::vector<SongAudio> out;
  for (const auto& s : sets) {
    const SongEntry* e = ds.find(s.song_id);
    if (!e) throw ValidationError("annotations reference unknown song '" + s.song_id + "'");
    if (ds.test.find(s.song_id)) throw ValidationError("song '" + s.song_id + "' is a test song; it cannot be used for adaptation");
    out.push_back(load_song(*e, rate));
  }
  return out;
}

std::vector<SongSpectra> analyse_all(const std::vector<SongAudio>& songs, const SeparationSetup& setup) {
  std::vector<SongSpectra> out;
  for (const auto& s : songs) out.push_back(analyse_song(s, setup));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-in-the-loop singing voice separation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("-q,--quiet", g_quiet, "Only print errors");

  // synth-data
  ProceduralConfig pc;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-data", "Generate the procedural dataset");
  synth->add_option("--seed", pc.seed, "Generator seed");
  synth->add_option("--out", synth_out, "Dataset root")->required();
  synth->add_option("--train", pc.n_train, "Train songs");
  synth->add_option("--hitl", pc.n_hitl, "HITL songs");
  synth->add_option("--test", pc.n_test, "Test songs");
  synth->add_option("--len", pc.song_len_s, "Song length in seconds");
  synth->add_option("--rate", pc.sample_rate, "Sample rate");
  synth->add_option("--train-genre", pc.train_genre, "Genre of train songs (A or B)");
  synth->add_option("--hitl-genre", pc.hitl_genre, "Genre of HITL songs (A or B)");
  synth->add_option("--test-genre", pc.test_genre, "Genre of test songs (A or B)");

  // train
  std::string train_data, train_config = "desk", train_out, train_genre, train_log;
  std::optional<std::size_t> train_epochs, train_crops;
  std::optional<double> train_lr;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Train the base model on the train split");
  train->add_option("--data", train_data, "Dataset root")->required();
  train->add_option("--config", train_config, "desk, canonical or a config JSON file");
  train->add_option("--epochs", train_epochs, "Epochs (overrides the config)");
  train->add_option("--crops", train_crops, "Random windows per song per epoch (overrides the config)");
  train->add_option("--lr", train_lr, "Learning rate (overrides the config)");
  train->add_option("--seed", train_seed, "Seed");
  train->add_option("--genre", train_genre, "Only train on songs of this genre");
  train->add_option("--loss-csv", train_log, "Write per-epoch loss here");
  train->add_option("--out", train_out, "Checkpoint path")->required();

  // separate
  std::string sep_model, sep_song, sep_data, sep_out;
  auto* sep = app.add_subcommand("separate", "Estimate the vocals of one song");
  sep->add_option("--model", sep_model, "Checkpoint")->required();
  sep->add_option("--song", sep_song, "Mixture WAV, or a song id when --data is given")->required();
  sep->add_option("--data", sep_data, "Dataset root for song ids");
  sep->add_option("--out", sep_out, "Output WAV")->required();

  // annotate-sim
  std::string ann_model, ann_data, ann_split = "hitl", ann_out;
  AnnotatorParams ann_params;
  auto* ann = app.add_subcommand("annotate-sim", "Simulated annotator over a split");
  ann->add_option("--model", ann_model, "Checkpoint")->required();
  ann->add_option("--data", ann_data, "Dataset root")->required();
  ann->add_option("--split", ann_split, "Split to annotate");
  ann->add_option("--out", ann_out, "Directory for <song_id>.json")->required();
  ann->add_option("--silence-db", ann_params.silence_db, "Oracle silence threshold (dBFS)");
  ann->add_option("--activity-db", ann_params.activity_db, "Prediction activity threshold (dBFS)");
  ann->add_option("--frame", ann_params.frame_s, "Analysis frame in seconds");

  // adapt
  std::string ad_model, ad_method = "zero_target", ad_ann, ad_data, ad_out, ad_batches;
  std::optional<double> ad_fraction, ad_lr;
  std::optional<std::size_t> ad_x, ad_y, ad_z, ad_epochs, ad_stride;
  std::uint64_t ad_seed = 0;
  auto* ad = app.add_subcommand("adapt", "Adapt a model to annotated HITL songs");
  ad->add_option("--model", ad_model, "Base checkpoint")->required();
  ad->add_option("--method", ad_method, "zero_target or synthetic")->check(CLI::IsMember({"zero_target", "synthetic"}));
  ad->add_option("--annotations", ad_ann, "Directory of annotation JSON files")->required();
  ad->add_option("--data", ad_data, "Dataset root")->required();
  ad->add_option("--exemplar-fraction", ad_fraction, "Fraction of train songs kept as exemplars");
  ad->add_option("--x", ad_x, "New examples per batch");
  ad->add_option("--y", ad_y, "Exemplars per batch");
  ad->add_option("--z", ad_z, "Batches per synthetic track");
  ad->add_option("--epochs", ad_epochs, "Epochs");
  ad->add_option("--lr", ad_lr, "Learning rate");
  ad->add_option("--window-stride", ad_stride, "Frame stride of zero-target windows (0 = window width)");
  ad->add_option("--seed", ad_seed, "Seed");
  ad->add_option("--batches-csv", ad_batches, "Write the batch composition log here");
  ad->add_option("--out", ad_out, "Adapted checkpoint path")->required();

  // eval
  std::string ev_model, ev_data, ev_split = "test", ev_out, ev_summary, ev_json, ev_baseline;
  std::string ev_config = "desk";
  double ev_frame = 1.0;
  auto* ev = app.add_subcommand("eval", "Framewise SDR over a split");
  ev->add_option("--model", ev_model, "Checkpoint");
  ev->add_option("--baseline", ev_baseline, "unit, irm or oracle instead of a model")
      ->check(CLI::IsMember({"unit", "irm", "oracle"}));
  ev->add_option("--data", ev_data, "Dataset root")->required();
  ev->add_option("--split", ev_split, "Split to evaluate");
  ev->add_option("--out", ev_out, "Per-frame CSV")->required();
  ev->add_option("--summary", ev_summary, "Per-song CSV (default <out>_summary.csv)");
  ev->add_option("--json", ev_json, "Also write the report as JSON");
  ev->add_option("--frame", ev_frame, "SDR frame length in seconds");
  ev->add_option("--config", ev_config, "Setup for --baseline (desk, canonical or a config file)");

  // hitl-iterate
  std::string it_model, it_data, it_method = "synthetic", it_out;
  std::size_t it_batches = 3;
  std::optional<double> it_fraction;
  std::uint64_t it_seed = 0;
  std::size_t it_stride = 0;
  auto* it = app.add_subcommand("hitl-iterate", "Annotate, adapt and evaluate over disjoint HITL batches");
  it->add_option("--model", it_model, "Base checkpoint")->required();
  it->add_option("--data", it_data, "Dataset root")->required();
  it->add_option("--batches", it_batches, "Number of HITL batches")->check(CLI::PositiveNumber);
  it->add_option("--method", it_method, "zero_target or synthetic")->check(CLI::IsMember({"zero_target", "synthetic"}));
  it->add_option("--exemplar-fraction", it_fraction, "Fraction of train songs kept as exemplars");
  it->add_option("--window-stride", it_stride, "Frame stride of zero-target windows (0 = window width)");
  it->add_option("--seed", it_seed, "Seed");
  it->add_option("--out", it_out, "Output directory")->required();

  // serve
  std::string sv_ws, sv_listen = "127.0.0.1:8080", sv_data, sv_model, sv_model_cfg, sv_static;
  unsigned sv_workers = 2;
  auto* sv = app.add_subcommand("serve", "Run the HTTP service");
  sv->add_option("--workspace", sv_ws, "Workspace directory")->required()->envname("HITLSEP_WORKSPACE");
  sv->add_option("--listen", sv_listen, "host:port")->envname("HITLSEP_LISTEN");
  sv->add_option("--data", sv_data, "Dataset root (first start)")->envname("HITLSEP_DATA");
  sv->add_option("--model", sv_model, "Initial checkpoint (first start)")->envname("HITLSEP_MODEL");
  sv->add_option("--model-config", sv_model_cfg, "Setup JSON for a fresh model (first start)")
      ->envname("HITLSEP_MODEL_CONFIG");
  sv->add_option("--static", sv_static, "UI build directory to serve at /");
  sv->add_option("--separate-workers", sv_workers, "Parallel separation jobs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      generate_procedural_dataset(pc, synth_out);
      note("wrote " + std::to_string(pc.n_train + pc.n_hitl + pc.n_test) + " songs to " + synth_out);
    } else if (*train) {
      RunConfig rc = load_run_config(train_config);
      TrainConfig tc = rc.train;
      if (train_epochs) tc.epochs = *train_epochs;
      if (train_crops) tc.crops_per_song = *train_crops;
      if (train_lr) tc.lr = *train_lr;
      tc.seed = train_seed;
      const Dataset ds = load_dataset(train_data);
      const DatasetSplit split = ds.train.filtered(train_genre);
      if (split.entries.empty()) throw ValidationError("no songs in split train");
      const auto songs = analyse_all(load_split_audio(split, rc.setup.sample_rate), rc.setup);
      const TrainResult r = train_base(songs, rc.setup, tc, [&](double f) {
        if (!g_quiet) std::fprintf(stderr, "\rtraining %5.1f%%", 100.0 * f);
      });
      if (!g_quiet) std::fprintf(stderr, "\n");
      if (train_out.empty()) throw ValidationError("--out is empty");
      if (fs::path(train_out).has_parent_path()) fs::create_directories(fs::path(train_out).parent_path());
      save_checkpoint(r.checkpoint, train_out);
      std::string log = "epoch,loss\n";
      for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
        char line[64];
        std::snprintf(line, sizeof line, "%zu,%.17g\n", e, r.epoch_loss[e]);
        log += line;
        if (!g_quiet) std::printf("epoch %zu loss %.6f\n", e, r.epoch_loss[e]);
      }
      if (!train_log.empty()) write_text(train_log, log);
    } else if (*sep) {
      const Checkpoint c = load_checkpoint(sep_model);
      AudioClip mix;
      if (fs::is_regular_file(sep_song)) {
        mix = mixdown(load_wav(sep_song));
        if (mix.sample_rate != c.setup.sample_rate) mix = resample(mix, c.setup.sample_rate);
      } else if (!sep_data.empty()) {
        const Dataset ds = load_dataset(sep_data);
        const SongEntry* e = ds.find(sep_song);
        if (!e) throw ValidationError("unknown song '" + sep_song + "'");
        mix = load_song(*e, c.setup.sample_rate).mixture;
      } else {
        throw IoError("no such file: " + sep_song);
      }
      if (fs::path(sep_out).has_parent_path()) fs::create_directories(fs::path(sep_out).parent_path());
      save_wav(separate(c.net, c.setup, mix), sep_out);
      note("wrote " + sep_out);
    } else if (*ann) {
      const Checkpoint c = load_checkpoint(ann_model);
      const Dataset ds = load_dataset(ann_data);
      const auto& split = ds.split(split_from_string(ann_split));
      if (split.entries.empty()) throw ValidationError("no songs in split " + ann_split);
      const auto sets = annotate_songs(c.net, c.setup, load_split_audio(split, c.setup.sample_rate), ann_params);
      fs::create_directories(ann_out);
      for (const auto& s : sets) {
        save_annotations(s, fs::path(ann_out) / (s.song_id + ".json"));
        double secs = 0;
        for (const auto& seg : s.segments) secs += seg.duration();
        if (!g_quiet) std::printf("%s: %zu segments, %.2f s\n", s.song_id.c_str(), s.segments.size(), secs);
      }
    } else if (*ad) {
      AdaptConfig cfg = AdaptConfig::defaults(adapt_method_from_string(ad_method));
      if (ad_fraction) cfg.exemplar_fraction = *ad_fraction;
      if (ad_x) cfg.x = *ad_x;
      if (ad_y) cfg.y = *ad_y;
      if (ad_z) cfg.z = *ad_z;
      if (ad_epochs) cfg.epochs = *ad_epochs;
      if (ad_lr) cfg.lr = *ad_lr;
      if (ad_stride) cfg.window_stride = *ad_stride;
      cfg.seed = ad_seed;
      cfg.validate();
      if (!g_quiet) std::printf("%s\n", json(cfg).dump().c_str());

      const Checkpoint c = load_checkpoint(ad_model);
      const Dataset ds = load_dataset(ad_data);
      const auto sets = load_annotation_dir(ad_ann);
      const auto hitl = annotated_audio(ds, sets, c.setup.sample_rate);
      if (ds.train.entries.empty()) throw ValidationError("no songs in split train");
      const auto train_songs = load_split_audio(ds.train, c.setup.sample_rate);
      const auto store = build_exemplar_store(analyse_all(train_songs, c.setup), c.setup.net.input,
                                              cfg.exemplar_fraction, 8, cfg.seed);
      AdaptResult r = adapt(c.net, c.setup, hitl, sets, train_songs, store, cfg);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      if (!ad_batches.empty()) {
        std::string log = "batch,position,source,song_id,loss\n";
        for (std::size_t b = 0; b < r.batches.size(); ++b) {
          const auto& rec = r.batches[b];
          for (std::size_t i = 0; i < rec.sources.size(); ++i) {
            char loss[40];
            std::snprintf(loss, sizeof loss, "%.17g", rec.loss);
            log += std::to_string(b) + "," + std::to_string(i) + "," + std::string(to_string(rec.sources[i])) + "," +
                   rec.song_ids[i] + "," + loss + "\n";
          }
        }
        write_text(ad_batches, log);
      }
      if (fs::path(ad_out).has_parent_path()) fs::create_directories(fs::path(ad_out).parent_path());
      save_checkpoint(Checkpoint{c.setup, std::move(r.net), std::move(r.adam)}, ad_out);
      note(std::to_string(r.batches.size()) + " batches; wrote " + ad_out);
    } else if (*ev) {
      if (ev_model.empty() == ev_baseline.empty()) throw CLI::ValidationError("eval", "give exactly one of --model or --baseline");
      const Dataset ds = load_dataset(ev_data);
      const auto& split = ds.split(split_from_string(ev_split));
      if (split.entries.empty()) throw ValidationError("no songs in split " + ev_split);
      EvalOptions opts;
      opts.frame_s = ev_frame;
      SplitReport report;
      if (!ev_model.empty()) {
        const Checkpoint c = load_checkpoint(ev_model);
        report = evaluate_model(c.net, c.setup, split, opts);
      } else {
        const auto setup = load_run_config(ev_config).setup;
        const Baseline b = ev_baseline == "unit" ? Baseline::UnitMask
                           : ev_baseline == "irm" ? Baseline::IdealRatioMask
                                                  : Baseline::OracleVocals;
        report = evaluate_songs(load_split_audio(split, setup.sample_rate), baseline_estimator(b, setup), opts);
      }
      const fs::path frames = ev_out;
      if (frames.has_parent_path()) fs::create_directories(frames.parent_path());
      emit_csv(report, frames, ev_summary.empty() ? summary_path_for(frames) : fs::path(ev_summary));
      if (!ev_json.empty()) write_text(ev_json, report_to_json(report).dump(2) + "\n");
      print_summary(ev_split, report);
    } else if (*it) {
      const Checkpoint c = load_checkpoint(it_model);
      const Dataset ds = load_dataset(it_data);
      if (ds.hitl.entries.size() < it_batches)
        throw ValidationError("split hitl has " + std::to_string(ds.hitl.entries.size()) + " songs, fewer than " +
                              std::to_string(it_batches) + " batches");
      if (ds.test.entries.empty()) throw ValidationError("no songs in split test");
      AdaptConfig cfg = AdaptConfig::defaults(adapt_method_from_string(it_method));
      if (it_fraction) cfg.exemplar_fraction = *it_fraction;
      cfg.seed = it_seed;
      cfg.window_stride = it_stride;
      cfg.validate();
      if (!g_quiet) std::printf("%s\n", json(cfg).dump().c_str());
      const auto hitl = load_split_audio(ds.hitl, c.setup.sample_rate);
      std::vector<std::vector<SongAudio>> stream(it_batches);
      const std::size_t per = hitl.size() / it_batches;
      for (std::size_t b = 0; b < it_batches; ++b)
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) stream[b].push_back(hitl[i]);
      const auto train_songs = load_split_audio(ds.train, c.setup.sample_rate);
      const auto test_songs = load_split_audio(ds.test, c.setup.sample_rate);
      const auto store = build_exemplar_store(analyse_all(train_songs, c.setup), c.setup.net.input,
                                              cfg.exemplar_fraction, 8, cfg.seed);
      const fs::path out = it_out;
      fs::create_directories(out);
      const SplitReport base = evaluate_model(c.net, c.setup, test_songs);
      emit_csv(base, out / "iter0_frames.csv", out / "iter0_summary.csv");
      const auto traj = iterate_hitl(c.net, c.setup, stream, train_songs, store, test_songs, cfg);
      auto num = [](const std::optional<double>& v) {
        char b[40];
        std::snprintf(b, sizeof b, "%.17g", v.value_or(std::nan("")));
        return std::string(b);
      };
      std::string csv = "iteration,mean_of_means,median_of_medians,annotated_s\n0," + num(base.mean_of_means) + "," +
                        num(base.median_of_medians) + ",0\n";
      print_summary("iteration 0", base);
      for (std::size_t i = 0; i < traj.size(); ++i) {
        const std::string tag = "iter" + std::to_string(i + 1);
        save_checkpoint(Checkpoint{c.setup, traj[i].net, AdamState{}}, out / (tag + ".ckpt"));
        emit_csv(traj[i].test_report, out / (tag + "_frames.csv"), out / (tag + "_summary.csv"));
        fs::create_directories(out / (tag + "_annotations"));
        double secs = 0;
        for (const auto& s : traj[i].annotations) {
          save_annotations(s, out / (tag + "_annotations") / (s.song_id + ".json"));
          for (const auto& seg : s.segments) secs += seg.duration();
        }
        char s[40];
        std::snprintf(s, sizeof s, "%.17g", secs);
        csv += std::to_string(i + 1) + "," + num(traj[i].test_report.mean_of_means) + "," +
               num(traj[i].test_report.median_of_medians) + "," + s + "\n";
        print_summary("iteration " + std::to_string(i + 1), traj[i].test_report);
      }
      write_text(out / "trajectory.csv", csv);
    } else if (*sv) {
      ServiceConfig cfg;
      cfg.workspace = sv_ws;
      if (!sv_data.empty()) cfg.dataset_root = sv_data;
      if (!sv_model.empty()) cfg.initial_model = sv_model;
      if (!sv_model_cfg.empty()) cfg.model_config = sv_model_cfg;
      if (!sv_static.empty()) cfg.static_dir = sv_static;
      cfg.separate_workers = sv_workers;
      const auto [host, port] = parse_listen_address(sv_listen);
      static Service* running = nullptr;
      Service service(cfg);
      const int bound = service.bind(host, port);
      note("listening on " + host + ":" + std::to_string(bound));
      running = &service;
      std::signal(SIGINT, [](int) {
        if (running) std::thread([] { running->stop(); }).detach();
      });
      std::signal(SIGTERM, [](int) {
        if (running) std::thread([] { running->stop(); }).detach();
      });
      service.run();
      running = nullptr;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
