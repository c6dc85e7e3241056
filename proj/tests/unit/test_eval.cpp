#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "hitlsep/error.hpp"
#include "hitlsep/eval.hpp"
#include "sdr_oracle.hpp"
#include "test_util.hpp"

using namespace hitlsep;

namespace {

AudioClip clip(std::vector<double> v, int sr = 1000) { return AudioClip(std::move(v), sr); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

TEST_CASE("framewise_sdr: algebraic cases hold exactly") {
  std::mt19937 rng(1);
  const auto ref = test::noise(rng, 5000, 0.5);
  const auto a = framewise_sdr(clip(ref), clip(ref));
  REQUIRE(a.frames.size() == 5);
  for (const auto& f : a.frames) CHECK(*f.sdr_db == kSdrCapDb);
  for (const auto& f : framewise_sdr(clip(ref), clip(std::vector<double>(5000, 0.0))).frames) CHECK(*f.sdr_db == 0.0);
  std::vector<double> twice(ref);
  for (auto& v : twice) v *= 2.0;
  for (const auto& f : framewise_sdr(clip(ref), clip(twice)).frames) CHECK(*f.sdr_db == 0.0);
}

TEST_CASE("framewise_sdr matches the naive loop exactly") {
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> len(1500, 9000);
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = static_cast<std::size_t>(len(rng));
    auto ref = test::noise(rng, n, 0.4);
    auto est = test::noise(rng, n, 0.4);
    for (std::size_t i = 0; i < n; ++i) est[i] = 0.7 * ref[i] + 0.3 * est[i];
    std::fill(ref.begin(), ref.begin() + std::min<std::size_t>(n, 1000), 0.0);  // one silent frame
    const auto got = framewise_sdr(clip(ref), clip(est));
    const auto want = test::naive_sdr(ref, est, 1000);
    REQUIRE(got.frames.size() == want.size());
    for (std::size_t k = 0; k < want.size(); ++k) {
      CHECK(got.frames[k].sdr_db.has_value() == want[k].has_value());
      if (want[k]) CHECK(*got.frames[k].sdr_db == *want[k]);
    }
    CHECK(got.excluded_frames == 1);
  }
}

TEST_CASE("framewise_sdr: framing, exclusion and errors") {
  std::mt19937 rng(3);
  CHECK(framewise_sdr(clip(test::noise(rng, 2500, 1)), clip(std::vector<double>(2500, 0.1))).frames.size() == 3);
  CHECK(framewise_sdr(clip(test::noise(rng, 2499, 1)), clip(std::vector<double>(2499, 0.1))).frames.size() == 2);
  // Exclusion depends on the reference only.
  std::vector<double> ref(3000, 0.0);
  for (std::size_t i = 1000; i < 2000; ++i) ref[i] = 0.5;
  for (double level : {0.0, 0.3, 5.0}) {
    const auto r = framewise_sdr(clip(ref), clip(std::vector<double>(3000, level)));
    CHECK(r.excluded_frames == 2);
    CHECK_FALSE(r.frames[0].sdr_db.has_value());
    CHECK(r.frames[1].sdr_db.has_value());
    CHECK(r.mean_sdr == r.frames[1].sdr_db);
  }
  const auto silent = framewise_sdr(clip(std::vector<double>(2000, 0.0)), clip(std::vector<double>(2000, 1.0)));
  CHECK_FALSE(silent.mean_sdr.has_value());
  CHECK_THROWS_AS(framewise_sdr(clip(ref), clip(std::vector<double>(10, 0.0))), ValidationError);
  CHECK_THROWS_AS(framewise_sdr(clip({}), clip({})), ValidationError);
}

TEST_CASE("aggregate examples") {
  const std::vector<double> v{1, 2, 3, 100};
  CHECK(aggregate(v, Stat::Mean) == 26.5);
  CHECK(aggregate(v, Stat::Median) == 2.5);
  const std::vector<double> one{5};
  CHECK(aggregate(one, Stat::Mean) == 5);
  CHECK(aggregate(one, Stat::Median) == 5);
  CHECK_THROWS_AS(aggregate(std::vector<double>{}, Stat::Mean), ValidationError);
}

TEST_CASE("SDR properties: common scaling invariance and monotone residual reduction") {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ref = test::noise(rng, 3000, 0.5);
    const auto est = test::noise(rng, 3000, 0.5);
    const auto base = framewise_sdr(clip(ref), clip(est));
    for (double c : {-3.0, 0.125, 7.3}) {
      std::vector<double> r2(ref), e2(est);
      for (std::size_t i = 0; i < r2.size(); ++i) {
        r2[i] *= c;
        e2[i] *= c;
      }
      const auto scaled = framewise_sdr(clip(r2), clip(e2));
      for (std::size_t k = 0; k < base.frames.size(); ++k) {
        CHECK(*scaled.frames[k].sdr_db == doctest::Approx(*base.frames[k].sdr_db).epsilon(1e-12));
      }
    }
    std::vector<double> prev_sdr(3, -1e9);
    for (double alpha : {0.0, 0.2, 0.5, 0.9, 1.0}) {
      std::vector<double> mix(est);
      for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = (1 - alpha) * est[i] + alpha * ref[i];
      const auto r = framewise_sdr(clip(ref), clip(mix));
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(*r.frames[k].sdr_db >= prev_sdr[k]);
        prev_sdr[k] = *r.frames[k].sdr_db;
      }
    }
  }
}

TEST_CASE("evaluate: baselines on procedural songs") {
  const SeparationSetup setup = SeparationSetup::desk();
  CHECK(evaluate_songs({}, baseline_estimator(Baseline::UnitMask, setup)).songs.empty());
  std::vector<SongAudio> songs;
  for (int i = 0; i < 3; ++i) {
    const GeneratedSong g = generate_song("test-" + std::to_string(i), i == 2 ? "B" : "A", 20.0, 8000, 40 + i);
    songs.push_back({g.song_id, g.mixture, g.vocals, g.accompaniment});
  }
  const auto oracle = evaluate_songs(songs, baseline_estimator(Baseline::OracleVocals, setup));
  for (const auto& s : oracle.songs) CHECK(*s.mean_sdr == kSdrCapDb);
  const auto unit = evaluate_songs(songs, baseline_estimator(Baseline::UnitMask, setup));
  const auto irm = evaluate_songs(songs, baseline_estimator(Baseline::IdealRatioMask, setup));
  for (std::size_t i = 0; i < songs.size(); ++i) {
    INFO(songs[i].song_id << " unit " << *unit.songs[i].mean_sdr << " irm " << *irm.songs[i].mean_sdr);
    CHECK(*irm.songs[i].mean_sdr > *unit.songs[i].mean_sdr);
  }
  EvalOptions two;
  two.threads = 2;
  const auto parallel = evaluate_songs(songs, baseline_estimator(Baseline::UnitMask, setup), two);
  CHECK(parallel.mean_of_means == unit.mean_of_means);
  CHECK(parallel.songs[1].song_id == "test-1");
}

TEST_CASE("emit_csv: row counts, excluded frames, parse-and-recompute closure") {
  test::TempDir dir;
  std::mt19937 rng(5);
  std::vector<SdrReport> reports;
  for (const char* id : {"b-song", "a-song"}) {
    auto ref = test::noise(rng, 30000, 0.5);
    std::fill(ref.begin(), ref.begin() + 2000, 0.0);
    const auto est = test::noise(rng, 30000, 0.5);
    reports.push_back(framewise_sdr(clip(ref), clip(est), 1.0, id));
  }
  const SplitReport rep = summarize(reports);
  CHECK(rep.songs[0].song_id == "a-song");
  emit_csv(rep, dir.path / "frames.csv", dir.path / "summary.csv");

  std::ifstream in(dir.path / "frames.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "song_id,frame_index,t_start_s,sdr_db,included");
  std::size_t rows = 0;
  std::map<std::string, std::vector<double>> per_song;
  while (std::getline(in, line)) {
    ++rows;
    const auto cells = split_csv(line);
    REQUIRE(cells.size() == 5);
    if (cells[4] == "false") {
      CHECK(cells[3].empty());
    } else {
      per_song[cells[0]].push_back(std::stod(cells[3]));
    }
  }
  CHECK(rows == 60);

  std::ifstream sum(dir.path / "summary.csv");
  std::getline(sum, line);
  CHECK(line == "song_id,mean_sdr,median_sdr");
  std::vector<double> means;
  while (std::getline(sum, line)) {
    const auto cells = split_csv(line);
    const auto& frames = per_song.at(cells[0]);
    double s = 0;
    for (double v : frames) s += v;
    CHECK(std::stod(cells[1]) == doctest::Approx(s / static_cast<double>(frames.size())).epsilon(1e-12));
    CHECK(std::stod(cells[2]) == doctest::Approx(aggregate(frames, Stat::Median)).epsilon(1e-12));
    means.push_back(std::stod(cells[1]));
  }
  CHECK((means[0] + means[1]) / 2 == doctest::Approx(*rep.mean_of_means).epsilon(1e-12));

  const SplitReport back = report_from_json(report_to_json(rep));
  CHECK(back.mean_of_means == rep.mean_of_means);
  CHECK(back.songs[1].frames.size() == 30);
  CHECK(back.songs[1].frames[1].sdr_db == rep.songs[1].frames[1].sdr_db);
  CHECK_THROWS_AS(emit_csv(SplitReport{}, dir.path / "x.csv", dir.path / "y.csv"), ValidationError);
}
