#include <cmath>
#include <random>

#include "doctest.h"
#include "hitlsep/annotate.hpp"
#include "hitlsep/data.hpp"
#include "hitlsep/error.hpp"
#include "test_util.hpp"

using namespace hitlsep;

namespace {

AnnotationSet raw_set(std::vector<std::pair<double, double>> segs) {
  AnnotationSet s;
  s.song_id = "song";
  for (auto [a, b] : segs) s.segments.push_back({"song", a, b});
  return s;
}

std::vector<std::pair<double, double>> spans(const AnnotationSet& s) {
  std::vector<std::pair<double, double>> out;
  for (const auto& seg : s.segments) out.emplace_back(seg.start_s, seg.end_s);
  return out;
}

/// Interval merge on an integer grid: cover cells, bridge gaps shorter than
/// `gap` cells, keep runs of at least `min_len` cells.
std::vector<std::pair<long, long>> grid_oracle(const std::vector<std::pair<long, long>>& segs, long total, long gap,
                                               long min_len) {
  std::vector<char> cov(static_cast<std::size_t>(total), 0);
  for (auto [a, b] : segs) {
    for (long c = std::max(0L, a); c < std::min(total, b); ++c) cov[static_cast<std::size_t>(c)] = 1;
  }
  std::vector<std::pair<long, long>> runs;
  for (long c = 0; c < total;) {
    if (!cov[static_cast<std::size_t>(c)]) {
      ++c;
      continue;
    }
    long e = c;
    while (e < total && cov[static_cast<std::size_t>(e)]) ++e;
    if (!runs.empty() && c - runs.back().second < gap) {
      runs.back().second = e;
    } else {
      runs.emplace_back(c, e);
    }
    c = e;
  }
  std::vector<std::pair<long, long>> out;
  for (auto r : runs) {
    if (r.second - r.first >= min_len) out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("normalize: six second rule and merging") {
  CHECK(normalize(raw_set({{10.0, 15.9}}), 60).segments.empty());
  CHECK(spans(normalize(raw_set({{10.0, 16.5}}), 60)) == std::vector<std::pair<double, double>>{{10.0, 16.5}});
  CHECK(spans(normalize(raw_set({{10.0, 14.0}, {13.5, 17.0}}), 60)) ==
        std::vector<std::pair<double, double>>{{10.0, 17.0}});
  CHECK(spans(normalize(raw_set({{10.0, 16.0}}), 60)).size() == 1);
  // Adjacent within the merge gap, each piece short on its own.
  CHECK(spans(normalize(raw_set({{20.0, 23.0}, {23.05, 26.5}}), 60)) ==
        std::vector<std::pair<double, double>>{{20.0, 26.5}});
  // Clamped to the song and sorted.
  CHECK(spans(normalize(raw_set({{50.0, 70.0}, {-3.0, 8.0}}), 60)) ==
        std::vector<std::pair<double, double>>{{0.0, 8.0}, {50.0, 60.0}});
}

TEST_CASE("normalize: every submitted segment is accounted for") {
  const auto r = normalize_with_diagnostics(raw_set({{1, 4}, {70, 80}, {10, 20}, {19, 22}}), 60);
  REQUIRE(r.diagnostics.size() == 4);
  CHECK(r.diagnostics[0].fate == SegmentFate::Dropped);
  CHECK(r.diagnostics[0].reason == "below 6 s minimum");
  CHECK(r.diagnostics[1].fate == SegmentFate::Rejected);
  CHECK(r.diagnostics[2].fate == SegmentFate::Kept);
  CHECK(r.diagnostics[3].fate == SegmentFate::Kept);
  CHECK(r.diagnostics[2].kept_index == r.diagnostics[3].kept_index);
  CHECK(r.set.segments.size() == 1);
}

TEST_CASE("normalize matches a grid interval-merge oracle and is idempotent") {
  std::mt19937 rng(12);
  constexpr double kCell = 0.007;  // grid step never lands exactly on the 0.1 s / 6 s thresholds
  const long total = static_cast<long>(std::floor(120.0 / kCell));
  for (int trial = 0; trial < 300; ++trial) {
    std::uniform_int_distribution<long> start(-200, total + 200), len(1, 2000);
    std::vector<std::pair<long, long>> cells;
    AnnotationSet raw;
    raw.song_id = "s";
    const int n = 1 + trial % 12;
    for (int i = 0; i < n; ++i) {
      const long a = start(rng);
      const long b = a + len(rng);
      cells.emplace_back(a, b);
      raw.segments.push_back({"s", static_cast<double>(a) * kCell, static_cast<double>(b) * kCell});
    }
    const double duration = static_cast<double>(total) * kCell;
    const auto got = normalize_with_diagnostics(raw, duration);
    const auto want = grid_oracle(cells, total, static_cast<long>(std::ceil(kMergeGapSeconds / kCell)),
                                  static_cast<long>(std::ceil(kMinSegmentSeconds / kCell)));
    REQUIRE(got.set.segments.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(got.set.segments[i].start_s == doctest::Approx(static_cast<double>(want[i].first) * kCell));
      CHECK(got.set.segments[i].end_s == doctest::Approx(static_cast<double>(want[i].second) * kCell));
      CHECK(got.set.segments[i].duration() >= kMinSegmentSeconds);
    }
    std::size_t kept = 0, dropped = 0, rejected = 0;
    for (const auto& d : got.diagnostics) {
      kept += d.fate == SegmentFate::Kept;
      dropped += d.fate == SegmentFate::Dropped;
      rejected += d.fate == SegmentFate::Rejected;
    }
    CHECK(kept + dropped + rejected == raw.segments.size());
    CHECK(normalize(got.set, duration) == got.set);
  }
}

TEST_CASE("annotation JSON: roundtrip, empty set, errors naming the segment") {
  test::TempDir dir;
  AnnotationSet s = normalize(raw_set({{1.25, 9.5}, {20.0, 31.125}}), 40);
  s.created_at = "2026-01-02T03:04:05Z";
  save_annotations(s, dir.path / "a.json");
  CHECK(load_annotations(dir.path / "a.json") == s);

  AnnotationSet empty;
  empty.song_id = "e";
  empty.annotator = Annotator::Simulated;
  save_annotations(empty, dir.path / "e.json");
  CHECK(load_annotations(dir.path / "e.json") == empty);

  {
    std::ofstream out(dir.path / "bad.json");
    out << R"({"song_id":"x","annotator":"human","segments":[{"start_s":1,"end_s":9},{"start_s":5,"end_s":3}]})";
  }
  try {
    load_annotations(dir.path / "bad.json");
    FAIL("expected a schema error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("segments[1]") != std::string::npos);
  }
  {
    std::ofstream out(dir.path / "broken.json");
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_annotations(dir.path / "broken.json"), ValidationError);
  CHECK_THROWS_AS(annotation_from_json(nlohmann::json{{"song_id", "x"}, {"annotator", "robot"}, {"segments", {}}}),
                  ValidationError);
  CHECK_THROWS_AS(annotation_from_json(nlohmann::json{{"annotator", "human"}, {"segments", {}}}), ValidationError);
}

TEST_CASE("simulated annotator: trivial cases") {
  const int sr = 8000;
  std::mt19937 rng(3);
  AudioClip loud(test::noise(rng, 30 * sr, 0.5), sr);
  AudioClip silent(std::vector<double>(30 * sr, 0.0), sr);
  CHECK(simulate_annotator(loud, loud).empty());
  CHECK(simulate_annotator(silent, silent).empty());
  const auto segs = simulate_annotator(silent, loud);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].start_s == 0.0);
  CHECK(segs[0].end_s == doctest::Approx(30.0));
  AudioClip shorter(std::vector<double>(29 * sr, 0.0), sr);
  CHECK_THROWS_AS(simulate_annotator(shorter, loud), ValidationError);
}

TEST_CASE("simulated annotator: segments stay inside dilated oracle silence") {
  const int sr = 4000;
  std::mt19937 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = static_cast<std::size_t>(40 * sr);
    std::vector<double> oracle(n, 0.0);
    std::uniform_real_distribution<double> pos(0, 40), len(0.2, 9.0);
    std::vector<char> silent(n, 1);
    for (int k = 0; k < 6; ++k) {
      const auto a = static_cast<std::size_t>(pos(rng) * sr);
      const auto b = std::min(n, a + static_cast<std::size_t>(len(rng) * sr));
      for (std::size_t i = a; i < b; ++i) {
        oracle[i] = 0.3 * std::sin(0.01 * static_cast<double>(i));
        silent[i] = 0;
      }
    }
    const AudioClip o(oracle, sr);
    const AudioClip p(test::noise(rng, n, 0.2), sr);
    const auto segs = simulate_annotator(o, p, {}, "x");
    const auto dil = static_cast<std::size_t>(0.5 * sr);
    for (const auto& s : segs) {
      const auto a = static_cast<std::size_t>(std::llround(s.start_s * sr));
      const auto b = static_cast<std::size_t>(std::llround(s.end_s * sr));
      // Every non-silent oracle sample inside a segment lies within one frame of its edge.
      for (std::size_t i = a; i < b; ++i) {
        if (!silent[i]) {
          CHECK((i < a + dil || i + dil >= b));
        }
      }
    }
  }
}

TEST_CASE("simulated annotator on a procedural song with a leaky estimate") {
  const GeneratedSong song = generate_song("hitl-000", "B", 30.0, 8000, 77);
  AudioClip leaky = song.vocals;
  for (std::size_t i = 0; i < leaky.length(); ++i) leaky.samples[i] += 0.3 * song.accompaniment.samples[i];
  const auto set = simulate_annotations(song.vocals, leaky, song.song_id);
  REQUIRE_FALSE(set.segments.empty());

  // Longest silent run of the oracle stem, found by an energy scan.
  const std::size_t block = 80;
  std::size_t best_a = 0, best_len = 0, run_a = 0, run = 0;
  for (std::size_t b = 0; b + block <= song.vocals.length(); b += block) {
    double e = 0;
    for (std::size_t i = b; i < b + block; ++i) e += song.vocals.samples[i] * song.vocals.samples[i];
    if (e == 0.0) {
      if (run == 0) run_a = b;
      run += block;
      if (run > best_len) {
        best_len = run;
        best_a = run_a;
      }
    } else {
      run = 0;
    }
  }
  const double ra = static_cast<double>(best_a) / 8000, rb = static_cast<double>(best_a + best_len) / 8000;
  REQUIRE(rb - ra >= 8.0);
  double overlap = 0;
  for (const auto& s : set.segments) overlap = std::max(overlap, std::min(rb, s.end_s) - std::max(ra, s.start_s));
  CHECK(overlap >= 6.0);
}
