#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hitlsep/annotate.hpp"
#include "hitlsep/error.hpp"

namespace hitlsep {

std::string_view to_string(Annotator a) { return a == Annotator::Human ? "human" : "simulated"; }

std::string_view to_string(SegmentFate f) {
  switch (f) {
    case SegmentFate::Kept: return "kept";
    case SegmentFate::Dropped: return "dropped";
    case SegmentFate::Rejected: return "rejected";
  }
  return "?";
}

NormalizeResult normalize_with_diagnostics(const AnnotationSet& raw, double song_duration) {
  NormalizeResult r;
  r.set.song_id = raw.song_id;
  r.set.annotator = raw.annotator;
  r.set.created_at = raw.created_at;
  const std::size_t n = raw.segments.size();
  r.diagnostics.resize(n);

  struct Item {
    double a, b;
    std::size_t index;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < n; ++i) {
    const Segment& s = raw.segments[i];
    auto& d = r.diagnostics[i];
    d.index = i;
    d.submitted = s;
    if (!std::isfinite(s.start_s) || !std::isfinite(s.end_s)) {
      d.fate = SegmentFate::Rejected;
      d.reason = "non-finite timestamp";
      continue;
    }
    const double a = std::clamp(s.start_s, 0.0, song_duration);
    const double b = std::clamp(s.end_s, 0.0, song_duration);
    if (a >= b) {
      d.fate = SegmentFate::Rejected;
      d.reason = "start >= end after clamping to song bounds";
      continue;
    }
    items.push_back({a, b, i});
  }
  std::stable_sort(items.begin(), items.end(), [](const Item& x, const Item& y) { return x.a < y.a; });

  std::size_t i = 0;
  while (i < items.size()) {
    double a = items[i].a, b = items[i].b;
    std::size_t j = i + 1;
    while (j < items.size() && items[j].a - b < kMergeGapSeconds) {
      b = std::max(b, items[j].b);
      ++j;
    }
    const bool keep = b - a >= kMinSegmentSeconds - 1e-9;
    if (keep) r.set.segments.push_back({raw.song_id, a, b});
    for (std::size_t k = i; k < j; ++k) {
      auto& d = r.diagnostics[items[k].index];
      if (keep) {
        d.fate = SegmentFate::Kept;
        d.kept_index = r.set.segments.size() - 1;
      } else {
        d.fate = SegmentFate::Dropped;
        d.reason = "below 6 s minimum";
      }
    }
    i = j;
  }
  return r;
}

AnnotationSet normalize(const AnnotationSet& raw, double song_duration) {
  return normalize_with_diagnostics(raw, song_duration).set;
}

AnnotationSet annotation_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("annotation: expected a JSON object");
  AnnotationSet set;
  if (!j.contains("song_id") || !j["song_id"].is_string() || j["song_id"].get<std::string>().empty()) {
    throw ValidationError("annotation: 'song_id' must be a non-empty string");
  }
  set.song_id = j["song_id"].get<std::string>();
  if (!j.contains("annotator") || !j["annotator"].is_string()) {
    throw ValidationError("annotation: 'annotator' must be \"human\" or \"simulated\"");
  }
  const auto who = j["annotator"].get<std::string>();
  if (who == "human") {
    set.annotator = Annotator::Human;
  } else if (who == "simulated") {
    set.annotator = Annotator::Simulated;
  } else {
    throw ValidationError("annotation: 'annotator' must be \"human\" or \"simulated\", got \"" + who + "\"");
  }
  if (j.contains("created_at")) {
    if (!j["created_at"].is_string()) throw ValidationError("annotation: 'created_at' must be a string");
    set.created_at = j["created_at"].get<std::string>();
  }
  if (!j.contains("segments") || !j["segments"].is_array()) {
    throw ValidationError("annotation: 'segments' must be an array");
  }
  const auto& segs = j["segments"];
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = segs[i];
    const std::string where = "annotation: segments[" + std::to_string(i) + "]";
    if (!s.is_object()) throw ValidationError(where + " must be an object");
    for (const char* key : {"start_s", "end_s"}) {
      if (!s.contains(key) || !s[key].is_number()) throw ValidationError(where + "." + key + " must be a number");
    }
    Segment seg{set.song_id, s["start_s"].get<double>(), s["end_s"].get<double>()};
    if (!std::isfinite(seg.start_s) || !std::isfinite(seg.end_s)) {
      throw ValidationError(where + " has a non-finite timestamp");
    }
    if (!(seg.end_s > seg.start_s)) {
      throw ValidationError(where + ": end_s (" + std::to_string(seg.end_s) + ") must exceed start_s (" +
                            std::to_string(seg.start_s) + ")");
    }
    set.segments.push_back(seg);
  }
  return set;
}

nlohmann::json annotation_to_json(const AnnotationSet& set) {
  nlohmann::json j;
  j["song_id"] = set.song_id;
  j["annotator"] = std::string(to_string(set.annotator));
  j["segments"] = nlohmann::json::array();
  for (const auto& s : set.segments) j["segments"].push_back({{"start_s", s.start_s}, {"end_s", s.end_s}});
  if (!set.created_at.empty()) j["created_at"] = set.created_at;
  return j;
}

void save_annotations(const AnnotationSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << annotation_to_json(set).dump(2) << "\n";
  if (!out) throw IoError(path.string() + ": write failed");
}

AnnotationSet load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
  try {
    return annotation_from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<Segment> simulate_annotator(const AudioClip& oracle, const AudioClip& predicted,
                                        const AnnotatorParams& params, const std::string& song_id) {
  if (oracle.length() != predicted.length() || oracle.sample_rate != predicted.sample_rate) {
    throw ValidationError("simulate_annotator: oracle (" + std::to_string(oracle.length()) + " @ " +
                          std::to_string(oracle.sample_rate) + " Hz) and prediction (" +
                          std::to_string(predicted.length()) + " @ " + std::to_string(predicted.sample_rate) +
                          " Hz) differ in length or rate");
  }
  if (!(params.frame_s > 0)) throw ValidationError("simulate_annotator: frame_s must be positive");
  const double rate = oracle.sample_rate;
  const auto frame = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(params.frame_s * rate)));
  const std::size_t n = oracle.length();
  std::vector<Segment> out;
  std::optional<std::size_t> run_start;
  for (std::size_t b = 0; b < n; b += frame) {
    const std::size_t e = std::min(n, b + frame);
    const std::span<const double> o(oracle.samples.data() + b, e - b);
    const std::span<const double> p(predicted.samples.data() + b, e - b);
    const bool marked = rms_dbfs(o) < params.silence_db && rms_dbfs(p) > params.activity_db;
    if (marked && !run_start) run_start = b;
    if (!marked && run_start) {
      out.push_back({song_id, static_cast<double>(*run_start) / rate, static_cast<double>(b) / rate});
      run_start.reset();
    }
  }
  if (run_start) out.push_back({song_id, static_cast<double>(*run_start) / rate, static_cast<double>(n) / rate});
  return out;
}

AnnotationSet simulate_annotations(const AudioClip& oracle, const AudioClip& predicted, const std::string& song_id,
                                   const AnnotatorParams& params) {
  AnnotationSet raw{song_id, Annotator::Simulated, simulate_annotator(oracle, predicted, params, song_id), {}};
  return normalize(raw, oracle.duration_seconds());
}

}  // namespace hitlsep
