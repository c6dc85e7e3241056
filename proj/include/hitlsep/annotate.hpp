#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hitlsep/audio.hpp"

namespace hitlsep {

/// A false-positive interval: the estimate has audio where the vocals are silent.
struct Segment {
  std::string song_id;
  double start_s = 0.0;
  double end_s = 0.0;

  double duration() const { return end_s - start_s; }
  bool operator==(const Segment&) const = default;
};

enum class Annotator { Human, Simulated };
std::string_view to_string(Annotator a);

struct AnnotationSet {
  std::string song_id;
  Annotator annotator = Annotator::Human;
  std::vector<Segment> segments;
  std::string created_at;  // ISO 8601; empty when unknown

  bool operator==(const AnnotationSet&) const = default;
};

inline constexpr double kMinSegmentSeconds = 6.0;
inline constexpr double kMergeGapSeconds = 0.1;

enum class SegmentFate { Kept, Dropped, Rejected };
std::string_view to_string(SegmentFate f);

/// What happened to one submitted segment.
struct SegmentDiagnostic {
  std::size_t index = 0;
  Segment submitted;
  SegmentFate fate = SegmentFate::Kept;
  std::string reason;                      // empty for kept segments
  std::optional<std::size_t> kept_index;   // position in the normalised set when kept
};

struct NormalizeResult {
  AnnotationSet set;
  std::vector<SegmentDiagnostic> diagnostics;  // one per submitted segment, in submission order
};

/// Clamps to [0, duration], merges overlapping or nearly adjacent (< 0.1 s gap)
/// segments, drops merged segments shorter than 6 s and sorts by start.
NormalizeResult normalize_with_diagnostics(const AnnotationSet& raw, double song_duration);
AnnotationSet normalize(const AnnotationSet& raw, double song_duration);

/// Schema: {"song_id": str, "annotator": "human"|"simulated",
///          "segments": [{"start_s": float, "end_s": float}], "created_at"?: str}
/// Violations throw ValidationError naming the offending field or segment index.
AnnotationSet annotation_from_json(const nlohmann::json& j);
nlohmann::json annotation_to_json(const AnnotationSet& set);
void save_annotations(const AnnotationSet& set, const std::filesystem::path& path);
AnnotationSet load_annotations(const std::filesystem::path& path);

struct AnnotatorParams {
  double silence_db = -60.0;
  double activity_db = -40.0;
  double frame_s = 0.5;
};

/// Frames where the oracle is silent but the prediction is active, merged into
/// maximal runs. Output is raw; pass it through normalize().
std::vector<Segment> simulate_annotator(const AudioClip& oracle_vocals, const AudioClip& predicted_vocals,
                                        const AnnotatorParams& params = {}, const std::string& song_id = {});

/// simulate_annotator followed by normalize().
AnnotationSet simulate_annotations(const AudioClip& oracle_vocals, const AudioClip& predicted_vocals,
                                   const std::string& song_id, const AnnotatorParams& params = {});

}  // namespace hitlsep
