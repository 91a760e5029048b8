#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace actionsieve {

inline constexpr std::size_t kNumKeypoints = 17;
inline constexpr std::size_t kExistenceFrameCount = 16;

// COCO-17 joint order.
enum class Joint : std::size_t {
  nose,
  left_eye,
  right_eye,
  left_ear,
  right_ear,
  left_shoulder,
  right_shoulder,
  left_elbow,
  right_elbow,
  left_wrist,
  right_wrist,
  left_hip,
  right_hip,
  left_knee,
  right_knee,
  left_ankle,
  right_ankle,
};

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed JSON. `line()` is 1-based; 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed JSON that violates the record schema.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Precondition violated by a caller (wrong frame count, length mismatch...).
class InputError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Pose data. Coordinates are normalized: h = row / height, w = col / width.

struct Keypoint {
  double h = 0.0;
  double w = 0.0;
  double confidence = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct BoundingBox {
  double x1 = 0.0;  // width axis
  double y1 = 0.0;  // height axis
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct PersonDetection {
  BoundingBox bbox;
  std::array<Keypoint, kNumKeypoints> keypoints{};

  const Keypoint& operator[](Joint j) const {
    return keypoints[static_cast<std::size_t>(j)];
  }

  friend bool operator==(const PersonDetection&,
                         const PersonDetection&) = default;
};

struct PoseFrame {
  std::int64_t frame_index = 0;
  double timestamp_s = 0.0;
  std::vector<PersonDetection> persons;

  friend bool operator==(const PoseFrame&, const PoseFrame&) = default;
};

struct PosTag {
  std::string token;
  std::string tag;

  friend bool operator==(const PosTag&, const PosTag&) = default;
};

struct ClipMeta {
  std::string video_id;
  std::string clip_id;
  std::int64_t width = 0;
  std::int64_t height = 0;
  double duration_s = 0.0;
  std::string caption;
  std::optional<std::vector<PosTag>> caption_pos_tags;

  friend bool operator==(const ClipMeta&, const ClipMeta&) = default;
};

// The pipeline's unit of work: one scene-split clip with its two samplings.
struct ClipRecord {
  ClipMeta meta;
  std::vector<PoseFrame> existence_frames;  // 16 uniform samples
  std::vector<PoseFrame> action_frames;     // 1 fps

  friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

// ---------------------------------------------------------------------------
// Tracking

struct TrackEntry {
  std::int64_t frame_index = 0;
  std::size_t detection_index = 0;  // position within PoseFrame::persons
  PersonDetection detection;

  friend bool operator==(const TrackEntry&, const TrackEntry&) = default;
};

// One person linked across consecutive sampled frames. A missed frame ends
// the tracklet, so entries always come from adjacent frames.
struct Tracklet {
  int tracklet_id = 0;
  std::vector<TrackEntry> entries;

  std::size_t size() const { return entries.size(); }

  // Entry at the given frame, or nullptr.
  const TrackEntry* at_frame(std::int64_t frame_index) const {
    for (const auto& e : entries) {
      if (e.frame_index == frame_index) return &e;
    }
    return nullptr;
  }

  friend bool operator==(const Tracklet&, const Tracklet&) = default;
};

// ---------------------------------------------------------------------------
// Cascade audit trail

enum class Stage {
  parse,  // record could not be decoded; never produced by the filters
  metadata,
  existence,
  action_motion,
  action_affine,
};

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::parse:
      return "parse";
    case Stage::metadata:
      return "metadata";
    case Stage::existence:
      return "existence";
    case Stage::action_motion:
      return "action_motion";
    case Stage::action_affine:
      return "action_affine";
  }
  return "unknown";
}

inline std::optional<Stage> stage_from_string(std::string_view s) {
  for (Stage st : {Stage::parse, Stage::metadata, Stage::existence,
                   Stage::action_motion, Stage::action_affine}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

struct StageVerdict {
  Stage stage = Stage::metadata;
  bool passed = false;
  std::optional<double> score;
  std::string reason;
  // Sub-check scores for compound stages (the action filter reports both the
  // motion score and the affine residual here).
  std::vector<std::pair<Stage, double>> sub_scores;

  friend bool operator==(const StageVerdict&, const StageVerdict&) = default;
};

}  // namespace actionsieve
