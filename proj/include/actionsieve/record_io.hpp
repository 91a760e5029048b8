#pragma once

// Detection JSONL: one ClipRecord per line.
//
//   {"video_id":str,"clip_id":str,
//    "meta":{"width":int,"height":int,"duration_s":float,"caption":str,
//            "caption_pos_tags":[[token,tag],...]},        <- optional
//    "existence_frames":[FRAME...],"action_frames":[FRAME...]}
//
//   FRAME = {"frame_index":int,"timestamp_s":float,
//            "persons":[{"bbox":[x1,y1,x2,y2],"keypoints":[[h,w,conf] x17]}]}
//
// Coordinates are normalized fractions. Out-of-range coordinates are clamped
// to [0,1] on ingestion; everything else that breaks an invariant is rejected.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include <json.hpp>

#include "actionsieve/json_text.hpp"
#include "actionsieve/types.hpp"

namespace actionsieve {

namespace detail {

using nlohmann::json;

inline const json& require(const json& obj, const char* key,
                           const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(path + "." + key, "missing field");
  return *it;
}

inline double require_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(path, "non-finite number");
  return d;
}

inline std::int64_t require_integer(const json& v, const std::string& path) {
  if (!v.is_number_integer())
    throw ValidationError(path, "expected an integer");
  return v.get<std::int64_t>();
}

inline std::string require_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path, "expected a string");
  return v.get<std::string>();
}

inline const json& require_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw ValidationError(path, "expected an array");
  return v;
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline BoundingBox parse_bbox(const json& v, const std::string& path) {
  require_array(v, path);
  if (v.size() != 4)
    throw ValidationError(path,
                          "bbox length " + std::to_string(v.size()) + " ≠ 4");
  BoundingBox b{clamp01(require_number(v[0], path + "[0]")),
                clamp01(require_number(v[1], path + "[1]")),
                clamp01(require_number(v[2], path + "[2]")),
                clamp01(require_number(v[3], path + "[3]"))};
  if (b.x1 > b.x2) throw ValidationError(path, "x1 > x2");
  if (b.y1 > b.y2) throw ValidationError(path, "y1 > y2");
  return b;
}

inline PersonDetection parse_person(const json& v, const std::string& path) {
  if (!v.is_object()) throw ValidationError(path, "expected an object");
  PersonDetection p;
  p.bbox = parse_bbox(require(v, "bbox", path), path + ".bbox");
  const std::string kp_path = path + ".keypoints";
  const json& kps = require_array(require(v, "keypoints", path), kp_path);
  if (kps.size() != kNumKeypoints)
    throw ValidationError(kp_path, "keypoints length " +
                                       std::to_string(kps.size()) + " ≠ 17");
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const std::string kpath = kp_path + "[" + std::to_string(i) + "]";
    const json& kp = require_array(kps[i], kpath);
    if (kp.size() != 3)
      throw ValidationError(kpath, "keypoint length " +
                                       std::to_string(kp.size()) + " ≠ 3");
    const double conf = require_number(kp[2], kpath + "[2]");
    if (conf < 0.0 || conf > 1.0)
      throw ValidationError(kpath + "[2]", "confidence outside [0,1]");
    p.keypoints[i] = Keypoint{clamp01(require_number(kp[0], kpath + "[0]")),
                              clamp01(require_number(kp[1], kpath + "[1]")),
                              conf};
  }
  return p;
}

inline std::vector<PoseFrame> parse_frames(const json& v,
                                           const std::string& path) {
  require_array(v, path);
  std::vector<PoseFrame> frames;
  frames.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string fpath = path + "[" + std::to_string(i) + "]";
    const json& f = v[i];
    if (!f.is_object()) throw ValidationError(fpath, "expected an object");
    PoseFrame frame;
    frame.frame_index =
        require_integer(require(f, "frame_index", fpath), fpath + ".frame_index");
    if (frame.frame_index < 0)
      throw ValidationError(fpath + ".frame_index", "negative frame index");
    frame.timestamp_s =
        require_number(require(f, "timestamp_s", fpath), fpath + ".timestamp_s");
    if (frame.timestamp_s < 0.0)
      throw ValidationError(fpath + ".timestamp_s", "negative timestamp");
    if (!frames.empty()) {
      if (frame.timestamp_s <= frames.back().timestamp_s)
        throw ValidationError(fpath + ".timestamp_s",
                              "timestamps not strictly increasing");
      if (frame.frame_index <= frames.back().frame_index)
        throw ValidationError(fpath + ".frame_index",
                              "frame indices not strictly increasing");
    }
    const json& persons =
        require_array(require(f, "persons", fpath), fpath + ".persons");
    frame.persons.reserve(persons.size());
    for (std::size_t j = 0; j < persons.size(); ++j) {
      frame.persons.push_back(
          parse_person(persons[j], fpath + ".persons[" + std::to_string(j) + "]"));
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

inline void append_frames(std::string& out, const std::vector<PoseFrame>& frames) {
  using namespace json_text;
  out += '[';
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const PoseFrame& f = frames[i];
    if (i) out += ',';
    out += '{';
    append_key(out, "frame_index");
    append_integer(out, f.frame_index);
    out += ',';
    append_key(out, "timestamp_s");
    append_number(out, f.timestamp_s);
    out += ',';
    append_key(out, "persons");
    out += '[';
    for (std::size_t j = 0; j < f.persons.size(); ++j) {
      const PersonDetection& p = f.persons[j];
      if (j) out += ',';
      out += '{';
      append_key(out, "bbox");
      out += '[';
      append_number(out, p.bbox.x1);
      out += ',';
      append_number(out, p.bbox.y1);
      out += ',';
      append_number(out, p.bbox.x2);
      out += ',';
      append_number(out, p.bbox.y2);
      out += "],";
      append_key(out, "keypoints");
      out += '[';
      for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        const Keypoint& kp = p.keypoints[k];
        if (k) out += ',';
        out += '[';
        append_number(out, kp.h);
        out += ',';
        append_number(out, kp.w);
        out += ',';
        append_number(out, kp.confidence);
        out += ']';
      }
      out += "]}";
    }
    out += "]}";
  }
  out += ']';
}

}  // namespace detail

// Parses and validates one detection JSONL line. `line_number` is only used
// in error messages.
inline ClipRecord parse_clip_record(std::string_view line,
                                    std::size_t line_number = 0) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    throw ParseError(line_number, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("$", "expected an object");

  ClipRecord rec;
  ClipMeta& m = rec.meta;
  m.video_id = detail::require_string(detail::require(doc, "video_id", "$"),
                                      "$.video_id");
  m.clip_id =
      detail::require_string(detail::require(doc, "clip_id", "$"), "$.clip_id");

  const json& meta = detail::require(doc, "meta", "$");
  if (!meta.is_object()) throw ValidationError("$.meta", "expected an object");
  m.width = detail::require_integer(detail::require(meta, "width", "$.meta"),
                                    "$.meta.width");
  m.height = detail::require_integer(detail::require(meta, "height", "$.meta"),
                                     "$.meta.height");
  if (m.width <= 0) throw ValidationError("$.meta.width", "must be positive");
  if (m.height <= 0) throw ValidationError("$.meta.height", "must be positive");
  m.duration_s = detail::require_number(
      detail::require(meta, "duration_s", "$.meta"), "$.meta.duration_s");
  if (m.duration_s <= 0.0)
    throw ValidationError("$.meta.duration_s", "must be positive");
  m.caption = detail::require_string(detail::require(meta, "caption", "$.meta"),
                                     "$.meta.caption");
  if (auto it = meta.find("caption_pos_tags"); it != meta.end() && !it->is_null()) {
    const json& tags = detail::require_array(*it, "$.meta.caption_pos_tags");
    std::vector<PosTag> out;
    out.reserve(tags.size());
    for (std::size_t i = 0; i < tags.size(); ++i) {
      const std::string tpath = "$.meta.caption_pos_tags[" + std::to_string(i) + "]";
      const json& t = detail::require_array(tags[i], tpath);
      if (t.size() != 2) throw ValidationError(tpath, "expected [token, tag]");
      out.push_back({detail::require_string(t[0], tpath + "[0]"),
                     detail::require_string(t[1], tpath + "[1]")});
    }
    m.caption_pos_tags = std::move(out);
  }

  rec.existence_frames = detail::parse_frames(
      detail::require(doc, "existence_frames", "$"), "$.existence_frames");
  rec.action_frames = detail::parse_frames(
      detail::require(doc, "action_frames", "$"), "$.action_frames");
  return rec;
}

// Canonical form: fixed key order, no whitespace, nine significant digits.
inline std::string canonical_serialize(const ClipRecord& rec) {
  using namespace json_text;
  std::string out;
  out.reserve(4096);
  const ClipMeta& m = rec.meta;
  out += '{';
  append_key(out, "video_id");
  append_string(out, m.video_id);
  out += ',';
  append_key(out, "clip_id");
  append_string(out, m.clip_id);
  out += ',';
  append_key(out, "meta");
  out += '{';
  append_key(out, "width");
  append_integer(out, m.width);
  out += ',';
  append_key(out, "height");
  append_integer(out, m.height);
  out += ',';
  append_key(out, "duration_s");
  append_number(out, m.duration_s);
  out += ',';
  append_key(out, "caption");
  append_string(out, m.caption);
  if (m.caption_pos_tags) {
    out += ',';
    append_key(out, "caption_pos_tags");
    out += '[';
    for (std::size_t i = 0; i < m.caption_pos_tags->size(); ++i) {
      if (i) out += ',';
      out += '[';
      append_string(out, (*m.caption_pos_tags)[i].token);
      out += ',';
      append_string(out, (*m.caption_pos_tags)[i].tag);
      out += ']';
    }
    out += ']';
  }
  out += "},";
  append_key(out, "existence_frames");
  detail::append_frames(out, rec.existence_frames);
  out += ',';
  append_key(out, "action_frames");
  detail::append_frames(out, rec.action_frames);
  out += '}';
  return out;
}

}  // namespace actionsieve
