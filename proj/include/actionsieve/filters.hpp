#pragma once

// The three-stage clip filter: metadata -> human existence -> human action.
// Every stage returns a StageVerdict; failures are data, not exceptions.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "actionsieve/motion.hpp"
#include "actionsieve/types.hpp"

namespace actionsieve {

// How a tracklet's adjacent-pair L1 distances are reduced to one score.
enum class MotionAggregation {
  mean,        // mean over all adjacent pairs
  every_pair,  // smallest pair, i.e. every pair must exceed the threshold
};

struct FilterConfig {
  std::int64_t min_short_side = 360;  // pixels
  double min_clip_s = 5.0;
  double max_clip_s = 20.0;
  std::int64_t min_humans = 1;
  std::int64_t max_humans = 5;
  double min_coverage = 0.10;
  double l1_threshold = 0.085;
  double affine_residual_threshold = 0.0016;
  double iou_min = 0.3;
  double conf_min = 0.3;
  // Motion check must hold for every tracklet instead of at least one.
  bool require_all_tracklets = false;
  MotionAggregation motion_aggregation = MotionAggregation::mean;
  FitScope fit_scope = FitScope::pooled;

  // Throws InputError naming the first broken constraint.
  void validate() const {
    auto fail = [](const std::string& m) { throw InputError("invalid config: " + m); };
    if (min_short_side < 0) fail("min_short_side < 0");
    if (!(min_clip_s >= 0.0)) fail("min_clip_s < 0");
    if (!(min_clip_s < max_clip_s)) fail("min_clip_s must be < max_clip_s");
    if (min_humans < 0) fail("min_humans < 0");
    if (min_humans > max_humans) fail("min_humans must be <= max_humans");
    for (auto [name, v] : {std::pair{"min_coverage", min_coverage},
                           std::pair{"l1_threshold", l1_threshold},
                           std::pair{"affine_residual_threshold", affine_residual_threshold},
                           std::pair{"iou_min", iou_min},
                           std::pair{"conf_min", conf_min}}) {
      if (!(v >= 0.0)) fail(std::string(name) + " < 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Verb detection

// Lower-case verb forms (lemmas and inflections). File format: one form per
// line; blank lines and lines starting with '#' are ignored.
class VerbLexicon {
 public:
  VerbLexicon() = default;

  explicit VerbLexicon(std::initializer_list<std::string_view> words) {
    for (auto w : words) add(w);
  }

  static VerbLexicon from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open verb lexicon: " + path);
    VerbLexicon lex;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back())))
        line.pop_back();
      std::size_t start = 0;
      while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start])))
        ++start;
      if (start == line.size() || line[start] == '#') continue;
      lex.add(std::string_view(line).substr(start));
    }
    return lex;
  }

  void add(std::string_view word) { words_.insert(lowercase(word)); }
  bool contains(std::string_view word) const {
    return words_.count(lowercase(word)) > 0;
  }
  std::size_t size() const { return words_.size(); }

  static std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  }

 private:
  std::unordered_set<std::string> words_;
};

// Splits on anything that is not an ASCII letter, digit or apostrophe.
inline std::vector<std::string> tokenize_caption(std::string_view caption) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : caption) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '\'' || u >= 0x80) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// Universal "VERB" or any Penn Treebank VB* tag. Auxiliaries do not count.
inline bool is_verb_tag(std::string_view tag) {
  std::string t(tag);
  for (char& c : t) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return t == "VERB" || t.rfind("VB", 0) == 0;
}

inline bool caption_has_verb(const ClipMeta& meta, const VerbLexicon& lexicon) {
  if (meta.caption_pos_tags) {
    return std::any_of(meta.caption_pos_tags->begin(), meta.caption_pos_tags->end(),
                       [](const PosTag& t) { return is_verb_tag(t.tag); });
  }
  for (const auto& tok : tokenize_caption(meta.caption)) {
    if (lexicon.contains(tok)) return true;
  }
  return false;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string fmt_range(double lo, double hi) {
  return "[" + fmt("%g", lo) + "," + fmt("%g", hi) + "]";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages

inline StageVerdict metadata_filter(const ClipMeta& meta, const VerbLexicon& lexicon,
                                    const FilterConfig& cfg) {
  StageVerdict v{Stage::metadata, false, std::nullopt, "", {}};
  const std::int64_t short_side = std::min(meta.width, meta.height);
  if (short_side < cfg.min_short_side) {
    v.reason = "low resolution: short side " + std::to_string(short_side) + " < " +
               std::to_string(cfg.min_short_side);
    return v;
  }
  if (meta.duration_s < cfg.min_clip_s || meta.duration_s > cfg.max_clip_s) {
    v.reason = "duration outside " + detail::fmt_range(cfg.min_clip_s, cfg.max_clip_s) +
               ": " + detail::fmt("%g", meta.duration_s) + " s";
    return v;
  }
  if (!caption_has_verb(meta, lexicon)) {
    v.reason = "no verb";
    return v;
  }
  v.passed = true;
  v.reason = "ok";
  return v;
}

// Mean over frames of the summed person box areas, each frame capped at 1.
inline double existence_coverage(std::span<const PoseFrame> frames) {
  if (frames.empty()) return 0.0;
  double total = 0.0;
  for (const PoseFrame& f : frames) {
    double area = 0.0;
    for (const PersonDetection& p : f.persons) area += p.bbox.area();
    total += std::min(area, 1.0);
  }
  return total / static_cast<double>(frames.size());
}

inline StageVerdict human_existence_filter(std::span<const PoseFrame> frames,
                                           const FilterConfig& cfg) {
  if (frames.size() != kExistenceFrameCount)
    throw InputError("existence filter expects 16 frames, got " +
                     std::to_string(frames.size()));
  StageVerdict v{Stage::existence, false, std::nullopt, "", {}};
  const double coverage = existence_coverage(frames);
  v.score = coverage;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto n = static_cast<std::int64_t>(frames[i].persons.size());
    if (n < cfg.min_humans || n > cfg.max_humans) {
      v.reason = "person count out of range: frame " + std::to_string(i) + " has " +
                 std::to_string(n);
      return v;
    }
  }
  if (coverage < cfg.min_coverage) {
    v.reason = "coverage " + detail::fmt("%.4g", coverage) + " < " +
               detail::fmt("%.2f", cfg.min_coverage);
    return v;
  }
  v.passed = true;
  v.reason = "ok";
  return v;
}

struct MotionSummary {
  // Score of the best tracklet (of the worst one when every tracklet must
  // move). 0 when no tracklet spans two frames.
  double score = 0.0;
  bool passed = false;
  std::size_t tracklets_considered = 0;
};

// Reduces one tracklet's adjacent-pair L1 distances. Pairs with too few
// visible keypoints count as zero motion.
inline double tracklet_motion_score(const Tracklet& t, const FilterConfig& cfg) {
  const auto dists = keypoint_motion_l1(t, cfg.conf_min);
  if (dists.empty()) return 0.0;
  if (cfg.motion_aggregation == MotionAggregation::every_pair) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& d : dists) m = std::min(m, d.value_or(0.0));
    return m;
  }
  double sum = 0.0;
  for (const auto& d : dists) sum += d.value_or(0.0);
  return sum / static_cast<double>(dists.size());
}

inline MotionSummary summarize_motion(std::span<const Tracklet> tracklets,
                                      const FilterConfig& cfg) {
  MotionSummary out;
  double best = 0.0;
  double worst = std::numeric_limits<double>::infinity();
  for (const Tracklet& t : tracklets) {
    if (t.size() < 2) continue;
    ++out.tracklets_considered;
    const double s = tracklet_motion_score(t, cfg);
    best = std::max(best, s);
    worst = std::min(worst, s);
  }
  if (out.tracklets_considered == 0) return out;
  out.score = cfg.require_all_tracklets ? worst : best;
  out.passed = out.score > cfg.l1_threshold;
  return out;
}

inline StageVerdict human_action_filter(std::span<const PoseFrame> frames,
                                        const FilterConfig& cfg) {
  if (frames.size() < 2)
    throw InputError("action filter needs at least 2 frames, got " +
                     std::to_string(frames.size()));
  const std::vector<Tracklet> tracklets = build_tracklets(frames, cfg.iou_min);
  const MotionSummary motion = summarize_motion(tracklets, cfg);
  const AffineResidual affine =
      clip_affine_residual(frames, tracklets, cfg.conf_min, cfg.fit_scope);

  StageVerdict v;
  v.sub_scores.emplace_back(Stage::action_motion, motion.score);
  if (affine.value) v.sub_scores.emplace_back(Stage::action_affine, *affine.value);

  if (!motion.passed) {
    v.stage = Stage::action_motion;
    v.score = motion.score;
    v.reason = motion.tracklets_considered == 0
                   ? std::string("no tracklet spans two frames")
                   : "static humans: L1 " + detail::fmt("%.4g", motion.score) +
                         " <= " + detail::fmt("%g", cfg.l1_threshold);
    return v;
  }
  v.stage = Stage::action_affine;
  if (affine.undecidable()) {
    v.reason = "insufficient tracked keypoints";
    return v;
  }
  v.score = *affine.value;
  if (*affine.value <= cfg.affine_residual_threshold) {
    v.reason = "affine motion: residual " + detail::fmt("%.4g", *affine.value) +
               " <= " + detail::fmt("%g", cfg.affine_residual_threshold);
    return v;
  }
  v.passed = true;
  v.reason = "ok";
  return v;
}

// ---------------------------------------------------------------------------
// Cascade

struct CascadeResult {
  std::vector<StageVerdict> verdicts;
  bool passed = false;
};

// Runs metadata -> existence -> action, stopping at the first failure.
inline CascadeResult run_cascade(const ClipRecord& clip, const FilterConfig& cfg,
                                 const VerbLexicon& lexicon) {
  CascadeResult out;
  auto guarded = [&](Stage stage, auto&& fn) {
    try {
      out.verdicts.push_back(fn());
    } catch (const InputError& e) {
      out.verdicts.push_back({stage, false, std::nullopt,
                              std::string("invalid input: ") + e.what(), {}});
    }
    return out.verdicts.back().passed;
  };

  if (!guarded(Stage::metadata, [&] { return metadata_filter(clip.meta, lexicon, cfg); }))
    return out;
  if (!guarded(Stage::existence,
               [&] { return human_existence_filter(clip.existence_frames, cfg); }))
    return out;
  if (!guarded(Stage::action_motion,
               [&] { return human_action_filter(clip.action_frames, cfg); }))
    return out;
  out.passed = true;
  return out;
}

}  // namespace actionsieve
