#pragma once

// Batch orchestration: detection JSONL in, one decision line per clip out,
// plus cascade attrition statistics. Output order always equals input order.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "actionsieve/filters.hpp"
#include "actionsieve/json_text.hpp"
#include "actionsieve/record_io.hpp"
#include "actionsieve/types.hpp"

namespace actionsieve {

// ---------------------------------------------------------------------------
// Decisions

struct DecisionRecord {
  std::string video_id;
  std::string clip_id;
  std::vector<StageVerdict> verdicts;
  bool final = false;
  std::map<Stage, double> scores;

  friend bool operator==(const DecisionRecord&, const DecisionRecord&) = default;
};

inline DecisionRecord make_decision(const ClipMeta& meta, CascadeResult result) {
  DecisionRecord d;
  d.video_id = meta.video_id;
  d.clip_id = meta.clip_id;
  d.final = result.passed;
  for (const StageVerdict& v : result.verdicts) {
    if (v.score) d.scores[v.stage] = *v.score;
    for (const auto& [stage, s] : v.sub_scores) d.scores[stage] = s;
  }
  d.verdicts = std::move(result.verdicts);
  return d;
}

// Decodes and filters one input line. Never throws for bad input: decoding
// failures become a single failed verdict at Stage::parse.
inline DecisionRecord decide_line(std::string_view line, std::size_t line_number,
                                  const FilterConfig& cfg, const VerbLexicon& lexicon) {
  try {
    const ClipRecord clip = parse_clip_record(line, line_number);
    return make_decision(clip.meta, run_cascade(clip, cfg, lexicon));
  } catch (const Error& e) {
    DecisionRecord d;
    // Keep whatever identifiers are recoverable for the audit trail.
    const auto doc = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
    if (doc.is_object()) {
      if (auto it = doc.find("video_id"); it != doc.end() && it->is_string())
        d.video_id = it->get<std::string>();
      if (auto it = doc.find("clip_id"); it != doc.end() && it->is_string())
        d.clip_id = it->get<std::string>();
    }
    d.verdicts.push_back(
        {Stage::parse, false, std::nullopt, std::string("parse error: ") + e.what(), {}});
    return d;
  }
}

inline std::string serialize_decision(const DecisionRecord& d) {
  using namespace json_text;
  std::string out;
  out += '{';
  append_key(out, "video_id");
  append_string(out, d.video_id);
  out += ',';
  append_key(out, "clip_id");
  append_string(out, d.clip_id);
  out += ',';
  append_key(out, "final");
  append_bool(out, d.final);
  out += ',';
  append_key(out, "verdicts");
  out += '[';
  for (std::size_t i = 0; i < d.verdicts.size(); ++i) {
    const StageVerdict& v = d.verdicts[i];
    if (i) out += ',';
    out += '{';
    append_key(out, "stage");
    append_string(out, to_string(v.stage));
    out += ',';
    append_key(out, "passed");
    append_bool(out, v.passed);
    if (v.score) {
      out += ',';
      append_key(out, "score");
      append_number(out, *v.score);
    }
    out += ',';
    append_key(out, "reason");
    append_string(out, v.reason);
    out += '}';
  }
  out += "],";
  append_key(out, "scores");
  out += '{';
  bool first = true;
  for (const auto& [stage, s] : d.scores) {
    if (!first) out += ',';
    first = false;
    append_key(out, to_string(stage));
    append_number(out, s);
  }
  out += "}}";
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct StageCount {
  std::size_t attempted = 0;
  std::size_t passed = 0;
  std::size_t failed() const { return attempted - passed; }

  friend bool operator==(const StageCount&, const StageCount&) = default;
};

struct PipelineStats {
  std::size_t input_count = 0;
  std::size_t parse_errors = 0;
  StageCount metadata;
  StageCount existence;
  StageCount action;
  // Breakdown of action-stage failures.
  std::size_t static_motion = 0;
  std::size_t affine_motion = 0;
  std::size_t undecidable = 0;

  std::size_t final_pass() const { return action.passed; }
  double final_yield() const {
    return input_count == 0 ? 0.0
                            : static_cast<double>(final_pass()) /
                                  static_cast<double>(input_count);
  }

  void add(const DecisionRecord& d) {
    ++input_count;
    for (const StageVerdict& v : d.verdicts) {
      switch (v.stage) {
        case Stage::parse:
          ++parse_errors;
          break;
        case Stage::metadata:
          ++metadata.attempted;
          metadata.passed += v.passed;
          break;
        case Stage::existence:
          ++existence.attempted;
          existence.passed += v.passed;
          break;
        case Stage::action_motion:
        case Stage::action_affine:
          ++action.attempted;
          action.passed += v.passed;
          if (!v.passed) {
            if (v.stage == Stage::action_motion) {
              ++static_motion;
            } else if (v.score) {
              ++affine_motion;
            } else {
              ++undecidable;
            }
          }
          break;
      }
    }
  }

  friend bool operator==(const PipelineStats&, const PipelineStats&) = default;
};

inline std::string format_percent(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f%%", fraction * 100.0);
  return buf;
}

enum class ReportFormat { text, json };

inline std::string emit_stats_report(const PipelineStats& s, ReportFormat format) {
  if (format == ReportFormat::json) {
    using namespace json_text;
    std::string out = "{";
    auto count = [&out](std::string_view key, std::size_t v, bool comma = true) {
      append_key(out, key);
      append_integer(out, static_cast<std::int64_t>(v));
      if (comma) out += ',';
    };
    count("input_count", s.input_count);
    count("parse_errors", s.parse_errors);
    append_key(out, "stages");
    out += '[';
    const std::pair<const char*, const StageCount*> stages[] = {
        {"metadata", &s.metadata}, {"existence", &s.existence}, {"action", &s.action}};
    for (std::size_t i = 0; i < 3; ++i) {
      if (i) out += ',';
      out += '{';
      append_key(out, "stage");
      append_string(out, stages[i].first);
      out += ',';
      count("attempted", stages[i].second->attempted);
      count("passed", stages[i].second->passed);
      count("failed", stages[i].second->failed(), false);
      out += '}';
    }
    out += "],";
    append_key(out, "action_failures");
    out += '{';
    count("static_motion", s.static_motion);
    count("affine_motion", s.affine_motion);
    count("undecidable", s.undecidable, false);
    out += "},";
    count("final_pass", s.final_pass());
    append_key(out, "final_yield");
    append_number(out, s.final_yield());
    out += ',';
    append_key(out, "final_yield_percent");
    append_string(out, format_percent(s.final_yield()));
    out += "}\n";
    return out;
  }

  std::string out;
  char buf[160];
  auto line = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
  };
  line("%-16s %10zu\n", "input clips", s.input_count);
  line("%-16s %10zu\n", "parse errors", s.parse_errors);
  line("%-16s %10s %10s %10s %12s\n", "stage", "attempted", "passed", "failed", "pass rate");
  const std::pair<const char*, const StageCount*> stages[] = {
      {"metadata", &s.metadata}, {"existence", &s.existence}, {"action", &s.action}};
  for (const auto& [name, c] : stages) {
    const double rate = c->attempted == 0 ? 0.0
                                          : static_cast<double>(c->passed) /
                                                static_cast<double>(c->attempted);
    line("%-16s %10zu %10zu %10zu %12s\n", name, c->attempted, c->passed, c->failed(),
         format_percent(rate).c_str());
  }
  line("%-16s %10zu\n", "  static motion", s.static_motion);
  line("%-16s %10zu\n", "  affine motion", s.affine_motion);
  line("%-16s %10zu\n", "  undecidable", s.undecidable);
  line("%-16s %10zu\n", "final pass", s.final_pass());
  line("%-16s %10s\n", "final yield", format_percent(s.final_yield()).c_str());
  return out;
}

// Inverse of the json report.
inline PipelineStats stats_from_json(std::string_view text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(0, std::string("malformed stats JSON: ") + e.what());
  }
  try {
    PipelineStats s;
    s.input_count = doc.at("input_count").get<std::size_t>();
    s.parse_errors = doc.at("parse_errors").get<std::size_t>();
    for (const json& st : doc.at("stages")) {
      StageCount c{st.at("attempted").get<std::size_t>(), st.at("passed").get<std::size_t>()};
      const std::string name = st.at("stage").get<std::string>();
      if (name == "metadata") {
        s.metadata = c;
      } else if (name == "existence") {
        s.existence = c;
      } else if (name == "action") {
        s.action = c;
      } else {
        throw ValidationError("stages", "unknown stage " + name);
      }
    }
    const json& af = doc.at("action_failures");
    s.static_motion = af.at("static_motion").get<std::size_t>();
    s.affine_motion = af.at("affine_motion").get<std::size_t>();
    s.undecidable = af.at("undecidable").get<std::size_t>();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError("stats", e.what());
  }
}

// ---------------------------------------------------------------------------
// Config: flat `key = value` lines, '#' comments.

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d))
    throw InputError("config " + key + ": not a number: '" + v + "'");
  return d;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw InputError("config " + key + ": not an integer: '" + v + "'");
  return i;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError("config " + key + ": not a boolean: '" + v + "'");
}

}  // namespace detail

inline void apply_config_value(FilterConfig& cfg, const std::string& key,
                               const std::string& value) {
  using namespace detail;
  if (key == "min_short_side") {
    cfg.min_short_side = parse_int(key, value);
  } else if (key == "min_clip_s") {
    cfg.min_clip_s = parse_double(key, value);
  } else if (key == "max_clip_s") {
    cfg.max_clip_s = parse_double(key, value);
  } else if (key == "min_humans") {
    cfg.min_humans = parse_int(key, value);
  } else if (key == "max_humans") {
    cfg.max_humans = parse_int(key, value);
  } else if (key == "min_coverage") {
    cfg.min_coverage = parse_double(key, value);
  } else if (key == "l1_threshold") {
    cfg.l1_threshold = parse_double(key, value);
  } else if (key == "affine_residual_threshold") {
    cfg.affine_residual_threshold = parse_double(key, value);
  } else if (key == "iou_min") {
    cfg.iou_min = parse_double(key, value);
  } else if (key == "conf_min") {
    cfg.conf_min = parse_double(key, value);
  } else if (key == "require_all_tracklets") {
    cfg.require_all_tracklets = parse_bool(key, value);
  } else if (key == "motion_aggregation") {
    if (value == "mean") {
      cfg.motion_aggregation = MotionAggregation::mean;
    } else if (value == "every_pair") {
      cfg.motion_aggregation = MotionAggregation::every_pair;
    } else {
      throw InputError("config motion_aggregation: expected mean or every_pair");
    }
  } else if (key == "fit_scope") {
    if (value == "pooled") {
      cfg.fit_scope = FitScope::pooled;
    } else if (value == "per_tracklet") {
      cfg.fit_scope = FitScope::per_tracklet;
    } else {
      throw InputError("config fit_scope: expected pooled or per_tracklet");
    }
  } else {
    throw InputError("unknown config key '" + key + "'");
  }
}

// Applies one "key=value" assignment.
inline void apply_config_assignment(FilterConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw InputError("expected key=value, got '" + std::string(assignment) + "'");
  apply_config_value(cfg, detail::trim(assignment.substr(0, eq)),
                     detail::trim(assignment.substr(eq + 1)));
}

inline FilterConfig parse_config(std::istream& in, FilterConfig cfg = {}) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply_config_assignment(cfg, t);
    } catch (const InputError& e) {
      throw InputError("config line " + std::to_string(n) + ": " + e.what());
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Batch run

struct RunOptions {
  std::size_t workers = 1;
  std::size_t batch_lines = 512;  // per worker
};

// Streams `in` through the cascade. Lines are processed in batches; within a
// batch workers take interleaved lines and the results are written back in
// input order, so the output does not depend on the worker count. Blank
// lines are skipped.
inline PipelineStats run_pipeline(std::istream& in, std::ostream& out,
                                  const FilterConfig& cfg, const VerbLexicon& lexicon,
                                  RunOptions opts = {}) {
  const std::size_t workers = std::max<std::size_t>(1, opts.workers);
  const std::size_t batch = std::max<std::size_t>(1, opts.batch_lines) * workers;

  PipelineStats stats;
  std::vector<std::string> lines;
  std::vector<std::size_t> line_numbers;
  std::vector<DecisionRecord> decisions;
  std::size_t line_no = 0;
  std::string line;

  auto flush = [&] {
    decisions.assign(lines.size(), {});
    auto work = [&](std::size_t w) {
      for (std::size_t i = w; i < lines.size(); i += workers)
        decisions[i] = decide_line(lines[i], line_numbers[i], cfg, lexicon);
    };
    if (workers == 1 || lines.size() < 2) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }
    for (const DecisionRecord& d : decisions) {
      stats.add(d);
      out << serialize_decision(d) << '\n';
    }
    lines.clear();
    line_numbers.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    lines.push_back(std::move(line));
    line_numbers.push_back(line_no);
    if (lines.size() >= batch) flush();
  }
  if (!lines.empty()) flush();
  return stats;
}

// ---------------------------------------------------------------------------
// Scene boundaries

enum class BoundaryMethod { ingested, histogram };

struct SceneBoundaryReport {
  std::vector<std::int64_t> boundaries;
  BoundaryMethod method = BoundaryMethod::ingested;
};

// Three per-channel histograms, each summing to 1.
struct ColorHistogram {
  std::int64_t frame_index = 0;
  std::array<std::vector<double>, 3> channels;
};

inline constexpr double kHistogramSumTolerance = 1e-6;

// Mean over channels of half the L1 distance between bin vectors, in [0,1].
inline double histogram_difference(const ColorHistogram& a, const ColorHistogram& b) {
  double total = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    double l1 = 0.0;
    for (std::size_t k = 0; k < a.channels[c].size(); ++k)
      l1 += std::abs(a.channels[c][k] - b.channels[c][k]);
    total += 0.5 * l1;
  }
  return total / 3.0;
}

// A boundary is reported at frame i when its histogram differs from frame
// i-1 by more than diff_threshold.
inline SceneBoundaryReport detect_scene_boundaries(std::span<const ColorHistogram> hists,
                                                   double diff_threshold = 0.3) {
  if (hists.empty()) throw InputError("no histograms");
  const std::size_t bins = hists.front().channels[0].size();
  for (std::size_t i = 0; i < hists.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& ch = hists[i].channels[c];
      if (ch.empty() || ch.size() != bins)
        throw InputError("histogram " + std::to_string(i) + ": inconsistent bin count");
      double sum = 0.0;
      for (double v : ch) {
        if (!(v >= 0.0)) throw InputError("histogram " + std::to_string(i) + ": negative bin");
        sum += v;
      }
      if (std::abs(sum - 1.0) > kHistogramSumTolerance)
        throw InputError("histogram " + std::to_string(i) + " channel " + std::to_string(c) +
                         " is not L1-normalized (sum " + detail::fmt("%.9g", sum) + ")");
    }
    if (i > 0 && hists[i].frame_index <= hists[i - 1].frame_index)
      throw InputError("histogram frame indices not strictly increasing");
  }
  SceneBoundaryReport rep;
  rep.method = BoundaryMethod::histogram;
  for (std::size_t i = 1; i < hists.size(); ++i) {
    if (histogram_difference(hists[i - 1], hists[i]) > diff_threshold)
      rep.boundaries.push_back(hists[i].frame_index);
  }
  return rep;
}

inline SceneBoundaryReport ingest_scene_boundaries(std::vector<std::int64_t> boundaries) {
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1])
      throw InputError("scene boundaries not strictly increasing");
  }
  return {std::move(boundaries), BoundaryMethod::ingested};
}

// One line: {"frame_index":int,"histogram":[[...],[...],[...]]}. frame_index
// defaults to the line's position.
inline ColorHistogram parse_histogram_line(std::string_view line, std::int64_t position) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    throw ParseError(static_cast<std::size_t>(position) + 1, e.what());
  }
  ColorHistogram h;
  h.frame_index = position;
  if (!doc.is_object()) throw ValidationError("$", "expected an object");
  if (auto it = doc.find("frame_index"); it != doc.end())
    h.frame_index = detail::require_integer(*it, "$.frame_index");
  const json& chans = detail::require_array(detail::require(doc, "histogram", "$"),
                                            "$.histogram");
  if (chans.size() != 3) throw ValidationError("$.histogram", "expected 3 channels");
  for (std::size_t c = 0; c < 3; ++c) {
    const std::string path = "$.histogram[" + std::to_string(c) + "]";
    for (const json& v : detail::require_array(chans[c], path))
      h.channels[c].push_back(detail::require_number(v, path));
  }
  return h;
}

inline std::string serialize_scene_report(const SceneBoundaryReport& rep) {
  using namespace json_text;
  std::string out = "{";
  append_key(out, "method");
  append_string(out, rep.method == BoundaryMethod::histogram ? "histogram" : "ingested");
  out += ',';
  append_key(out, "boundaries");
  out += '[';
  for (std::size_t i = 0; i < rep.boundaries.size(); ++i) {
    if (i) out += ',';
    append_integer(out, rep.boundaries[i]);
  }
  out += "]}";
  return out;
}

}  // namespace actionsieve
