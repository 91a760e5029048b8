#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "actionsieve/pipeline.hpp"
#include "support/synthetic.hpp"

namespace actionsieve {
namespace {

using testing::Rng;

const VerbLexicon& lexicon() {
  static const VerbLexicon lex = VerbLexicon::from_file(ACTIONSIEVE_DEFAULT_LEXICON);
  return lex;
}

std::string corpus_jsonl(std::uint64_t seed, int count) {
  std::string out;
  for (const auto& c : testing::planted_corpus(seed, count)) {
    out += canonical_serialize(c.record);
    out += '\n';
  }
  return out;
}

struct RunResult {
  std::string output;
  PipelineStats stats;
};

RunResult run(const std::string& input, std::size_t workers = 1, FilterConfig cfg = {},
              std::size_t batch_lines = 512) {
  std::istringstream in(input);
  std::ostringstream out;
  RunResult r;
  r.stats = run_pipeline(in, out, cfg, lexicon(), {workers, batch_lines});
  r.output = out.str();
  return r;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

bool conserved(const PipelineStats& s) {
  return s.input_count == s.final_pass() + s.metadata.failed() + s.existence.failed() +
                              s.action.failed() + s.parse_errors;
}

TEST(RunPipeline, EmptyInput) {
  const auto r = run("");
  EXPECT_TRUE(r.output.empty());
  EXPECT_EQ(r.stats, PipelineStats{});
  EXPECT_EQ(r.stats.final_yield(), 0.0);
}

TEST(RunPipeline, PlantedYield) {
  const auto r = run(corpus_jsonl(1, 10));
  const auto out = lines_of(r.output);
  ASSERT_EQ(out.size(), 10u);
  int finals = 0;
  for (const auto& l : out) finals += l.find("\"final\":true") != std::string::npos;
  EXPECT_EQ(finals, 3);
  EXPECT_EQ(r.stats.final_pass(), 3u);
  EXPECT_DOUBLE_EQ(r.stats.final_yield(), 0.3);
}

TEST(RunPipeline, WorkerCountDoesNotChangeOutput) {
  const std::string input = corpus_jsonl(2, 120);
  const auto one = run(input, 1);
  for (std::size_t w : {2u, 3u, 8u}) {
    const auto many = run(input, w, {}, 7);
    EXPECT_EQ(many.output, one.output) << w << " workers";
    EXPECT_EQ(emit_stats_report(many.stats, ReportFormat::json),
              emit_stats_report(one.stats, ReportFormat::json));
  }
}

TEST(RunPipeline, OutputOrderFollowsInput) {
  const auto corpus = testing::planted_corpus(3, 40);
  std::string input;
  for (const auto& c : corpus) input += canonical_serialize(c.record) + "\n";
  const auto out = lines_of(run(input, 8, {}, 2).output);
  ASSERT_EQ(out.size(), corpus.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_NE(out[i].find("\"clip_id\":\"" + corpus[i].record.meta.clip_id + "\""),
              std::string::npos);
  }
}

TEST(RunPipeline, ParseErrorsDoNotAbort) {
  std::string input = corpus_jsonl(4, 5);
  input += "{not json\n";
  input += R"({"video_id":"vx","clip_id":"cx","meta":{}})" "\n";
  input += "\n   \n";
  input += corpus_jsonl(5, 2);
  const auto r = run(input, 4);
  const auto out = lines_of(r.output);
  ASSERT_EQ(out.size(), 9u);
  EXPECT_EQ(r.stats.parse_errors, 2u);
  EXPECT_NE(out[5].find("\"stage\":\"parse\""), std::string::npos);
  EXPECT_NE(out[5].find("line 6"), std::string::npos) << out[5];
  EXPECT_NE(out[6].find("\"clip_id\":\"cx\""), std::string::npos);
  EXPECT_TRUE(conserved(r.stats));
}

TEST(RunPipeline, StatsConservation) {
  for (std::uint64_t seed : {6u, 7u, 8u}) {
    const auto r = run(corpus_jsonl(seed, 100) + "garbage\n", 3);
    EXPECT_EQ(r.stats.input_count, 101u);
    EXPECT_TRUE(conserved(r.stats));
    EXPECT_EQ(r.stats.action.failed(),
              r.stats.static_motion + r.stats.affine_motion + r.stats.undecidable);
  }
}

TEST(RunPipeline, SurvivorsPassAgain) {
  const auto corpus = testing::planted_corpus(9, 200);
  std::string input;
  for (const auto& c : corpus) input += canonical_serialize(c.record) + "\n";
  const auto out = lines_of(run(input).output);
  std::string survivors;
  std::size_t n = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].find("\"final\":true") != std::string::npos) {
      survivors += canonical_serialize(corpus[i].record) + "\n";
      ++n;
    }
  }
  ASSERT_GT(n, 0u);
  const auto again = run(survivors, 4);
  EXPECT_EQ(again.stats.final_pass(), n);
}

TEST(SerializeDecision, Shape) {
  Rng rng(10);
  const auto clip = testing::planted_clip(rng, testing::PlantedKind::static_humans, 0).record;
  const auto d = make_decision(clip.meta, run_cascade(clip, {}, lexicon()));
  const auto j = nlohmann::json::parse(serialize_decision(d));
  EXPECT_EQ(j.at("final"), false);
  ASSERT_EQ(j.at("verdicts").size(), 3u);
  EXPECT_EQ(j.at("verdicts")[2].at("stage"), "action_motion");
  EXPECT_EQ(j.at("scores").at("action_motion"), 0.0);
  EXPECT_TRUE(j.at("scores").contains("action_affine"));
}

// ---------------------------------------------------------------------------
// Reports

TEST(StatsReport, ZeroInput) {
  const std::string text = emit_stats_report({}, ReportFormat::text);
  EXPECT_NE(text.find("final yield"), std::string::npos);
  EXPECT_NE(text.find("0.0000%"), std::string::npos);
  const auto j = nlohmann::json::parse(emit_stats_report({}, ReportFormat::json));
  EXPECT_EQ(j.at("input_count"), 0);
  EXPECT_EQ(j.at("final_yield"), 0.0);
  for (const auto& st : j.at("stages")) EXPECT_EQ(st.at("attempted"), 0);
}

TEST(StatsReport, YieldPercentFormatting) {
  EXPECT_EQ(format_percent(0.012), "1.2000%");
  PipelineStats s;
  s.input_count = 1000;
  s.metadata = {1000, 12};
  s.existence = {12, 12};
  s.action = {12, 12};
  EXPECT_DOUBLE_EQ(s.final_yield(), 0.012);
  EXPECT_NE(emit_stats_report(s, ReportFormat::text).find("1.2000%"), std::string::npos);
  EXPECT_NE(emit_stats_report(s, ReportFormat::json).find("\"1.2000%\""), std::string::npos);
}

TEST(StatsReport, JsonRoundTrip) {
  const auto r = run(corpus_jsonl(11, 60) + "oops\n");
  const std::string json = emit_stats_report(r.stats, ReportFormat::json);
  EXPECT_EQ(stats_from_json(json), r.stats);
  EXPECT_THROW(stats_from_json("{"), ParseError);
  EXPECT_THROW(stats_from_json("{}"), ValidationError);
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, ParsesFileAndOverrides) {
  std::istringstream in(
      "# thresholds\n"
      "l1_threshold = 0.1\n"
      "  max_humans=3  \n"
      "\n"
      "require_all_tracklets = true\n"
      "motion_aggregation = every_pair\n"
      "fit_scope = per_tracklet\n");
  FilterConfig cfg = parse_config(in);
  EXPECT_EQ(cfg.l1_threshold, 0.1);
  EXPECT_EQ(cfg.max_humans, 3);
  EXPECT_TRUE(cfg.require_all_tracklets);
  EXPECT_EQ(cfg.motion_aggregation, MotionAggregation::every_pair);
  EXPECT_EQ(cfg.fit_scope, FitScope::per_tracklet);
  EXPECT_EQ(cfg.min_short_side, 360);
  apply_config_assignment(cfg, "l1_threshold=0.2");
  EXPECT_EQ(cfg.l1_threshold, 0.2);
}

TEST(Config, Errors) {
  FilterConfig cfg;
  EXPECT_THROW(apply_config_assignment(cfg, "nope=1"), InputError);
  EXPECT_THROW(apply_config_assignment(cfg, "l1_threshold"), InputError);
  EXPECT_THROW(apply_config_assignment(cfg, "l1_threshold=abc"), InputError);
  EXPECT_THROW(apply_config_assignment(cfg, "max_humans=2.5"), InputError);
  EXPECT_THROW(apply_config_assignment(cfg, "fit_scope=global"), InputError);
  std::istringstream in("iou_min = 0.3\nbogus = 1\n");
  try {
    parse_config(in);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("config line 2"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Scene boundaries

constexpr std::size_t kBins = 32;

// Peaked per-channel histogram, one bump per channel.
ColorHistogram scene_histogram(Rng& rng, std::int64_t index) {
  ColorHistogram h;
  h.frame_index = index;
  for (auto& ch : h.channels) {
    const double centre = testing::uniform(rng, 0, kBins - 1);
    const double width = testing::uniform(rng, 1.0, 3.0);
    ch.resize(kBins);
    double sum = 0.0;
    for (std::size_t k = 0; k < kBins; ++k) {
      const double z = (static_cast<double>(k) - centre) / width;
      ch[k] = std::exp(-0.5 * z * z) + 1e-3;
      sum += ch[k];
    }
    for (double& v : ch) v /= sum;
  }
  return h;
}

ColorHistogram mix(const ColorHistogram& a, const ColorHistogram& b, double t,
                   std::int64_t index) {
  ColorHistogram h;
  h.frame_index = index;
  for (std::size_t c = 0; c < 3; ++c) {
    h.channels[c].resize(kBins);
    for (std::size_t k = 0; k < kBins; ++k)
      h.channels[c][k] = (1 - t) * a.channels[c][k] + t * b.channels[c][k];
  }
  return h;
}

// Small multiplicative flicker, renormalized.
ColorHistogram jitter(Rng& rng, ColorHistogram h) {
  for (auto& ch : h.channels) {
    double sum = 0.0;
    for (double& v : ch) {
      v *= testing::uniform(rng, 0.9, 1.1);
      sum += v;
    }
    for (double& v : ch) v /= sum;
  }
  return h;
}

TEST(SceneBoundaries, ConstantHistograms) {
  Rng rng(50);
  const auto h = scene_histogram(rng, 0);
  std::vector<ColorHistogram> hs;
  for (int i = 0; i < 20; ++i) {
    hs.push_back(h);
    hs.back().frame_index = i;
  }
  const auto rep = detect_scene_boundaries(hs);
  EXPECT_TRUE(rep.boundaries.empty());
  EXPECT_EQ(rep.method, BoundaryMethod::histogram);
}

TEST(SceneBoundaries, SingleStep) {
  Rng rng(51);
  ColorHistogram a, b;
  a.channels = b.channels = {std::vector<double>(kBins, 0.0), std::vector<double>(kBins, 0.0),
                             std::vector<double>(kBins, 0.0)};
  for (auto& ch : a.channels) ch[0] = 1.0;
  for (auto& ch : b.channels) ch[kBins - 1] = 1.0;
  std::vector<ColorHistogram> hs;
  for (int i = 0; i < 12; ++i) {
    hs.push_back(i < 7 ? a : b);
    hs.back().frame_index = 100 + i;
  }
  EXPECT_EQ(detect_scene_boundaries(hs).boundaries, (std::vector<std::int64_t>{107}));
}

TEST(SceneBoundaries, CutsVersusFades) {
  Rng rng(52);
  int cuts = 0, cuts_found = 0, negatives = 0, false_pos = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ColorHistogram> hs;
    std::vector<bool> is_cut;
    auto scene = scene_histogram(rng, 0);
    std::int64_t idx = 0;
    for (int s = 0; s < 4; ++s) {
      for (int f = 0; f < 8; ++f) {
        hs.push_back(jitter(rng, scene));
        hs.back().frame_index = idx++;
        is_cut.push_back(false);
      }
      auto next = scene_histogram(rng, 0);
      if (rng() & 1) {
        // hard cut: the next frame belongs to the new scene
        hs.push_back(jitter(rng, next));
        hs.back().frame_index = idx++;
        is_cut.push_back(true);
      } else {
        for (int f = 1; f <= 12; ++f) {
          hs.push_back(mix(scene, next, f / 12.0, idx++));
          is_cut.push_back(false);
        }
      }
      scene = next;
    }
    const auto rep = detect_scene_boundaries(hs);
    std::set<std::int64_t> found(rep.boundaries.begin(), rep.boundaries.end());
    for (std::size_t i = 1; i < hs.size(); ++i) {
      const bool flagged = found.count(hs[i].frame_index) > 0;
      if (is_cut[i]) {
        ++cuts;
        cuts_found += flagged;
      } else {
        ++negatives;
        false_pos += flagged;
      }
    }
  }
  ASSERT_GT(cuts, 100);
  EXPECT_GE(cuts_found, 0.95 * cuts) << cuts_found << "/" << cuts;
  EXPECT_LE(false_pos, 0.05 * negatives) << false_pos << "/" << negatives;
}

TEST(SceneBoundaries, InputErrors) {
  ColorHistogram h;
  h.channels = {std::vector<double>{0.5, 0.6}, std::vector<double>{0.5, 0.5},
                std::vector<double>{0.5, 0.5}};
  EXPECT_THROW(detect_scene_boundaries(std::vector<ColorHistogram>{h}), InputError);
  h.channels[0] = {0.5, 0.5};
  std::vector<ColorHistogram> two{h, h};
  EXPECT_THROW(detect_scene_boundaries(two), InputError);  // frame indices not increasing
  two[1].frame_index = 1;
  two[1].channels[2] = {1.0};
  EXPECT_THROW(detect_scene_boundaries(two), InputError);
  EXPECT_THROW(detect_scene_boundaries({}), InputError);
}

TEST(SceneBoundaries, ParseAndSerialize) {
  const auto h = parse_histogram_line(R"({"histogram":[[1,0],[0,1],[0.5,0.5]]})", 4);
  EXPECT_EQ(h.frame_index, 4);
  EXPECT_EQ(h.channels[2][1], 0.5);
  EXPECT_THROW(parse_histogram_line(R"({"histogram":[[1],[1]]})", 0), ValidationError);
  EXPECT_THROW(parse_histogram_line("{", 0), ParseError);
  EXPECT_EQ(serialize_scene_report(ingest_scene_boundaries({3, 9})),
            R"({"method":"ingested","boundaries":[3,9]})");
  EXPECT_THROW(ingest_scene_boundaries({3, 3}), InputError);
}

// ---------------------------------------------------------------------------
// Command-line tool

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("actionsieve_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
  }

  static std::string read(const std::string& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  int exec(const std::string& args) const {
    const std::string cmd = std::string(ACTIONSIEVE_CLI) + " " + args + " > " +
                            path("stdout.txt") + " 2> " + path("stderr.txt");
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  fs::path dir_;
};

TEST_F(Cli, RunWritesDecisionsAndStats) {
  write("in.jsonl", corpus_jsonl(60, 30) + "broken line\n");
  write("cfg.txt", "l1_threshold = 0.085\n");
  ASSERT_EQ(exec("run --input " + path("in.jsonl") + " --output " + path("out1.jsonl") +
                 " --stats " + path("stats1.json") + " --config " + path("cfg.txt") +
                 " --workers 1"),
            0)
      << read(path("stderr.txt"));
  ASSERT_EQ(exec("run --input " + path("in.jsonl") + " --output " + path("out8.jsonl") +
                 " --stats " + path("stats8.json") + " --workers 8"),
            0);
  EXPECT_EQ(lines_of(read(path("out1.jsonl"))).size(), 31u);
  EXPECT_EQ(read(path("out1.jsonl")), read(path("out8.jsonl")));
  EXPECT_EQ(read(path("stats1.json")), read(path("stats8.json")));
  EXPECT_EQ(stats_from_json(read(path("stats1.json"))).parse_errors, 1u);
  EXPECT_NE(read(path("stdout.txt")).find("final yield"), std::string::npos);
}

TEST_F(Cli, ThresholdOverride) {
  write("in.jsonl", corpus_jsonl(61, 20));
  ASSERT_EQ(exec("run --input " + path("in.jsonl") + " --output " + path("o.jsonl") +
                 " --stats " + path("s.json") + " --threshold l1_threshold=100"),
            0);
  EXPECT_EQ(stats_from_json(read(path("s.json"))).final_pass(), 0u);
}

TEST_F(Cli, StartupErrorsExitOne) {
  EXPECT_EQ(exec("run --input " + path("missing.jsonl") + " --output " + path("o") +
                 " --stats " + path("s")),
            1);
  write("in.jsonl", "");
  EXPECT_EQ(exec("run --input " + path("in.jsonl") + " --output " + path("o") + " --stats " +
                 path("s") + " --threshold bogus=1"),
            1);
  EXPECT_EQ(exec("run --input " + path("in.jsonl")), 1);
  EXPECT_EQ(exec("frobnicate"), 1);
}

TEST_F(Cli, Scenes) {
  write("h.jsonl",
        "{\"histogram\":[[1,0],[1,0],[1,0]]}\n"
        "{\"histogram\":[[1,0],[1,0],[1,0]]}\n"
        "{\"histogram\":[[0,1],[0,1],[0,1]]}\n");
  ASSERT_EQ(exec("scenes --histograms " + path("h.jsonl")), 0) << read(path("stderr.txt"));
  EXPECT_NE(read(path("stdout.txt")).find(R"("boundaries":[2])"), std::string::npos);
  write("bad.jsonl", "{\"histogram\":[[2,0],[1,0],[1,0]]}\n");
  EXPECT_EQ(exec("scenes --histograms " + path("bad.jsonl")), 1);
}

}  // namespace
}  // namespace actionsieve
