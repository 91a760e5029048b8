// actionsieve: batch clip filtering and scene-boundary checks.
//
//   actionsieve run --input detections.jsonl --output decisions.jsonl
//                   --stats stats.json [--config filter.cfg] [--workers N]
//                   [--threshold key=value ...] [--lexicon verbs.txt]
//   actionsieve scenes --histograms hists.jsonl [--diff-threshold X]
//
// Exit status is 1 for startup errors (bad arguments, unreadable files,
// invalid config) and 0 otherwise; per-clip failures never change it.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "actionsieve/actionsieve.hpp"

#ifndef ACTIONSIEVE_DEFAULT_LEXICON
#define ACTIONSIEVE_DEFAULT_LEXICON "data/verb_lexicon.txt"
#endif

namespace {

using namespace actionsieve;

struct RunArgs {
  std::string input;
  std::string output;
  std::string stats;
  std::string config;
  std::string lexicon = ACTIONSIEVE_DEFAULT_LEXICON;
  std::size_t workers = 1;
  std::vector<std::string> thresholds;
};

struct SceneArgs {
  std::string histograms;
  double diff_threshold = 0.3;
};

int do_run(const RunArgs& args) {
  FilterConfig cfg;
  if (!args.config.empty()) {
    std::ifstream cf(args.config);
    if (!cf) throw InputError("cannot open config: " + args.config);
    cfg = parse_config(cf);
  }
  for (const auto& t : args.thresholds) apply_config_assignment(cfg, t);
  cfg.validate();

  const VerbLexicon lexicon = VerbLexicon::from_file(args.lexicon);

  std::ifstream in(args.input);
  if (!in) throw InputError("cannot open input: " + args.input);
  std::ofstream out(args.output, std::ios::binary);
  if (!out) throw InputError("cannot open output: " + args.output);
  std::ofstream stats_out(args.stats, std::ios::binary);
  if (!stats_out) throw InputError("cannot open stats output: " + args.stats);

  const PipelineStats stats = run_pipeline(in, out, cfg, lexicon, {args.workers});
  stats_out << emit_stats_report(stats, ReportFormat::json);
  std::cout << emit_stats_report(stats, ReportFormat::text);
  return 0;
}

int do_scenes(const SceneArgs& args) {
  std::ifstream in(args.histograms);
  if (!in) throw InputError("cannot open histograms: " + args.histograms);
  std::vector<ColorHistogram> hists;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    hists.push_back(parse_histogram_line(line, static_cast<std::int64_t>(hists.size())));
  }
  std::cout << serialize_scene_report(detect_scene_boundaries(hists, args.diff_threshold))
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-action clip filtering pipeline"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Filter a detection JSONL file");
  run_cmd->add_option("--input", run.input, "Detection JSONL")->required();
  run_cmd->add_option("--output", run.output, "Decision JSONL to write")->required();
  run_cmd->add_option("--stats", run.stats, "Stats JSON to write")->required();
  run_cmd->add_option("--config", run.config, "key = value filter config");
  run_cmd->add_option("--workers", run.workers, "Worker threads")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--threshold", run.thresholds, "Config override key=value");
  run_cmd->add_option("--lexicon", run.lexicon, "Verb lexicon file");

  SceneArgs scenes;
  auto* scenes_cmd = app.add_subcommand("scenes", "Detect scene cuts from color histograms");
  scenes_cmd->add_option("--histograms", scenes.histograms, "Histogram JSONL")->required();
  scenes_cmd->add_option("--diff-threshold", scenes.diff_threshold, "Cut threshold in [0,1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) return do_run(run);
    if (*scenes_cmd) return do_scenes(scenes);
  } catch (const std::exception& e) {
    std::cerr << "actionsieve: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
