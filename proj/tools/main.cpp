// Command line front end: each subcommand reads input files, runs one
// pipeline stage and writes its artifacts into --out. Exit codes: 0 on
// success, 2 for validation/configuration errors, 3 for numerical
// failures (no consensus, indefinite upgrade, divergence).

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "miccal/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "out";
  std::vector<std::string> inputs;
};

void add_common(CLI::App* cmd, CommonArgs* args, bool needs_input) {
  cmd->add_option("--config", args->config_path, "pipeline config JSON");
  cmd->add_option("--seed", args->seed, "master random seed")
      ->each([args](const std::string&) { args->seed_set = true; });
  cmd->add_option("--out", args->out_dir, "output directory");
  auto* in = cmd->add_option("--input", args->inputs,
                             "input file(s) for this stage");
  if (needs_input) in->required();
}

miccal::PipelineConfig load_config(const CommonArgs& args) {
  miccal::PipelineConfig config;
  if (!args.config_path.empty()) {
    config = miccal::PipelineConfig::from_file(args.config_path);
  }
  if (args.seed_set) config.seed = args.seed;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microphone array self-calibration from ambient sound"};
  app.require_subcommand(1);

  CommonArgs sim_args, detect_args, track_args, calib_args, mirror_args,
      eval_args, pipe_args;

  auto* sim = app.add_subcommand("simulate",
                                 "synthesize a scene, audio and TDOA truth");
  add_common(sim, &sim_args, false);

  auto* detect = app.add_subcommand("detect",
                                    "GCC-PHAT peaks from audio (--input wav...)");
  add_common(detect, &detect_args, true);

  auto* track = app.add_subcommand("track",
                                   "tracklets and matching matrix (--input peaks.csv)");
  add_common(track, &track_args, true);

  auto* calib = app.add_subcommand("calibrate",
                                   "offsets and geometry (--input tdoa.csv)");
  add_common(calib, &calib_args, true);

  auto* mirror = app.add_subcommand(
      "mirrors", "mirrored microphones and planes (--input peaks.csv scene.json)");
  add_common(mirror, &mirror_args, true);

  auto* eval = app.add_subcommand(
      "evaluate",
      "compare scenes (--input estimated.json truth.json [tdoa.csv [stages.json]])");
  add_common(eval, &eval_args, true);

  auto* pipe = app.add_subcommand("pipeline", "run all stages in sequence");
  add_common(pipe, &pipe_args, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      miccal::cmd_simulate(load_config(sim_args), sim_args.out_dir);
    } else if (detect->parsed()) {
      std::vector<fs::path> paths(detect_args.inputs.begin(),
                                  detect_args.inputs.end());
      miccal::cmd_detect(load_config(detect_args), paths, detect_args.out_dir);
    } else if (track->parsed()) {
      miccal::cmd_track(load_config(track_args), track_args.inputs.at(0),
                        track_args.out_dir);
    } else if (calib->parsed()) {
      miccal::cmd_calibrate(load_config(calib_args), calib_args.inputs.at(0),
                            calib_args.out_dir);
    } else if (mirror->parsed()) {
      if (mirror_args.inputs.size() < 2) {
        std::cerr << "mirrors needs --input peaks.csv scene.json\n";
        return 2;
      }
      miccal::cmd_mirrors(load_config(mirror_args), mirror_args.inputs[0],
                          mirror_args.inputs[1], mirror_args.out_dir);
    } else if (eval->parsed()) {
      if (eval_args.inputs.size() < 2) {
        std::cerr << "evaluate needs --input estimated.json truth.json\n";
        return 2;
      }
      std::optional<fs::path> tdoa, stages;
      if (eval_args.inputs.size() >= 3) tdoa = eval_args.inputs[2];
      if (eval_args.inputs.size() >= 4) stages = eval_args.inputs[3];
      miccal::cmd_evaluate(load_config(eval_args), eval_args.inputs[0],
                           eval_args.inputs[1], eval_args.out_dir, tdoa,
                           stages);
    } else if (pipe->parsed()) {
      miccal::cmd_pipeline(load_config(pipe_args), pipe_args.out_dir);
    }
  } catch (const miccal::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return miccal::is_validation_error(e.code()) ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
