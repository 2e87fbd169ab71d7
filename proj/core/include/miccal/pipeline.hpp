#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "miccal/config.hpp"
#include "miccal/geometry.hpp"
#include "miccal/io.hpp"
#include "miccal/model.hpp"
#include "miccal/offsets.hpp"
#include "miccal/sim.hpp"
#include "miccal/tracking.hpp"

namespace miccal {

// ---- In-memory stage engines (the cmd_* wrappers stage files only) ----

struct SimulationOutput {
  Scene scene;
  SynthTdoa tdoa;
  MultichannelClip audio;  // empty channels when audio emission is off
};

SimulationOutput simulate_experiment(const PipelineConfig& config);

std::vector<Peak> detect_peaks(const std::vector<std::vector<double>>& channels,
                               const PipelineConfig& config);

TrackingResult track_peaks(const std::vector<Peak>& peaks,
                           int mic_count, const PipelineConfig& config);

struct CalibrationResult {
  Scene scene;  // estimated microphones, event positions, offsets
  OffsetSolution offset_solution;
  std::vector<Eigen::Index> final_inliers;
  BundleResult bundle;
  double ransac_inlier_count = 0;
};

CalibrationResult calibrate_tdoa(const TdoaMatrix& tdoa,
                                 const PipelineConfig& config);

struct MirrorOutput {
  std::vector<MirrorEstimate> estimates;
  std::vector<Plane> planes;
};

MirrorOutput find_mirrors(const std::vector<Peak>& peaks, const Scene& estimated,
                          const PipelineConfig& config);

struct StageCounts {
  std::string name;
  int inliers = 0;
  int outliers = 0;
};

struct EvaluationReport {
  double alignment_rmse = 0.0;
  bool reflected = false;
  std::vector<double> per_mic_error;
  std::vector<double> plane_normal_error_deg;  // per matched truth plane
  std::vector<double> plane_offset_error;
  std::vector<double> residual_histogram_edges;
  std::vector<int> residual_histogram_counts;
  double residual_rms = 0.0;
  std::vector<StageCounts> stage_table;
  std::string to_json() const;
};

EvaluationReport evaluate_scenes(
    const Scene& estimated, const Scene& truth,
    const TdoaMatrix* tdoa = nullptr,
    const TrackingStages* stages = nullptr,
    const FrameSpec* spec = nullptr, double label_tol = 0.05);

// ---- File-based stages (each reads and writes files only) ----

void cmd_simulate(const PipelineConfig& config,
                  const std::filesystem::path& out_dir);
void cmd_detect(const PipelineConfig& config,
                const std::vector<std::filesystem::path>& audio_inputs,
                const std::filesystem::path& out_dir);
void cmd_track(const PipelineConfig& config,
               const std::filesystem::path& peaks_csv,
               const std::filesystem::path& out_dir);
void cmd_calibrate(const PipelineConfig& config,
                   const std::filesystem::path& tdoa_csv,
                   const std::filesystem::path& out_dir);
void cmd_mirrors(const PipelineConfig& config,
                 const std::filesystem::path& peaks_csv,
                 const std::filesystem::path& scene_est_json,
                 const std::filesystem::path& out_dir);
void cmd_evaluate(const PipelineConfig& config,
                  const std::filesystem::path& estimated_json,
                  const std::filesystem::path& truth_json,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& tdoa_csv = {},
                  const std::optional<std::filesystem::path>& stages_json = {});
void cmd_pipeline(const PipelineConfig& config,
                  const std::filesystem::path& out_dir);

// Tracking stage samples as JSON (stages.json schema).
std::string stages_to_json(const TrackingStages& stages);
TrackingStages stages_from_json(const std::string& text);

}  // namespace miccal
