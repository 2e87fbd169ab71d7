#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "miccal/mirrors.hpp"
#include "miccal/offsets.hpp"
#include "miccal/sigproc.hpp"
#include "miccal/tracking.hpp"

namespace miccal {

struct SimulateConfig {
  int mic_count = 8;
  std::vector<double> room = {5.0, 6.0, 3.0};  // meters
  double mic_cluster_radius = 1.25;
  double source_orbit_radius = 1.8;
  double duration_s = 20.0;
  double snr_db = 20.0;
  int reflection_order = 1;
  double reflection_coeff = 0.7;
  std::vector<std::string> planes;  // floor, ceiling, wall_x0/x1/y0/y1
  bool emit_audio = true;
  // direct ground-truth TDOA matrix emission
  int tdoa_events = 129;
  double tdoa_sigma = 0.0;
  double tdoa_outlier_rate = 0.0;
  double tdoa_missing_rate = 0.0;
  double tdoa_outlier_magnitude = 1.0;
};

struct PipelineConfig {
  double sample_rate = 96000.0;   // Hz
  double speed_of_sound = 343.0;  // m/s
  int frame_len = 2048;
  int hop = 1000;
  double room_diameter = 20.0;
  int peak_k = 4;
  double peak_threshold = kDefaultPeakThreshold;
  bool detect_all_pairs = true;
  TrackingParams tracking;
  RansacOffsetOptions ransac;
  int solver_rank = 3;             // 2 when the microphones are planar
  std::string solver_case = "auto";
  MirrorParams mirrors;
  SimulateConfig sim;
  std::uint64_t seed = 0;

  FrameSpec frame_spec() const;
  MinimalCase resolve_case(int m_avail, int n_avail) const;
  void validate() const;

  std::string to_json() const;
  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig from_file(const std::filesystem::path& path);
};

}  // namespace miccal
