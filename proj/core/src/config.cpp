#include "miccal/config.hpp"

#include <json.hpp>

#include "miccal/io.hpp"

namespace miccal {

using nlohmann::json;

FrameSpec PipelineConfig::frame_spec() const {
  FrameSpec spec;
  spec.frame_len = frame_len;
  spec.hop = hop;
  spec.sample_rate = sample_rate;
  spec.speed_of_sound = speed_of_sound;
  spec.room_diameter = room_diameter;
  return spec;
}

MinimalCase PipelineConfig::resolve_case(int m_avail, int n_avail) const {
  if (solver_case == "auto") return choose_case(m_avail, n_avail, solver_rank);
  if (solver_case == "9r5s") return minimal_case(3, 9, 5);
  if (solver_case == "7r6s") return minimal_case(3, 7, 6);
  if (solver_case == "6r8s") return minimal_case(3, 6, 8);
  if (solver_case == "7r4s") return minimal_case(2, 7, 4);
  if (solver_case == "5r6s") return minimal_case(2, 5, 6);
  raise(ErrorCode::ConfigInvalid, "unknown solver_case " + solver_case);
}

void PipelineConfig::validate() const {
  frame_spec().validate();
  if (peak_k < 1) raise(ErrorCode::ConfigInvalid, "peak_k must be >= 1");
  if (peak_threshold < 0.0 || peak_threshold > 1.0) {
    raise(ErrorCode::ConfigInvalid, "peak_threshold must be in [0, 1]");
  }
  if (solver_rank != 2 && solver_rank != 3) {
    raise(ErrorCode::ConfigInvalid, "solver_rank must be 2 or 3");
  }
  if (ransac.epsilon <= 0.0 || ransac.iterations < 1) {
    raise(ErrorCode::ConfigInvalid, "ransac parameters out of range");
  }
  if (sim.mic_count < 1 || sim.room.size() != 3) {
    raise(ErrorCode::ConfigInvalid, "sim config out of range");
  }
  for (const auto& p : sim.planes) {
    if (p != "floor" && p != "ceiling" && p != "wall_x0" && p != "wall_x1" &&
        p != "wall_y0" && p != "wall_y1") {
      raise(ErrorCode::ConfigInvalid, "unknown plane name " + p);
    }
  }
  (void)resolve_case(9, 8);  // name check only
}

std::string PipelineConfig::to_json() const {
  json j;
  j["sample_rate"] = sample_rate;
  j["speed_of_sound"] = speed_of_sound;
  j["frame_len"] = frame_len;
  j["hop"] = hop;
  j["room_diameter"] = room_diameter;
  j["peak_k"] = peak_k;
  j["peak_threshold"] = peak_threshold;
  j["detect_all_pairs"] = detect_all_pairs;
  j["seed"] = seed;
  j["solver_rank"] = solver_rank;
  j["solver_case"] = solver_case;

  j["tracking"] = {{"window", tracking.window},
                   {"inlier_tol", tracking.inlier_tol},
                   {"ransac_iterations", tracking.ransac_iterations},
                   {"min_inliers", tracking.min_inliers},
                   {"line_tol", tracking.line_tol},
                   {"merge_gap_max", tracking.merge_gap_max},
                   {"smooth_span", tracking.smooth_span},
                   {"interp_gap_max", tracking.interp_gap_max},
                   {"min_rows", tracking.min_rows},
                   {"n_max", tracking.n_max}};

  j["ransac"] = {{"epsilon", ransac.epsilon},
                 {"iterations", ransac.iterations},
                 {"min_count", ransac.min_count},
                 {"solver_starts", ransac.solver.starts}};

  j["mirrors"] = {{"cluster_tol", mirrors.cluster_tol},
                  {"inlier_tol", mirrors.inlier_tol},
                  {"quorum_slack", mirrors.quorum_slack},
                  {"direct_gate", mirrors.direct_gate},
                  {"ransac_iterations", mirrors.ransac_iterations},
                  {"min_inliers", mirrors.min_inliers},
                  {"max_mirrors", mirrors.max_mirrors}};

  j["sim"] = {{"mic_count", sim.mic_count},
              {"room", sim.room},
              {"mic_cluster_radius", sim.mic_cluster_radius},
              {"source_orbit_radius", sim.source_orbit_radius},
              {"duration_s", sim.duration_s},
              {"snr_db", sim.snr_db},
              {"reflection_order", sim.reflection_order},
              {"reflection_coeff", sim.reflection_coeff},
              {"planes", sim.planes},
              {"emit_audio", sim.emit_audio},
              {"tdoa_events", sim.tdoa_events},
              {"tdoa_sigma", sim.tdoa_sigma},
              {"tdoa_outlier_rate", sim.tdoa_outlier_rate},
              {"tdoa_missing_rate", sim.tdoa_missing_rate},
              {"tdoa_outlier_magnitude", sim.tdoa_outlier_magnitude}};
  return j.dump(2) + "\n";
}

namespace {

template <typename T>
void maybe(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::SchemaError, std::string("config json: ") + e.what());
  }
  PipelineConfig c;
  try {
    maybe(j, "sample_rate", &c.sample_rate);
    maybe(j, "speed_of_sound", &c.speed_of_sound);
    maybe(j, "frame_len", &c.frame_len);
    maybe(j, "hop", &c.hop);
    maybe(j, "room_diameter", &c.room_diameter);
    maybe(j, "peak_k", &c.peak_k);
    maybe(j, "peak_threshold", &c.peak_threshold);
    maybe(j, "detect_all_pairs", &c.detect_all_pairs);
    maybe(j, "seed", &c.seed);
    maybe(j, "solver_rank", &c.solver_rank);
    maybe(j, "solver_case", &c.solver_case);
    if (j.contains("tracking")) {
      const json& t = j["tracking"];
      maybe(t, "window", &c.tracking.window);
      maybe(t, "inlier_tol", &c.tracking.inlier_tol);
      maybe(t, "ransac_iterations", &c.tracking.ransac_iterations);
      maybe(t, "min_inliers", &c.tracking.min_inliers);
      maybe(t, "line_tol", &c.tracking.line_tol);
      maybe(t, "merge_gap_max", &c.tracking.merge_gap_max);
      maybe(t, "smooth_span", &c.tracking.smooth_span);
      maybe(t, "interp_gap_max", &c.tracking.interp_gap_max);
      maybe(t, "min_rows", &c.tracking.min_rows);
      maybe(t, "n_max", &c.tracking.n_max);
    }
    if (j.contains("ransac")) {
      const json& r = j["ransac"];
      maybe(r, "epsilon", &c.ransac.epsilon);
      maybe(r, "iterations", &c.ransac.iterations);
      maybe(r, "min_count", &c.ransac.min_count);
      maybe(r, "solver_starts", &c.ransac.solver.starts);
    }
    if (j.contains("mirrors")) {
      const json& mj = j["mirrors"];
      maybe(mj, "cluster_tol", &c.mirrors.cluster_tol);
      maybe(mj, "inlier_tol", &c.mirrors.inlier_tol);
      maybe(mj, "quorum_slack", &c.mirrors.quorum_slack);
      maybe(mj, "direct_gate", &c.mirrors.direct_gate);
      maybe(mj, "ransac_iterations", &c.mirrors.ransac_iterations);
      maybe(mj, "min_inliers", &c.mirrors.min_inliers);
      maybe(mj, "max_mirrors", &c.mirrors.max_mirrors);
    }
    if (j.contains("sim")) {
      const json& s = j["sim"];
      maybe(s, "mic_count", &c.sim.mic_count);
      maybe(s, "room", &c.sim.room);
      maybe(s, "mic_cluster_radius", &c.sim.mic_cluster_radius);
      maybe(s, "source_orbit_radius", &c.sim.source_orbit_radius);
      maybe(s, "duration_s", &c.sim.duration_s);
      maybe(s, "snr_db", &c.sim.snr_db);
      maybe(s, "reflection_order", &c.sim.reflection_order);
      maybe(s, "reflection_coeff", &c.sim.reflection_coeff);
      maybe(s, "planes", &c.sim.planes);
      maybe(s, "emit_audio", &c.sim.emit_audio);
      maybe(s, "tdoa_events", &c.sim.tdoa_events);
      maybe(s, "tdoa_sigma", &c.sim.tdoa_sigma);
      maybe(s, "tdoa_outlier_rate", &c.sim.tdoa_outlier_rate);
      maybe(s, "tdoa_missing_rate", &c.sim.tdoa_missing_rate);
      maybe(s, "tdoa_outlier_magnitude", &c.sim.tdoa_outlier_magnitude);
    }
  } catch (const json::exception& e) {
    raise(ErrorCode::SchemaError, std::string("config json: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  return from_json(read_text_file(path));
}

}  // namespace miccal
