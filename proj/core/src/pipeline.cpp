#include "miccal/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "miccal/mirrors.hpp"
#include "miccal/rng.hpp"
#include "miccal/sim.hpp"

namespace miccal {

using nlohmann::json;

namespace {

Plane named_plane(const std::string& name, const std::vector<double>& room) {
  if (name == "floor") return Plane(Vec3(0, 0, 1), 0.0);
  if (name == "ceiling") return Plane(Vec3(0, 0, 1), room[2]);
  if (name == "wall_x0") return Plane(Vec3(1, 0, 0), 0.0);
  if (name == "wall_x1") return Plane(Vec3(1, 0, 0), room[0]);
  if (name == "wall_y0") return Plane(Vec3(0, 1, 0), 0.0);
  if (name == "wall_y1") return Plane(Vec3(0, 1, 0), room[1]);
  raise(ErrorCode::ConfigInvalid, "unknown plane name " + name);
}

}  // namespace

SimulationOutput simulate_experiment(const PipelineConfig& config) {
  config.validate();
  const auto& sc = config.sim;
  SeedSplitter split(config.seed);
  std::mt19937_64 rng(split.derive(51));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Vec3 room(sc.room[0], sc.room[1], sc.room[2]);
  const Vec3 center = 0.5 * room;

  SimulationOutput out;
  out.scene.speed_of_sound = config.speed_of_sound;

  // Microphones scattered in a ball around the room center.
  for (int i = 0; i < sc.mic_count; ++i) {
    Vec3 p;
    do {
      p = Vec3(gauss(rng), gauss(rng), gauss(rng)) *
          (sc.mic_cluster_radius / 2.0);
    } while (p.norm() > sc.mic_cluster_radius);
    p += center;
    for (int a = 0; a < 3; ++a) {
      p(a) = std::clamp(p(a), 0.15, room(a) - 0.15);
    }
    out.scene.microphones.push_back({i + 1, p});
  }

  // Smooth 3D Lissajous orbit around the cluster; slow against the speed
  // of sound so per-frame delays stay nearly constant.
  const double phase1 = 2.0 * std::numbers::pi * unit(rng);
  const double phase2 = 2.0 * std::numbers::pi * unit(rng);
  const double phase3 = 2.0 * std::numbers::pi * unit(rng);
  const double f1 = 0.045, f2 = 0.037, f3 = 0.052;  // Hz
  const double rx = std::min(sc.source_orbit_radius, 0.5 * room(0) - 0.3);
  const double ry = std::min(sc.source_orbit_radius, 0.5 * room(1) - 0.3);
  const double rz = std::min(0.6 * sc.source_orbit_radius, 0.5 * room(2) - 0.3);
  const double path_dt = 0.05;
  for (double t = 0.0; t <= sc.duration_s + 1e-9; t += path_dt) {
    Vec3 p = center +
             Vec3(rx * std::sin(2 * std::numbers::pi * f1 * t + phase1),
                  ry * std::sin(2 * std::numbers::pi * f2 * t + phase2),
                  rz * std::sin(2 * std::numbers::pi * f3 * t + phase3));
    for (int a = 0; a < 3; ++a) {
      p(a) = std::clamp(p(a), 0.2, room(a) - 0.2);
    }
    out.scene.source_path.samples.push_back({t, p});
  }

  for (const auto& name : sc.planes) {
    out.scene.planes.push_back(named_plane(name, sc.room));
  }
  out.scene.recompute_offsets();

  // Ground-truth TDOA matrix at evenly spaced event times.
  {
    Scene event_scene = out.scene;
    event_scene.source_path.samples.clear();
    const double t0 = 0.5, t1 = std::max(t0 + 0.1, sc.duration_s - 0.5);
    for (int j = 0; j < sc.tdoa_events; ++j) {
      const double t =
          t0 + (t1 - t0) * j / std::max(1, sc.tdoa_events - 1);
      event_scene.source_path.samples.push_back(
          {t, out.scene.source_path.position_at(t)});
    }
    event_scene.recompute_offsets();
    NoiseSpec noise;
    noise.tdoa_sigma = sc.tdoa_sigma;
    noise.outlier_rate = sc.tdoa_outlier_rate;
    noise.missing_rate = sc.tdoa_missing_rate;
    noise.outlier_magnitude = sc.tdoa_outlier_magnitude;
    noise.seed = split.derive(52);
    out.tdoa = synth_tdoa(event_scene, noise);
  }

  if (sc.emit_audio) {
    const auto waveform = make_noise_waveform(sc.duration_s + 0.25,
                                              config.sample_rate,
                                              split.derive(53));
    out.audio = synth_audio(out.scene, waveform, config.sample_rate,
                            sc.snr_db, sc.reflection_order,
                            sc.reflection_coeff, split.derive(54));
  } else {
    out.audio.sample_rate = config.sample_rate;
  }
  return out;
}

std::vector<Peak> detect_peaks(const std::vector<std::vector<double>>& channels,
                               const PipelineConfig& config) {
  config.validate();
  const FrameSpec spec = config.frame_spec();
  const int m = static_cast<int>(channels.size());
  if (m < 2) raise(ErrorCode::InvalidSignal, "need at least two channels");

  std::vector<Peak> peaks;
  for (int i1 = 1; i1 <= m; ++i1) {
    for (int i2 = i1 + 1; i2 <= m; ++i2) {
      if (!config.detect_all_pairs && i1 != 1) continue;
      auto result = score_matrix(channels[i1 - 1], channels[i2 - 1], i1, i2,
                                 spec, config.peak_k, config.peak_threshold,
                                 /*keep_matrix=*/false);
      peaks.insert(peaks.end(), result.peaks.begin(), result.peaks.end());
    }
  }
  return peaks;
}

TrackingResult track_peaks(const std::vector<Peak>& peaks, int mic_count,
                           const PipelineConfig& config) {
  config.validate();
  std::map<int, std::vector<Peak>> per_pair;
  for (const auto& p : peaks) {
    if (p.pair_i1 != 1) continue;  // tracking works on reference pairs
    per_pair[p.pair_i2].push_back(p);
  }
  for (auto& [i, v] : per_pair) {
    std::stable_sort(v.begin(), v.end(), [](const Peak& a, const Peak& b) {
      return a.frame_index < b.frame_index;
    });
  }
  TrackingParams params = config.tracking;
  params.seed = SeedSplitter(config.seed).derive(61);
  return run_tracking(per_pair, mic_count, config.frame_spec(), params);
}

CalibrationResult calibrate_tdoa(const TdoaMatrix& tdoa,
                                 const PipelineConfig& config) {
  config.validate();
  const Eigen::Index m = tdoa.rows();
  const Eigen::Index n = tdoa.cols();
  const MinimalCase mcase =
      config.resolve_case(static_cast<int>(m), static_cast<int>(n));

  RansacOffsetOptions ropts = config.ransac;
  ropts.seed = SeedSplitter(config.seed).derive(71);

  CalibrationResult result;
  result.offset_solution = ransac_offsets(tdoa, mcase, ropts);
  const auto& sol = result.offset_solution;
  result.ransac_inlier_count = static_cast<double>(sol.inlier_columns.size());

  // Order the inlier columns so the best-observed one pivots the
  // compaction, and refine the offsets on the rank manifold.
  std::vector<Eigen::Index> cols = sol.inlier_columns;
  std::stable_sort(cols.begin(), cols.end(),
                   [&](Eigen::Index a, Eigen::Index b) {
                     return tdoa.mask.col(a).count() > tdoa.mask.col(b).count();
                   });

  const Eigen::Index ni = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd Usub(m, ni);
  BoolMask msub(m, ni);
  Eigen::VectorXd o_init(ni);
  for (Eigen::Index c = 0; c < ni; ++c) {
    Usub.col(c) = tdoa.U.col(cols[c]);
    msub.col(c) = tdoa.mask.col(cols[c]);
    o_init(c) = sol.o(cols[c]);
  }

  Eigen::VectorXd o_ref = o_init;
  Eigen::MatrixXd A;
  {
    RankOptimizeOptions oopt;
    oopt.max_iterations = 60;
    const auto ro = rank_optimize(Usub, msub, o_init, mcase.K, oopt);
    o_ref = ro.o;
    A = ro.A;
  }

  // Metric reconstruction from the refined offsets.
  std::vector<int> rows_q;
  for (Eigen::Index i = 1; i < m; ++i) {
    if (msub(i, 0)) rows_q.push_back(static_cast<int>(i));
  }
  if (static_cast<int>(rows_q.size()) < mcase.K + 1) {
    raise(ErrorCode::InsufficientData, "pivot column has too few rows");
  }

  Eigen::MatrixXd B(rows_q.size(), ni - 1);
  for (std::size_t r = 0; r < rows_q.size(); ++r) {
    const Eigen::Index i = rows_q[r];
    for (Eigen::Index c = 1; c < ni; ++c) {
      if (msub(i, c) && msub(0, c)) {
        const double dij = Usub(i, c) - o_ref(c);
        const double di1 = Usub(i, 0) - o_ref(0);
        const double d1j = Usub(0, c) - o_ref(c);
        const double d11 = Usub(0, 0) - o_ref(0);
        B(r, c - 1) = -0.5 * (dij * dij - di1 * di1 - d1j * d1j + d11 * d11);
      } else {
        B(r, c - 1) = A(i - 1, c - 1);  // rank-K completion
      }
    }
  }

  Eigen::VectorXd mic_border(rows_q.size() + 1);
  mic_border(0) = Usub(0, 0) - o_ref(0);
  for (std::size_t r = 0; r < rows_q.size(); ++r) {
    mic_border(r + 1) = Usub(rows_q[r], 0) - o_ref(0);
  }
  Eigen::VectorXd src_border(ni);
  for (Eigen::Index c = 0; c < ni; ++c) {
    src_border(c) = Usub(0, c) - o_ref(c);
  }

  const Factorization fact = factorize(B);
  const Upgrade up = solve_upgrade(fact, mic_border, src_border,
                                   SeedSplitter(config.seed).derive(72));
  const Positions pos = upgrade_positions(fact, up);

  Eigen::Matrix3Xd mics(3, m);
  std::vector<bool> known(m, false);
  mics.col(0) = pos.mics.col(0);
  known[0] = true;
  for (std::size_t r = 0; r < rows_q.size(); ++r) {
    mics.col(rows_q[r]) = pos.mics.col(r + 1);
    known[rows_q[r]] = true;
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (known[i]) continue;
    std::vector<Vec3> pts;
    std::vector<double> ds;
    for (Eigen::Index c = 0; c < ni; ++c) {
      if (!msub(i, c)) continue;
      pts.push_back(pos.sources.col(c));
      ds.push_back(Usub(i, c) - o_ref(c));
    }
    if (pts.size() < 5) {
      raise(ErrorCode::InsufficientData,
            "microphone " + std::to_string(i + 1) + " cannot be placed");
    }
    TrilaterationOptions topt;
    topt.inlier_tol = 3.0 * config.ransac.epsilon;
    topt.seed = SeedSplitter(config.seed).derive(73 + i);
    mics.col(i) = trilaterate(pts, ds, topt);
  }

  // Bundle over the inliers, then inlier expansion over all columns.
  BundleResult ba =
      bundle_adjust(Usub, msub, mics, pos.sources, o_ref, BundleOptions{});

  TdoaMatrix reindexed = tdoa;  // expansion works on the original order
  const auto expanded =
      expand_inliers(reindexed, ba.mics, cols, 0.05, config.ransac.min_count);

  result.final_inliers = expanded.inlier_columns;
  result.bundle = expanded.refined;

  Scene est;
  est.speed_of_sound = config.speed_of_sound;
  for (Eigen::Index i = 0; i < m; ++i) {
    est.microphones.push_back(
        {static_cast<int>(i + 1), result.bundle.mics.col(i)});
  }
  for (std::size_t c = 0; c < result.final_inliers.size(); ++c) {
    const Eigen::Index j = result.final_inliers[c];
    est.source_path.samples.push_back(
        {tdoa.event_times[j], result.bundle.sources.col(c)});
    est.offsets.push_back(result.bundle.offsets(c));
  }
  result.scene = est;
  return result;
}

MirrorOutput find_mirrors(const std::vector<Peak>& peaks,
                          const Scene& estimated,
                          const PipelineConfig& config) {
  config.validate();
  MirrorParams params = config.mirrors;
  params.seed = SeedSplitter(config.seed).derive(81);

  // Fold all pairs into reference->target form: pair (i1, i2) provides a
  // detection for target i2 (reference i1) and, negated, for target i1.
  std::map<int, std::vector<Peak>> per_target;
  for (const auto& p : peaks) {
    per_target[p.pair_i2].push_back(p);
    Peak flipped = p;
    std::swap(flipped.pair_i1, flipped.pair_i2);
    flipped.range_diff = -flipped.range_diff;
    per_target[flipped.pair_i2].push_back(flipped);
  }

  std::map<int, std::vector<ConsistentDetection>> candidates;
  for (const auto& mic : estimated.microphones) {
    auto it = per_target.find(mic.id);
    if (it == per_target.end()) continue;
    candidates[mic.id] =
        consistency_correct(it->second, estimated, mic.id, params);
  }

  MirrorOutput out;
  out.estimates =
      extract_all_mirrors(candidates, estimated.source_path, params);
  Scene with_planes = estimated;
  out.planes = fit_planes(out.estimates, with_planes, params);
  return out;
}

// ---- evaluation ----

std::string EvaluationReport::to_json() const {
  json j;
  j["alignment_rmse"] = alignment_rmse;
  j["reflected"] = reflected;
  j["per_mic_error"] = per_mic_error;
  j["plane_normal_error_deg"] = plane_normal_error_deg;
  j["plane_offset_error"] = plane_offset_error;
  j["residual_rms"] = residual_rms;
  j["residual_histogram_edges"] = residual_histogram_edges;
  j["residual_histogram_counts"] = residual_histogram_counts;
  j["stage_table"] = json::array();
  for (const auto& s : stage_table) {
    j["stage_table"].push_back(
        {{"stage", s.name}, {"inliers", s.inliers}, {"outliers", s.outliers}});
  }
  return j.dump(2) + "\n";
}

EvaluationReport evaluate_scenes(const Scene& estimated, const Scene& truth,
                                 const TdoaMatrix* tdoa,
                                 const TrackingStages* stages,
                                 const FrameSpec* spec, double label_tol) {
  EvaluationReport rep;
  const Alignment align = align_scenes(estimated, truth);
  rep.alignment_rmse = align.rmse;
  rep.reflected = align.reflect;
  for (std::size_t i = 0; i < estimated.microphones.size(); ++i) {
    rep.per_mic_error.push_back(
        (align.apply(estimated.microphones[i].position) -
         truth.microphones[i].position)
            .norm());
  }

  // Planes, compared in the truth frame.
  for (const auto& truth_plane : truth.planes) {
    double best_angle = std::numeric_limits<double>::quiet_NaN();
    double best_offset = std::numeric_limits<double>::quiet_NaN();
    double best_score = std::numeric_limits<double>::infinity();
    for (const auto& est_plane : estimated.planes) {
      Vec3 n = align.rotation * est_plane.unit_normal;
      double d = est_plane.offset_d + n.dot(align.translation);
      if (d < 0) {
        n = -n;
        d = -d;
      }
      const double c = std::clamp(
          std::abs(n.dot(truth_plane.unit_normal)), 0.0, 1.0);
      const double angle = std::acos(c) * 180.0 / std::numbers::pi;
      const double doff = std::abs(d - truth_plane.offset_d);
      if (angle + 10.0 * doff < best_score) {
        best_score = angle + 10.0 * doff;
        best_angle = angle;
        best_offset = doff;
      }
    }
    rep.plane_normal_error_deg.push_back(best_angle);
    rep.plane_offset_error.push_back(best_offset);
  }

  // Residual histogram of u - (||r - s|| + o) over the estimated scene.
  if (tdoa && !estimated.source_path.empty()) {
    std::vector<double> residuals;
    // event times of the estimate map back to tdoa columns
    for (std::size_t c = 0; c < estimated.source_path.size(); ++c) {
      const double t = estimated.source_path.samples[c].t;
      Eigen::Index j = -1;
      for (Eigen::Index k = 0; k < tdoa->cols(); ++k) {
        if (std::abs(tdoa->event_times[k] - t) < 1e-9) {
          j = k;
          break;
        }
      }
      if (j < 0) continue;
      const Vec3 s = estimated.source_path.samples[c].pos;
      const double o = estimated.offsets.empty() ? 0.0 : estimated.offsets[c];
      for (Eigen::Index i = 0; i < tdoa->rows(); ++i) {
        if (!tdoa->mask(i, j)) continue;
        const double fit =
            (estimated.microphones[i].position - s).norm() + o;
        residuals.push_back(tdoa->U(i, j) - fit);
      }
    }
    if (!residuals.empty()) {
      double ss = 0.0;
      double lo = *std::min_element(residuals.begin(), residuals.end());
      double hi = *std::max_element(residuals.begin(), residuals.end());
      if (hi - lo < 1e-12) {
        lo -= 1e-6;
        hi += 1e-6;
      }
      const int bins = 25;
      rep.residual_histogram_counts.assign(bins, 0);
      for (int b = 0; b <= bins; ++b) {
        rep.residual_histogram_edges.push_back(lo + (hi - lo) * b / bins);
      }
      for (double r : residuals) {
        ss += r * r;
        int b = static_cast<int>((r - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++rep.residual_histogram_counts[b];
      }
      rep.residual_rms = std::sqrt(ss / residuals.size());
    }
  }

  // Per-stage inlier/outlier table against the truth geometry.
  if (stages && spec) {
    for (std::size_t s = 0; s < stages->names.size(); ++s) {
      StageCounts counts;
      counts.name = stages->names[s];
      for (const auto& sample : stages->samples[s]) {
        const double t = frame_center_time(
            static_cast<int>(std::lround(sample.frame)), *spec);
        const Vec3 src = truth.source_path.position_at(t);
        const double w_true =
            (src - truth.mic_position(sample.pair_i2)).norm() -
            (src - truth.mic_position(1)).norm();
        if (std::abs(sample.w - w_true) <= label_tol) {
          ++counts.inliers;
        } else {
          ++counts.outliers;
        }
      }
      rep.stage_table.push_back(counts);
    }
  }
  return rep;
}

// ---- file-based stages ----

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise(ErrorCode::SchemaError, "cannot create " + dir.string());
}

}  // namespace

std::string stages_to_json(const TrackingStages& stages) {
  json j;
  j["stages"] = json::array();
  for (std::size_t s = 0; s < stages.names.size(); ++s) {
    json stage;
    stage["name"] = stages.names[s];
    json samples = json::array();
    for (const auto& x : stages.samples[s]) {
      samples.push_back(json::array({x.pair_i2, x.frame, x.w}));
    }
    stage["samples"] = std::move(samples);
    j["stages"].push_back(std::move(stage));
  }
  return j.dump() + "\n";
}

TrackingStages stages_from_json(const std::string& text) {
  TrackingStages out;
  try {
    const json j = json::parse(text);
    for (const auto& stage : j.at("stages")) {
      out.names.push_back(stage.at("name").get<std::string>());
      std::vector<StageSample> samples;
      for (const auto& x : stage.at("samples")) {
        samples.push_back({x[0].get<int>(), x[1].get<double>(),
                           x[2].get<double>()});
      }
      out.samples.push_back(std::move(samples));
    }
  } catch (const json::exception& e) {
    raise(ErrorCode::SchemaError, std::string("stages json: ") + e.what());
  }
  return out;
}

void cmd_simulate(const PipelineConfig& config,
                  const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  const auto sim = simulate_experiment(config);
  save_scene(sim.scene, out_dir / "scene.json");
  save_tdoa_csv(sim.tdoa.tdoa, out_dir / "tdoa.csv");
  if (config.sim.emit_audio) {
    WavData wav;
    wav.sample_rate = sim.audio.sample_rate;
    wav.channels = sim.audio.channels;
    save_wav(wav, out_dir / "audio.wav");
  }
  // truth labels for the noise-injected matrix
  json labels;
  labels["inlier_mask"] = json::array();
  for (Eigen::Index i = 0; i < sim.tdoa.inlier_mask.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < sim.tdoa.inlier_mask.cols(); ++j) {
      row.push_back(static_cast<int>(sim.tdoa.inlier_mask(i, j)));
    }
    labels["inlier_mask"].push_back(std::move(row));
  }
  labels["true_offsets"] = json::array();
  {
    const double t0 = 0.5;
    const double t1 = std::max(t0 + 0.1, config.sim.duration_s - 0.5);
    const Vec3 r1 = sim.scene.mic_position(1);
    for (int j = 0; j < config.sim.tdoa_events; ++j) {
      const double t =
          t0 + (t1 - t0) * j / std::max(1, config.sim.tdoa_events - 1);
      labels["true_offsets"].push_back(
          -(sim.scene.source_path.position_at(t) - r1).norm());
    }
  }
  write_text_file(out_dir / "truth_labels.json", labels.dump(2) + "\n");
  write_text_file(out_dir / "config_used.json", config.to_json());
}

void cmd_detect(const PipelineConfig& config,
                const std::vector<std::filesystem::path>& audio_inputs,
                const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  std::vector<std::vector<double>> channels;
  double rate = 0.0;
  for (const auto& path : audio_inputs) {
    const WavData wav = load_wav(path);
    if (rate == 0.0) {
      rate = wav.sample_rate;
    } else if (rate != wav.sample_rate) {
      raise(ErrorCode::SchemaError, "audio inputs have mixed sample rates");
    }
    for (auto& c : wav.channels) channels.push_back(c);
  }
  if (channels.size() >= 2) {
    const std::size_t len = channels.front().size();
    for (const auto& c : channels) {
      if (c.size() != len) {
        raise(ErrorCode::SchemaError, "audio channels differ in length");
      }
    }
  }
  PipelineConfig effective = config;
  if (rate > 0.0) effective.sample_rate = rate;
  const auto peaks = detect_peaks(channels, effective);
  save_peaks_csv(peaks, out_dir / "peaks.csv");
  write_text_file(out_dir / "config_used.json", effective.to_json());
}

void cmd_track(const PipelineConfig& config,
               const std::filesystem::path& peaks_csv,
               const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  const auto peaks = load_peaks_csv(peaks_csv);
  int mic_count = 1;
  for (const auto& p : peaks) {
    mic_count = std::max({mic_count, p.pair_i1, p.pair_i2});
  }
  const auto result = track_peaks(peaks, mic_count, config);
  save_tdoa_csv(result.tdoa, out_dir / "tdoa.csv");
  std::vector<TrackSampleRow> rows;
  const FrameSpec spec = config.frame_spec();
  for (const auto& [i, track] : result.direct_tracks) {
    for (const auto& s : track.samples) {
      rows.push_back({1, i, static_cast<double>(s.frame),
                      frame_center_time(s.frame, spec), s.w});
    }
  }
  save_track_csv(rows, out_dir / "tracks.csv");
  write_text_file(out_dir / "stages.json", stages_to_json(result.stages));
  write_text_file(out_dir / "config_used.json", config.to_json());
}

void cmd_calibrate(const PipelineConfig& config,
                   const std::filesystem::path& tdoa_csv,
                   const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  const TdoaMatrix tdoa = load_tdoa_csv(tdoa_csv);
  const auto result = calibrate_tdoa(tdoa, config);
  save_scene(result.scene, out_dir / "scene_est.json");

  json rep;
  rep["ransac_inliers"] = result.ransac_inlier_count;
  rep["final_inliers"] = result.final_inliers.size();
  rep["columns"] = tdoa.cols();
  rep["bundle_cost"] = result.bundle.cost;
  rep["bundle_residual_rms"] = result.bundle.residual_rms;
  rep["offset_rank_residual"] = result.offset_solution.residual;
  write_text_file(out_dir / "report.json", rep.dump(2) + "\n");
  write_text_file(out_dir / "config_used.json", config.to_json());
}

void cmd_mirrors(const PipelineConfig& config,
                 const std::filesystem::path& peaks_csv,
                 const std::filesystem::path& scene_est_json,
                 const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  const auto peaks = load_peaks_csv(peaks_csv);
  Scene scene = load_scene(scene_est_json);
  const auto mirrors = find_mirrors(peaks, scene, config);

  scene.mirrored_microphones.clear();
  for (const auto& est : mirrors.estimates) {
    MirroredMicrophone mm;
    mm.mic_id = est.mic_id;
    mm.path_index = est.path_index;
    mm.position = est.position;
    mm.has_plane = est.has_plane;
    mm.plane = est.plane;
    scene.mirrored_microphones.push_back(mm);
  }
  scene.planes = mirrors.planes;
  save_scene(scene, out_dir / "scene_mirrors.json");

  // per-mirror inlier detections, plot-ready
  std::ostringstream csv;
  csv << "mic_id,path_index,time_s,corrected_distance_m,support\n";
  for (const auto& est : mirrors.estimates) {
    for (const auto& det : est.inliers) {
      csv << est.mic_id << ',' << est.path_index << ',' << det.t << ','
          << det.corrected_distance << ',' << det.support << '\n';
    }
  }
  write_text_file(out_dir / "mirror_detections.csv", csv.str());
  write_text_file(out_dir / "config_used.json", config.to_json());
}

void cmd_evaluate(const PipelineConfig& config,
                  const std::filesystem::path& estimated_json,
                  const std::filesystem::path& truth_json,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& tdoa_csv,
                  const std::optional<std::filesystem::path>& stages_json) {
  ensure_dir(out_dir);
  const Scene est = load_scene(estimated_json);
  const Scene truth = load_scene(truth_json);
  if (est.mic_count() != truth.mic_count()) {
    raise(ErrorCode::CountMismatch, "microphone counts differ");
  }
  std::optional<TdoaMatrix> tdoa;
  if (tdoa_csv) tdoa = load_tdoa_csv(*tdoa_csv);
  std::optional<TrackingStages> stages;
  if (stages_json) stages = stages_from_json(read_text_file(*stages_json));
  const FrameSpec spec = config.frame_spec();
  const auto rep = evaluate_scenes(est, truth, tdoa ? &*tdoa : nullptr,
                                   stages ? &*stages : nullptr, &spec);
  write_text_file(out_dir / "report.json", rep.to_json());
  write_text_file(out_dir / "config_used.json", config.to_json());
}

void cmd_pipeline(const PipelineConfig& config,
                  const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  cmd_simulate(config, out_dir / "simulate");
  cmd_detect(config, {out_dir / "simulate" / "audio.wav"},
             out_dir / "detect");
  cmd_track(config, out_dir / "detect" / "peaks.csv", out_dir / "track");
  cmd_calibrate(config, out_dir / "track" / "tdoa.csv", out_dir / "calibrate");
  cmd_mirrors(config, out_dir / "detect" / "peaks.csv",
              out_dir / "calibrate" / "scene_est.json", out_dir / "mirrors");
  cmd_evaluate(config, out_dir / "calibrate" / "scene_est.json",
               out_dir / "simulate" / "scene.json", out_dir / "evaluate",
               out_dir / "track" / "tdoa.csv",
               out_dir / "track" / "stages.json");
}

}  // namespace miccal
