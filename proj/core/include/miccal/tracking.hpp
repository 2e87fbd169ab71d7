#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "miccal/sigproc.hpp"
#include "miccal/tdoa.hpp"

namespace miccal {

struct TrackingParams {
  int window = 21;            // frames per tracklet window
  double inlier_tol = 0.04;   // meters from the line
  int ransac_iterations = 500;
  int min_inliers = 8;
  double line_tol = 0.04;     // merge compatibility, meters
  int merge_gap_max = 12;     // frames
  int smooth_span = 11;       // odd
  int interp_gap_max = 5;     // frames, interpolation inside tracks
  int min_rows = 5;           // observed pairs per emitted column
  int n_max = 400;            // emitted columns
  std::uint64_t seed = 0;
};

// Line fit w = slope * frame + intercept over one window of frames.
struct Tracklet {
  int pair_i1 = 0;
  int pair_i2 = 0;
  int frame_begin = 0;
  int frame_end = 0;
  double slope = 0.0;      // meters per frame
  double intercept = 0.0;  // meters
  std::vector<Peak> inliers;

  double at(double frame) const { return slope * frame + intercept; }
};

struct TrackSample {
  int frame = 0;
  double w = 0.0;      // meters
  double score = 0.0;
};

struct Track {
  int pair_i1 = 0;
  int pair_i2 = 0;
  std::vector<TrackSample> samples;     // frames strictly increasing
  std::vector<int> tracklet_ids;

  double mean_score() const;
  std::size_t size() const { return samples.size(); }
};

// Per-window non-repeating RANSAC line fits. Within a window all candidate
// peak pairs are tried (exhaustively when few enough), lines below
// min_inliers are dropped and lines sharing more than one inlier keep only
// the stronger one. Peaks must be sorted by frame.
std::vector<Tracklet> fit_tracklets(const std::vector<Peak>& peaks,
                                    const TrackingParams& params);

// Connect tracklets that extrapolate onto each other within line_tol and
// merge_gap_max frames; greedy over descending combined inlier count.
std::vector<Track> merge_tracklets(const std::vector<Tracklet>& tracklets,
                                   const TrackingParams& params);

// Longest track; ties broken by higher mean peak score. Throws NoTracks.
Track select_direct_path(const std::vector<Track>& tracks);

// Local quadratic least-squares smoothing; samples further than 3 robust
// standard deviations from the local fit are replaced by the fit value.
Track smooth_track(const Track& track, int span);

// Direct-path tracks for pairs (1, i), keyed by i (2..m), assembled into
// the matching matrix. Values are interpolated inside tracks only (gaps up
// to interp_gap_max frames); a frame becomes a column when at least
// min_rows pairs cover it, subsampled uniformly to n_max columns.
TdoaMatrix assemble_matching_matrix(const std::map<int, Track>& direct_tracks,
                                    int mic_count, const FrameSpec& spec,
                                    const TrackingParams& params);

// Samples retained after each stage, for the outlier/inlier bookkeeping.
struct StageSample {
  int pair_i2 = 0;
  double frame = 0.0;
  double w = 0.0;
};

struct TrackingStages {
  std::vector<std::string> names;
  std::vector<std::vector<StageSample>> samples;
};

struct TrackingResult {
  TdoaMatrix tdoa;
  std::map<int, Track> direct_tracks;
  TrackingStages stages;
};

// Full per-pair pipeline: tracklets, merging, direct-path selection,
// smoothing, assembly. peaks_per_pair is keyed by the second channel index
// i of pair (1, i).
TrackingResult run_tracking(const std::map<int, std::vector<Peak>>& peaks_per_pair,
                            int mic_count, const FrameSpec& spec,
                            const TrackingParams& params);

}  // namespace miccal
