#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "miccal/model.hpp"
#include "miccal/sigproc.hpp"

namespace miccal {

// A multipath distance candidate: at event time t the residual GCC peaks,
// corrected for the reference channel's direct path, agree on the distance
// ||s(t) - r_{i,k}|| across enough channel pairs.
struct ConsistentDetection {
  double t = 0.0;
  double corrected_distance = 0.0;  // meters
  int support = 0;                  // distinct reference channels in the cluster
};

struct MirrorEstimate {
  int mic_id = 0;
  int path_index = 2;  // k >= 2
  Vec3 position = Vec3::Zero();
  std::vector<ConsistentDetection> inliers;
  bool has_plane = false;
  Plane plane;
};

struct MirrorParams {
  double cluster_tol = 0.03;   // meters, cross-channel agreement
  double inlier_tol = 0.03;    // meters, RANSAC residual gate
  int quorum_slack = 1;        // quorum = (m-1) - slack reference channels
  double direct_gate = 0.06;   // meters, drop peaks claimed by the direct path
  int ransac_iterations = 400;
  int min_inliers = 50;        // consensus needed to keep extracting
  int max_mirrors = 6;
  double plane_normal_tol_deg = 5.0;
  double plane_offset_tol = 0.1;      // meters
  double plane_round_trip_tol = 0.06;  // meters
  std::uint64_t seed = 0;
};

// Map residual peaks of pairs (i1, target) onto corrected distances
// c = w + ||s(t) - r_{i1}|| and keep the values on which at least quorum
// distinct reference channels agree within cluster_tol. peaks holds all
// pairs with pair_i2 == target (pair_i1 is the reference channel).
std::vector<ConsistentDetection> consistency_correct(
    const std::vector<Peak>& peaks, const Scene& estimated, int target_mic,
    const MirrorParams& params);

// Three-point hypothesize-and-test for one mirrored position, both sphere
// branches scored, followed by Gauss-Newton on the inlier reprojection.
// Throws InsufficientCandidates / DegenerateGeometry.
MirrorEstimate ransac_mirror(const std::vector<ConsistentDetection>& candidates,
                             const SourcePath& source_path, int target_mic,
                             const MirrorParams& params);

// Greedy sequential extraction with inlier removal, per microphone.
std::vector<MirrorEstimate> extract_all_mirrors(
    const std::map<int, std::vector<ConsistentDetection>>& candidates_per_mic,
    const SourcePath& source_path, const MirrorParams& params);

// Perpendicular-bisector planes per estimate, clustered across microphones
// (normal angle and offset gates) and averaged; estimates whose cluster
// consensus passes the mirror round trip get the plane attached.
std::vector<Plane> fit_planes(std::vector<MirrorEstimate>& estimates,
                              const Scene& estimated,
                              const MirrorParams& params);

}  // namespace miccal
