#pragma once

#include <Eigen/Dense>
#include <vector>

#include "miccal/error.hpp"

namespace miccal {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Reflective plane {p : n.p = d} in Hessian normal form with ||n|| = 1.
// The stored form is canonicalized to d >= 0 so equal planes compare equal.
struct Plane {
  Vec3 unit_normal = Vec3::UnitZ();
  double offset_d = 0.0;

  Plane() = default;
  Plane(const Vec3& normal, double d);

  double signed_distance(const Vec3& p) const {
    return unit_normal.dot(p) - offset_d;
  }
};

struct Microphone {
  int id = 0;  // 1-based, contiguous
  Vec3 position = Vec3::Zero();
};

// Moving source sampled along its path; times strictly increasing.
struct PathSample {
  double t = 0.0;
  Vec3 pos = Vec3::Zero();
};

struct SourcePath {
  std::vector<PathSample> samples;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
  double t_begin() const { return samples.front().t; }
  double t_end() const { return samples.back().t; }

  // Piecewise-linear position at time t (clamped to the path's span).
  Vec3 position_at(double t) const;
};

// A mirrored copy of a microphone with the plane that produced it. Filled in
// by the multipath stage; absent for purely direct-path scenes.
struct MirroredMicrophone {
  int mic_id = 0;
  int path_index = 2;  // k >= 2, 1 is the direct path
  Vec3 position = Vec3::Zero();
  bool has_plane = false;
  Plane plane;
};

// The central geometric record: ground truth when simulated, estimate when
// reconstructed. Offsets o_j = -||s_j - r_1|| are stored per source sample.
struct Scene {
  std::vector<Microphone> microphones;
  SourcePath source_path;
  std::vector<Plane> planes;
  double speed_of_sound = 343.0;
  std::vector<double> offsets;
  std::vector<MirroredMicrophone> mirrored_microphones;

  std::size_t mic_count() const { return microphones.size(); }
  Vec3 mic_position(int id) const;  // id is 1-based

  // Recompute offsets from the geometry (o_j = -||s_j - r_1||).
  void recompute_offsets();
};

// Rigid(+optional reflection) map x -> rotation*x + translation taking the
// estimated scene onto the reference. det(rotation) is +1 unless reflect.
struct Alignment {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  bool reflect = false;
  double rmse = 0.0;

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

// Reflect p across the plane.
Vec3 mirror_point(const Vec3& p, const Plane& plane);

// Perpendicular bisector plane of a (direct, mirrored) microphone pair.
// Throws DegenerateMirrorPair when the points coincide within tolerance.
Plane plane_from_mirror_pair(const Vec3& r_direct, const Vec3& r_mirror,
                             double tolerance = 1e-6);

// Least-squares rigid alignment (Procrustes over microphones, both
// orientation classes tried). Throws DegenerateConfiguration for collinear
// microphone sets, CountMismatch for unequal counts.
Alignment align_scenes(const Scene& estimated, const Scene& reference);

// Same, on bare point sets.
Alignment align_points(const std::vector<Vec3>& estimated,
                       const std::vector<Vec3>& reference);

}  // namespace miccal
