#include "miccal/model.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace miccal {

Plane::Plane(const Vec3& normal, double d) {
  const double n = normal.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    raise(ErrorCode::SchemaError, "plane normal must be nonzero and finite");
  }
  unit_normal = normal / n;
  offset_d = d / n;
  if (offset_d < 0.0) {
    unit_normal = -unit_normal;
    offset_d = -offset_d;
  }
}

Vec3 SourcePath::position_at(double t) const {
  if (samples.empty()) {
    raise(ErrorCode::InvalidSignal, "empty source path");
  }
  if (t <= samples.front().t) return samples.front().pos;
  if (t >= samples.back().t) return samples.back().pos;
  auto it = std::lower_bound(
      samples.begin(), samples.end(), t,
      [](const PathSample& s, double v) { return s.t < v; });
  const PathSample& b = *it;
  const PathSample& a = *(it - 1);
  const double dt = b.t - a.t;
  if (dt <= 0.0) return a.pos;
  const double w = (t - a.t) / dt;
  return (1.0 - w) * a.pos + w * b.pos;
}

Vec3 Scene::mic_position(int id) const {
  for (const auto& m : microphones) {
    if (m.id == id) return m.position;
  }
  raise(ErrorCode::SchemaError, "unknown microphone id " + std::to_string(id));
}

void Scene::recompute_offsets() {
  offsets.resize(source_path.size());
  const Vec3 r1 = mic_position(1);
  for (std::size_t j = 0; j < source_path.size(); ++j) {
    offsets[j] = -(source_path.samples[j].pos - r1).norm();
  }
}

Vec3 mirror_point(const Vec3& p, const Plane& plane) {
  return p - 2.0 * plane.signed_distance(p) * plane.unit_normal;
}

Plane plane_from_mirror_pair(const Vec3& r_direct, const Vec3& r_mirror,
                             double tolerance) {
  const Vec3 delta = r_mirror - r_direct;
  const double sep = delta.norm();
  if (sep <= tolerance) {
    raise(ErrorCode::DegenerateMirrorPair,
          "mirror pair separated by " + std::to_string(sep) + " m");
  }
  const Vec3 n = delta / sep;
  const Vec3 mid = 0.5 * (r_direct + r_mirror);
  return Plane(n, n.dot(mid));
}

namespace {

// Procrustes for one orientation class. Columns of E, R are points.
Alignment procrustes(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& ref,
                     bool reflect) {
  const Eigen::Index n = est.cols();
  const Vec3 ce = est.rowwise().mean();
  const Vec3 cr = ref.rowwise().mean();
  const Eigen::Matrix3Xd E = est.colwise() - ce;
  const Eigen::Matrix3Xd R = ref.colwise() - cr;

  const Mat3 cov = R * E.transpose();
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  const double target_det = reflect ? -1.0 : 1.0;
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() * target_det <
      0.0) {
    D(2, 2) = -1.0;
  }
  Alignment a;
  a.rotation = svd.matrixU() * D * svd.matrixV().transpose();
  a.translation = cr - a.rotation * ce;
  a.reflect = reflect;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    ss += (a.rotation * est.col(i) + a.translation - ref.col(i)).squaredNorm();
  }
  a.rmse = std::sqrt(ss / static_cast<double>(n));
  return a;
}

}  // namespace

Alignment align_points(const std::vector<Vec3>& estimated,
                       const std::vector<Vec3>& reference) {
  if (estimated.size() != reference.size()) {
    raise(ErrorCode::CountMismatch, "point counts differ");
  }
  const std::size_t n = estimated.size();
  if (n < 3) {
    raise(ErrorCode::DegenerateConfiguration, "need >= 3 points to align");
  }
  Eigen::Matrix3Xd E(3, n), R(3, n);
  for (std::size_t i = 0; i < n; ++i) {
    E.col(i) = estimated[i];
    R.col(i) = reference[i];
  }
  // Collinearity check on the reference set.
  Eigen::Matrix3Xd Rc = R.colwise() - Vec3(R.rowwise().mean());
  Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(Rc);
  if (svd.singularValues()(1) < 1e-9 * (svd.singularValues()(0) + 1e-300)) {
    raise(ErrorCode::DegenerateConfiguration, "collinear point set");
  }

  const Alignment direct = procrustes(E, R, false);
  const Alignment mirrored = procrustes(E, R, true);
  return direct.rmse <= mirrored.rmse ? direct : mirrored;
}

Alignment align_scenes(const Scene& estimated, const Scene& reference) {
  std::vector<Vec3> e, r;
  e.reserve(estimated.microphones.size());
  r.reserve(reference.microphones.size());
  for (const auto& m : estimated.microphones) e.push_back(m.position);
  for (const auto& m : reference.microphones) r.push_back(m.position);
  return align_points(e, r);
}

}  // namespace miccal
