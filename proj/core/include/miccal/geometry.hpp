#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "miccal/model.hpp"
#include "miccal/tdoa.hpp"

namespace miccal {

// Rank-3 split B ~ Rt^T * St of the compacted bilinear matrix.
// Rt columns correspond to mics 2..m, St columns to events 2..n.
struct Factorization {
  Eigen::Matrix3Xd Rt;
  Eigen::Matrix3Xd St;
  double residual = 0.0;  // Frobenius norm of the discarded singular tail
};

// Metric upgrade: H symmetric positive definite, H = (L^T L)^{-1} with L
// upper triangular (positive diagonal), plus the translation parameter b.
struct Upgrade {
  Mat3 H = Mat3::Identity();
  Vec3 b = Vec3::Zero();
  Mat3 L = Mat3::Identity();
};

struct Positions {
  Eigen::Matrix3Xd mics;     // 3 x m, mic 1 at the origin
  Eigen::Matrix3Xd sources;  // 3 x n
};

// Truncated rank-3 SVD split; each factor absorbs sqrt of the singular
// values. Throws RankDeficient when sigma3/sigma1 < 1e-10 and
// MatrixTooSmall below 3x3.
Factorization factorize(const Eigen::MatrixXd& B);

// Estimate H and b from the border distance equations. mic_border holds
// d_i1 (i = 1..m), source_border d_1j (j = 1..n); both start with d_11.
// Linear when one family alone has >= 9 equations, otherwise damped
// multi-start Gauss-Newton over (L, b) using all equations. Throws
// InsufficientEquations / IndefiniteH.
Upgrade solve_upgrade(const Factorization& fact,
                      const Eigen::VectorXd& mic_border,
                      const std::optional<Eigen::VectorXd>& source_border,
                      std::uint64_t seed = 0);

// r_1 = 0, s_1 = L b, r_i = L^{-T} Rt_i, s_j = L (St_j + b).
Positions upgrade_positions(const Factorization& fact, const Upgrade& up);

struct BundleOptions {
  int max_iterations = 100;
  double rel_tol = 1e-12;
  int max_damping_failures = 10;
};

struct BundleResult {
  Eigen::Matrix3Xd mics;
  Eigen::Matrix3Xd sources;
  Eigen::VectorXd offsets;
  double cost = 0.0;  // sum of squared residuals
  double residual_rms = 0.0;
  int iterations = 0;
};

// Levenberg-Marquardt on sum_ij (u_ij - (||r_i - s_j|| + o_j))^2 over the
// observed mask, with the gauge fixed by pinning r1 to the origin, r2 to
// the +x axis and r3 to the xy plane (inputs are re-gauged first).
// Throws Diverged after repeated failed damping escalations.
BundleResult bundle_adjust(const Eigen::MatrixXd& U, const BoolMask& mask,
                           const Eigen::Matrix3Xd& mics,
                           const Eigen::Matrix3Xd& sources,
                           const Eigen::VectorXd& offsets,
                           const BundleOptions& opts = {});

// Residual vector and analytic Jacobian of the bundle problem at the given
// state (gauge already applied); exposed for the derivative checks.
void bundle_residual_jacobian(const Eigen::MatrixXd& U, const BoolMask& mask,
                              const Eigen::Matrix3Xd& mics,
                              const Eigen::Matrix3Xd& sources,
                              const Eigen::VectorXd& offsets,
                              Eigen::VectorXd* residuals,
                              Eigen::MatrixXd* jacobian);

// Both intersection points of three spheres. Throws NoIntersection or
// DegenerateGeometry (collinear centers).
std::pair<Vec3, Vec3> sphere_intersection(const Vec3& p1, const Vec3& p2,
                                          const Vec3& p3, double d1, double d2,
                                          double d3);

struct TrilaterationOptions {
  int iterations = 200;
  double inlier_tol = 0.05;  // meters
  std::uint64_t seed = 0;
};

// RANSAC trilateration over >= 3 support points with least-squares polish.
// With all supports coplanar the mirror branch cannot be decided and
// AmbiguousMirror is thrown; inconsistent distances give NoIntersection.
Vec3 trilaterate(const std::vector<Vec3>& points,
                 const std::vector<double>& distances,
                 const TrilaterationOptions& opts = {});

// Single-column TDOA localization against known microphones: solve the
// event position and offset from u_i = ||r_i - s|| + o (linear lifting
// followed by Gauss-Newton polish).
struct ColumnLocalization {
  bool ok = false;
  Vec3 source = Vec3::Zero();
  double offset = 0.0;
  Eigen::VectorXd residuals;  // per observed row, fit minus measurement
};

ColumnLocalization localize_column(const Eigen::Matrix3Xd& mics,
                                   const Eigen::VectorXd& u_col,
                                   const std::vector<int>& rows);

struct ExpandResult {
  std::vector<Eigen::Index> inlier_columns;
  BundleResult refined;
};

// Re-admit measurement columns rejected by RANSAC: localize each candidate
// column from the current mics, admit it when >= min_count entries have
// |res| < res_tol, then re-run bundle adjustment on the enlarged set.
ExpandResult expand_inliers(const TdoaMatrix& tdoa,
                            const Eigen::Matrix3Xd& mics,
                            const std::vector<Eigen::Index>& inlier_columns,
                            double res_tol = 0.05, int min_count = 5,
                            const BundleOptions& opts = {});

}  // namespace miccal
