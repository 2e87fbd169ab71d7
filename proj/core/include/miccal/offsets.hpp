#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "miccal/tdoa.hpp"

namespace miccal {

// D (m x n) with d_ij = u_ij^2 - 2 u_ij o_j and the double compaction
// matrix F ((m-1) x (n-1)) with f_ij = -(d_ij - d_i1 - d_1j + d_11)/2.
// F has rank <= 3 at the true offsets (<= 2 for planar microphones).
struct CompactionPair {
  Eigen::MatrixXd D;
  Eigen::MatrixXd F;
};

struct OffsetSolution {
  Eigen::VectorXd o;
  bool valid = false;
  std::vector<Eigen::Index> inlier_columns;
  double residual = 0.0;  // rank residual at the solution
};

// The five solvable minimal cases (rank K, receivers m, events n, maximum
// number of solutions): (3,9,5,1), (3,7,6,5), (3,6,8,14), (2,7,4,1),
// (2,5,6,5).
struct MinimalCase {
  int K = 3;
  int m_req = 0;
  int n_req = 0;
  int max_solutions = 0;
};

const std::vector<MinimalCase>& minimal_cases();
MinimalCase minimal_case(int K, int m_req, int n_req);

// Largest-m case of the given rank that fits the available rows/columns.
MinimalCase choose_case(int m_avail, int n_avail, int K = 3);

CompactionPair compaction(const Eigen::MatrixXd& U, const Eigen::VectorXd& o);

// sigma_{K+1}/sigma_K of F; scale-invariant surrogate for the vanishing
// of all (K+1)x(K+1) minors. Throws MatrixTooSmall.
double rank_residual(const Eigen::MatrixXd& F, int K);

struct SolveOptions {
  int starts = 60;
  int max_newton_iterations = 35;
  double accept_rank_residual = 1e-6;
  double degenerate_jacobian_tol = 1e-12;
  std::uint64_t seed = 0;
};

// All real offset vectors solving the minimal rank problem on a fully
// observed m_req x n_req block: the unique-solution cases 9r/5s and 7r/4s
// by linear elimination on the minor constraints, the others by damped
// multi-start Newton on a square minor subsystem with deflation. Results
// are filtered through filter_valid_offsets and capped at max_solutions.
// Throws DegenerateInstance when the instance cannot be resolved (rank
// drop, singular root Jacobians).
std::vector<Eigen::VectorXd> solve_minimal(const Eigen::MatrixXd& U_sub,
                                           const MinimalCase& mcase,
                                           const SolveOptions& opts = {});

// Keep real candidates satisfying u_ij >= o_j - slack on all entries.
std::vector<Eigen::VectorXd> filter_valid_offsets(
    const std::vector<Eigen::VectorXcd>& candidates, const Eigen::MatrixXd& U,
    double slack = 1e-9, double imag_tol = 1e-6);

struct RansacOffsetOptions {
  double epsilon = 0.02;  // meters, geometric inlier threshold
  int iterations = 500;
  int min_count = 5;      // entries below epsilon for an inlier column
  std::uint64_t seed = 0;
  SolveOptions solver;
};

// Hypothesize-and-test offset estimation: sample a fully observed minimal
// block, solve it, extend the offsets to the remaining columns through the
// rank constraint, solve a provisional geometry and count columns passing
// the geometric residual test. Throws InsufficientData / NoConsensus.
OffsetSolution ransac_offsets(const TdoaMatrix& tdoa, const MinimalCase& mcase,
                              const RansacOffsetOptions& opts = {});

struct RankOptimizeOptions {
  int max_iterations = 200;
  double rel_tol = 1e-12;
  int max_damping_failures = 10;
};

struct RankOptimizeResult {
  Eigen::VectorXd o;
  Eigen::MatrixXd A;  // rank-K approximant of F
  double objective = 0.0;
  int iterations = 0;
};

// Joint Gauss-Newton on min_{o,A} ||F(U,o) - A||_{F,Omega} s.t. rank A = K,
// with the local parametrization A = Ubar exp(sum z_i B_i) E_K (W + sum
// w_j C_j) refreshed each iteration. Throws Diverged.
RankOptimizeResult rank_optimize(const Eigen::MatrixXd& U, const BoolMask& mask,
                                 const Eigen::VectorXd& o_init, int K,
                                 const RankOptimizeOptions& opts = {});

// Residuals and analytic Jacobian of the local rank-optimize
// parametrization at its origin; exposed for the derivative checks.
// Parameter order: y (n offsets), z (K*(p-K) rotations), w (K*q factors),
// with p = m-1, q = n-1.
void rank_optimize_residual_jacobian(const Eigen::MatrixXd& U,
                                     const BoolMask& mask,
                                     const Eigen::VectorXd& o, int K,
                                     const Eigen::MatrixXd& A,
                                     Eigen::VectorXd* residuals,
                                     Eigen::MatrixXd* jacobian);

// Evaluate the parametrized pair (o + y, A(z, w)) away from the origin;
// used by the finite-difference checks and the update step.
void rank_optimize_apply(const Eigen::MatrixXd& A, int K,
                         const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                         const Eigen::VectorXd& w, const Eigen::VectorXd& o,
                         Eigen::VectorXd* o_out, Eigen::MatrixXd* A_out);

}  // namespace miccal
