#include "miccal/geometry.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <random>

#include "miccal/rng.hpp"

namespace miccal {

Factorization factorize(const Eigen::MatrixXd& B) {
  if (B.rows() < 3 || B.cols() < 3) {
    raise(ErrorCode::MatrixTooSmall, "factorize needs at least 3x3");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      B, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(2) < 1e-10 * sv(0)) {
    raise(ErrorCode::RankDeficient,
          "bilinear matrix rank below 3 (planar or linear configuration)");
  }
  Factorization f;
  f.Rt.resize(3, B.rows());
  f.St.resize(3, B.cols());
  for (int k = 0; k < 3; ++k) {
    const double s = std::sqrt(sv(k));
    f.Rt.row(k) = s * svd.matrixU().col(k).transpose();
    f.St.row(k) = s * svd.matrixV().col(k).transpose();
  }
  double tail = 0.0;
  for (Eigen::Index k = 3; k < sv.size(); ++k) tail += sv(k) * sv(k);
  f.residual = std::sqrt(tail);
  return f;
}

namespace {

// Row of the linear system in the 6 entries of a symmetric 3x3 matrix
// (order xx, xy, xz, yy, yz, zz) representing v^T M v.
Eigen::Matrix<double, 1, 6> quadratic_row(const Vec3& v) {
  Eigen::Matrix<double, 1, 6> row;
  row << v.x() * v.x(), 2 * v.x() * v.y(), 2 * v.x() * v.z(), v.y() * v.y(),
      2 * v.y() * v.z(), v.z() * v.z();
  return row;
}

Mat3 sym_from_vec(const Eigen::Matrix<double, 6, 1>& x) {
  Mat3 M;
  M << x(0), x(1), x(2), x(1), x(3), x(4), x(2), x(4), x(5);
  return M;
}

// G = L^T L with L upper triangular, positive diagonal.
Mat3 upper_chol(const Mat3& G) {
  Eigen::LLT<Mat3> llt(G);
  if (llt.info() != Eigen::Success) {
    raise(ErrorCode::IndefiniteH, "matrix not positive definite");
  }
  return Mat3(llt.matrixL()).transpose();
}

struct UpgradeResidual {
  // Residuals of con_111/222/333 for L (upper triangular, packed as
  // l11,l12,l13,l22,l23,l33) and b.
  const Factorization& fact;
  const Eigen::VectorXd& mic_border;
  const Eigen::VectorXd& src_border;

  static Mat3 unpack_L(const Eigen::VectorXd& theta) {
    Mat3 L = Mat3::Zero();
    L(0, 0) = theta(0);
    L(0, 1) = theta(1);
    L(0, 2) = theta(2);
    L(1, 1) = theta(3);
    L(1, 2) = theta(4);
    L(2, 2) = theta(5);
    return L;
  }

  Eigen::VectorXd operator()(const Eigen::VectorXd& theta) const {
    const Mat3 L = unpack_L(theta);
    const Vec3 b = theta.segment<3>(6);
    const Eigen::Index m1 = fact.Rt.cols();
    const Eigen::Index n1 = fact.St.cols();
    Eigen::VectorXd res(1 + m1 + n1);
    const double d11sq = mic_border(0) * mic_border(0);
    res(0) = d11sq - (L * b).squaredNorm();
    // con_333: d_i1^2 - d_11^2 = Rt_i^T H Rt_i - 2 b^T Rt_i, H = (L^T L)^-1
    Eigen::PartialPivLU<Mat3> luLT(L.transpose());
    for (Eigen::Index i = 0; i < m1; ++i) {
      const Vec3 Ri = fact.Rt.col(i);
      const Vec3 LiR = luLT.solve(Ri);  // L^{-T} Rt_i
      const double lhs =
          mic_border(i + 1) * mic_border(i + 1) - d11sq;
      res(1 + i) = lhs - (LiR.squaredNorm() - 2.0 * b.dot(Ri));
    }
    // con_222: d_1j^2 - d_11^2 = St_j^T G St_j + 2 (Gb)^T St_j, G = L^T L
    for (Eigen::Index j = 0; j < n1; ++j) {
      const Vec3 Sj = fact.St.col(j);
      const Vec3 LS = L * Sj;
      const Vec3 Lb = L * b;
      const double lhs = src_border(j + 1) * src_border(j + 1) - d11sq;
      res(1 + m1 + j) = lhs - (LS.squaredNorm() + 2.0 * Lb.dot(LS));
    }
    return res;
  }
};

Upgrade upgrade_from_H(const Mat3& H, const Vec3& b) {
  Eigen::LLT<Mat3> llt(H);
  if (llt.info() != Eigen::Success) {
    raise(ErrorCode::IndefiniteH,
          "estimated H is not positive definite (wrong offsets or inliers)");
  }
  Upgrade up;
  up.H = H;
  up.b = b;
  up.L = upper_chol(H.inverse());
  return up;
}

Upgrade solve_upgrade_nonlinear(const Factorization& fact,
                                const Eigen::VectorXd& mic_border,
                                const Eigen::VectorXd& src_border,
                                std::uint64_t seed) {
  const Eigen::Index n_res = 1 + fact.Rt.cols() + fact.St.cols();
  if (n_res < 9) {
    raise(ErrorCode::InsufficientEquations,
          "need >= 9 border equations for the metric upgrade");
  }
  UpgradeResidual f{fact, mic_border, src_border};

  const int n_starts = 20;
  std::mt19937_64 rng(SeedSplitter(seed).derive(11));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::VectorXd best;
  double best_cost = std::numeric_limits<double>::infinity();

  for (int start = 0; start < n_starts; ++start) {
    Eigen::VectorXd theta(9);
    theta << 1, 0, 0, 1, 0, 1, 0, 0, 0;
    if (start > 0) {
      for (int k = 0; k < 9; ++k) theta(k) += 0.5 * gauss(rng);
      for (int k : {0, 3, 5}) theta(k) = std::abs(theta(k)) + 0.1;
    }
    double lambda = 1e-4;
    Eigen::VectorXd r = f(theta);
    double cost = r.squaredNorm();
    for (int it = 0; it < 100; ++it) {
      // forward differences; the problem is small and well scaled
      Eigen::MatrixXd J(r.size(), 9);
      const double h = 1e-7;
      for (int k = 0; k < 9; ++k) {
        Eigen::VectorXd tp = theta;
        tp(k) += h * (1.0 + std::abs(theta(k)));
        J.col(k) = (f(tp) - r) / (h * (1.0 + std::abs(theta(k))));
      }
      const Eigen::MatrixXd JtJ = J.transpose() * J;
      const Eigen::VectorXd g = J.transpose() * r;
      bool stepped = false;
      for (int attempt = 0; attempt < 12; ++attempt) {
        Eigen::MatrixXd A = JtJ;
        A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
        const Eigen::VectorXd delta = A.ldlt().solve(-g);
        Eigen::VectorXd cand = theta + delta;
        const Eigen::VectorXd rc = f(cand);
        if (rc.squaredNorm() < cost) {
          theta = cand;
          r = rc;
          const double prev = cost;
          cost = rc.squaredNorm();
          lambda = std::max(lambda * 0.3, 1e-12);
          stepped = true;
          if (prev - cost < 1e-14 * (prev + 1e-30)) it = 100;
          break;
        }
        lambda *= 10.0;
      }
      if (!stepped) break;
    }
    // L must stay invertible for the parametrization to mean anything
    if (std::abs(theta(0) * theta(3) * theta(5)) < 1e-12) continue;
    if (cost < best_cost) {
      best_cost = cost;
      best = theta;
    }
  }
  if (!best.size()) {
    raise(ErrorCode::IndefiniteH, "metric upgrade optimization failed");
  }
  Mat3 L = UpgradeResidual::unpack_L(best);
  // Canonical sign: positive diagonal.
  for (int k = 0; k < 3; ++k) {
    if (L(k, k) < 0) L.row(k) = -L.row(k);
  }
  Upgrade up;
  up.L = L;
  up.H = (L.transpose() * L).inverse();
  up.b = best.segment<3>(6);
  return up;
}

}  // namespace

Upgrade solve_upgrade(const Factorization& fact,
                      const Eigen::VectorXd& mic_border,
                      const std::optional<Eigen::VectorXd>& source_border,
                      std::uint64_t seed) {
  const Eigen::Index m1 = fact.Rt.cols();  // m - 1
  if (mic_border.size() != m1 + 1) {
    raise(ErrorCode::CountMismatch, "mic border must hold d_11..d_m1");
  }
  if (source_border && source_border->size() != fact.St.cols() + 1) {
    raise(ErrorCode::CountMismatch, "source border must hold d_11..d_1n");
  }
  const double d11sq = mic_border(0) * mic_border(0);

  if (m1 >= 9) {
    // con_333 linear in (H, b).
    Eigen::MatrixXd A(m1, 9);
    Eigen::VectorXd rhs(m1);
    for (Eigen::Index i = 0; i < m1; ++i) {
      const Vec3 Ri = fact.Rt.col(i);
      A.block<1, 6>(i, 0) = quadratic_row(Ri);
      A.block<1, 3>(i, 6) = -2.0 * Ri.transpose();
      rhs(i) = mic_border(i + 1) * mic_border(i + 1) - d11sq;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues()(8) < 1e-10 * svd.singularValues()(0)) {
      raise(ErrorCode::InsufficientEquations,
            "mic border equations are rank deficient");
    }
    const Eigen::VectorXd x = svd.solve(rhs);
    return upgrade_from_H(sym_from_vec(x.head<6>()), x.tail<3>());
  }

  if (source_border && fact.St.cols() >= 9) {
    // con_222 linear in (G, c) with G = H^-1, c = G b.
    const Eigen::Index n1 = fact.St.cols();
    Eigen::MatrixXd A(n1, 9);
    Eigen::VectorXd rhs(n1);
    for (Eigen::Index j = 0; j < n1; ++j) {
      const Vec3 Sj = fact.St.col(j);
      A.block<1, 6>(j, 0) = quadratic_row(Sj);
      A.block<1, 3>(j, 6) = 2.0 * Sj.transpose();
      rhs(j) = (*source_border)(j + 1) * (*source_border)(j + 1) - d11sq;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues()(8) < 1e-10 * svd.singularValues()(0)) {
      raise(ErrorCode::InsufficientEquations,
            "source border equations are rank deficient");
    }
    const Eigen::VectorXd x = svd.solve(rhs);
    const Mat3 G = sym_from_vec(x.head<6>());
    Eigen::LLT<Mat3> llt(G);
    if (llt.info() != Eigen::Success) {
      raise(ErrorCode::IndefiniteH,
            "estimated H^-1 is not positive definite");
    }
    Upgrade up;
    up.L = upper_chol(G);
    up.H = G.inverse();
    up.b = llt.solve(x.tail<3>());
    return up;
  }

  if (!source_border) {
    raise(ErrorCode::InsufficientEquations,
          "fewer than 9 mic equations and no source equations supplied");
  }
  return solve_upgrade_nonlinear(fact, mic_border, *source_border, seed);
}

Positions upgrade_positions(const Factorization& fact, const Upgrade& up) {
  Positions out;
  const Eigen::Index m1 = fact.Rt.cols();
  const Eigen::Index n1 = fact.St.cols();
  out.mics.resize(3, m1 + 1);
  out.sources.resize(3, n1 + 1);
  out.mics.col(0).setZero();
  const Mat3 Linv_T = up.L.transpose().inverse();
  for (Eigen::Index i = 0; i < m1; ++i) {
    out.mics.col(i + 1) = Linv_T * fact.Rt.col(i);
  }
  out.sources.col(0) = up.L * up.b;
  for (Eigen::Index j = 0; j < n1; ++j) {
    out.sources.col(j + 1) = up.L * (fact.St.col(j) + up.b);
  }
  return out;
}

namespace {

// Rigid transform (no reflection) taking r1 to the origin, r2 onto +x and
// some third non-collinear mic into the xy plane.
void apply_gauge(Eigen::Matrix3Xd& mics, Eigen::Matrix3Xd& sources) {
  const Eigen::Index m = mics.cols();
  if (m < 3) return;
  const Vec3 origin = mics.col(0);
  const Vec3 ex_raw = mics.col(1) - origin;
  if (ex_raw.norm() < 1e-12) {
    raise(ErrorCode::DegenerateConfiguration, "mics 1 and 2 coincide");
  }
  const Vec3 e1 = ex_raw.normalized();
  // Third gauge mic: the one with the largest component off the r1-r2 line.
  Eigen::Index third = -1;
  double best = 1e-10 * ex_raw.norm();
  for (Eigen::Index i = 2; i < m; ++i) {
    const Vec3 v = mics.col(i) - origin;
    const double off = (v - v.dot(e1) * e1).norm();
    if (off > best) {
      best = off;
      third = i;
    }
  }
  if (third < 0) {
    raise(ErrorCode::DegenerateConfiguration, "all microphones collinear");
  }
  const Vec3 v3 = mics.col(third) - origin;
  const Vec3 e2 = (v3 - v3.dot(e1) * e1).normalized();
  const Vec3 e3 = e1.cross(e2);
  Mat3 R;
  R.row(0) = e1.transpose();
  R.row(1) = e2.transpose();
  R.row(2) = e3.transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    mics.col(i) = R * (mics.col(i) - origin);
  }
  for (Eigen::Index j = 0; j < sources.cols(); ++j) {
    sources.col(j) = R * (sources.col(j) - origin);
  }
}

struct MicParamMap {
  // Parameter offsets per mic; mic 0 fixed, mic 1 has 1 dof, mic 2 has 2.
  std::vector<int> offset;
  std::vector<int> count;
  int total = 0;

  explicit MicParamMap(Eigen::Index m) {
    offset.resize(m);
    count.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      count[i] = i == 0 ? 0 : (i == 1 ? 1 : (i == 2 ? 2 : 3));
      offset[i] = total;
      total += count[i];
    }
  }
};

}  // namespace

void bundle_residual_jacobian(const Eigen::MatrixXd& U, const BoolMask& mask,
                              const Eigen::Matrix3Xd& mics,
                              const Eigen::Matrix3Xd& sources,
                              const Eigen::VectorXd& offsets,
                              Eigen::VectorXd* residuals,
                              Eigen::MatrixXd* jacobian) {
  const Eigen::Index m = mics.cols();
  const Eigen::Index n = sources.cols();
  const MicParamMap map(m);
  const int n_params = map.total + 4 * static_cast<int>(n);

  Eigen::Index n_res = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < m; ++i)
      if (mask(i, j)) ++n_res;

  residuals->resize(n_res);
  if (jacobian) jacobian->setZero(n_res, n_params);

  Eigen::Index row = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!mask(i, j)) continue;
      const Vec3 diff = mics.col(i) - sources.col(j);
      const double d = diff.norm();
      (*residuals)(row) = U(i, j) - (d + offsets(j));
      if (jacobian) {
        const Vec3 unit = d > 1e-14 ? Vec3(diff / d) : Vec3::Zero();
        for (int k = 0; k < map.count[i]; ++k) {
          (*jacobian)(row, map.offset[i] + k) = -unit(k);
        }
        const int cj = map.total + 4 * static_cast<int>(j);
        for (int k = 0; k < 3; ++k) (*jacobian)(row, cj + k) = unit(k);
        (*jacobian)(row, cj + 3) = -1.0;
      }
      ++row;
    }
  }
}

BundleResult bundle_adjust(const Eigen::MatrixXd& U, const BoolMask& mask,
                           const Eigen::Matrix3Xd& mics,
                           const Eigen::Matrix3Xd& sources,
                           const Eigen::VectorXd& offsets,
                           const BundleOptions& opts) {
  const Eigen::Index m = mics.cols();
  const Eigen::Index n = sources.cols();
  if (U.rows() != m || U.cols() != n || offsets.size() != n) {
    raise(ErrorCode::CountMismatch, "bundle input dimensions disagree");
  }

  BundleResult state;
  state.mics = mics;
  state.sources = sources;
  state.offsets = offsets;
  apply_gauge(state.mics, state.sources);

  const MicParamMap map(m);
  const int pr = map.total;

  auto eval_cost = [&](const BundleResult& s) {
    double c = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) {
        if (!mask(i, j)) continue;
        const double d = (s.mics.col(i) - s.sources.col(j)).norm();
        const double r = U(i, j) - (d + s.offsets(j));
        c += r * r;
      }
    }
    return c;
  };

  double cost = eval_cost(state);
  double lambda = 1e-6;
  int consecutive_failures = 0;

  Eigen::Index n_res = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < m; ++i)
      if (mask(i, j)) ++n_res;

  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (cost <= 1e-30) break;

    // Normal equations in arrow form: mic block B, per-column blocks C_j.
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(pr, pr);
    Eigen::VectorXd gr = Eigen::VectorXd::Zero(pr);
    std::vector<Eigen::Matrix4d> C(n, Eigen::Matrix4d::Zero());
    std::vector<Eigen::Vector4d> gc(n, Eigen::Vector4d::Zero());
    std::vector<Eigen::MatrixXd> E(n, Eigen::MatrixXd::Zero(pr, 4));

    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) {
        if (!mask(i, j)) continue;
        const Vec3 diff = state.mics.col(i) - state.sources.col(j);
        const double d = diff.norm();
        const Vec3 unit = d > 1e-14 ? Vec3(diff / d) : Vec3::Zero();
        const double res = U(i, j) - (d + state.offsets(j));

        Eigen::Vector4d jc;
        jc << unit(0), unit(1), unit(2), -1.0;
        C[j] += jc * jc.transpose();
        gc[j] += jc * res;

        const int nc = map.count[i];
        if (nc > 0) {
          Eigen::VectorXd jr = Eigen::VectorXd::Zero(nc);
          for (int k = 0; k < nc; ++k) jr(k) = -unit(k);
          B.block(map.offset[i], map.offset[i], nc, nc) +=
              jr * jr.transpose();
          gr.segment(map.offset[i], nc) += jr * res;
          E[j].block(map.offset[i], 0, nc, 4) += jr * jc.transpose();
        }
      }
    }

    bool stepped = false;
    for (int attempt = 0; attempt < opts.max_damping_failures + 2;
         ++attempt) {
      // Damped Schur solve for the mic step, then back-substitution.
      Eigen::MatrixXd Bd = B;
      Bd.diagonal() += lambda * B.diagonal().cwiseMax(1e-12);
      Eigen::MatrixXd S = Bd;
      Eigen::VectorXd rhs = gr;
      std::vector<Eigen::Matrix4d> Cinv(n);
      bool solvable = true;
      for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::Matrix4d Cd = C[j];
        Cd.diagonal() += lambda * C[j].diagonal().cwiseMax(1e-12);
        Eigen::FullPivLU<Eigen::Matrix4d> lu(Cd);
        if (!lu.isInvertible()) {
          solvable = false;
          break;
        }
        Cinv[j] = lu.inverse();
        S -= E[j] * Cinv[j] * E[j].transpose();
        rhs -= E[j] * (Cinv[j] * gc[j]);
      }
      Eigen::VectorXd dr;
      if (solvable) {
        dr = S.ldlt().solve(-rhs);
        solvable = dr.allFinite();
      }
      if (solvable) {
        BundleResult cand = state;
        for (Eigen::Index i = 0; i < m; ++i) {
          for (int k = 0; k < map.count[i]; ++k) {
            cand.mics(k, i) += dr(map.offset[i] + k);
          }
        }
        for (Eigen::Index j = 0; j < n; ++j) {
          const Eigen::Vector4d dc =
              -Cinv[j] * (gc[j] + E[j].transpose() * dr);
          cand.sources.col(j) += dc.head<3>();
          cand.offsets(j) += dc(3);
        }
        const double cand_cost = eval_cost(cand);
        if (cand_cost <= cost) {
          const double prev = cost;
          state = cand;
          cost = cand_cost;
          lambda = std::max(lambda * 0.3, 1e-14);
          consecutive_failures = 0;
          stepped = true;
          if (prev - cost < opts.rel_tol * (prev + 1e-300)) {
            it = opts.max_iterations;  // converged
          }
          break;
        }
      }
      lambda *= 10.0;
      if (++consecutive_failures >= opts.max_damping_failures) {
        raise(ErrorCode::Diverged, "bundle adjustment failed to descend");
      }
    }
    if (!stepped) break;
  }

  state.cost = cost;
  state.iterations = std::min(it + 1, opts.max_iterations);
  state.residual_rms =
      n_res > 0 ? std::sqrt(cost / static_cast<double>(n_res)) : 0.0;
  return state;
}

std::pair<Vec3, Vec3> sphere_intersection(const Vec3& p1, const Vec3& p2,
                                          const Vec3& p3, double d1, double d2,
                                          double d3) {
  const Vec3 ex_raw = p2 - p1;
  const double dd = ex_raw.norm();
  if (dd < 1e-12) {
    raise(ErrorCode::DegenerateGeometry, "sphere centers coincide");
  }
  const Vec3 ex = ex_raw / dd;
  const Vec3 v3 = p3 - p1;
  const double i = ex.dot(v3);
  const Vec3 ey_raw = v3 - i * ex;
  const double jlen = ey_raw.norm();
  if (jlen < 1e-12 * std::max(1.0, dd)) {
    raise(ErrorCode::DegenerateGeometry, "sphere centers collinear");
  }
  const Vec3 ey = ey_raw / jlen;
  const Vec3 ez = ex.cross(ey);

  const double x = (d1 * d1 - d2 * d2 + dd * dd) / (2.0 * dd);
  const double y =
      (d1 * d1 - d3 * d3 + i * i + jlen * jlen - 2.0 * i * x) / (2.0 * jlen);
  double z_sq = d1 * d1 - x * x - y * y;
  const double slack = 1e-9 * std::max({d1 * d1, d2 * d2, d3 * d3, 1e-12});
  if (z_sq < -slack) {
    raise(ErrorCode::NoIntersection, "spheres do not intersect");
  }
  z_sq = std::max(z_sq, 0.0);
  const double z = std::sqrt(z_sq);
  const Vec3 base = p1 + x * ex + y * ey;
  return {base + z * ez, base - z * ez};
}

namespace {

int count_distance_inliers(const Vec3& x, const std::vector<Vec3>& pts,
                           const std::vector<double>& dists, double tol,
                           double* sum_abs) {
  int count = 0;
  double s = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double r = std::abs((x - pts[k]).norm() - dists[k]);
    if (r <= tol) {
      ++count;
      s += r;
    }
  }
  if (sum_abs) *sum_abs = s;
  return count;
}

Vec3 refine_point(Vec3 x, const std::vector<Vec3>& pts,
                  const std::vector<double>& dists, double tol) {
  for (int it = 0; it < 25; ++it) {
    Mat3 H = Mat3::Zero();
    Vec3 g = Vec3::Zero();
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const Vec3 diff = x - pts[k];
      const double d = diff.norm();
      if (d < 1e-12) continue;
      const double r = d - dists[k];
      if (std::abs(r) > tol) continue;  // refine on inliers only
      const Vec3 u = diff / d;
      H += u * u.transpose();
      g += u * r;
    }
    const Vec3 step = (H + 1e-12 * Mat3::Identity()).ldlt().solve(-g);
    x += step;
    if (step.norm() < 1e-14) break;
  }
  return x;
}

}  // namespace

Vec3 trilaterate(const std::vector<Vec3>& points,
                 const std::vector<double>& distances,
                 const TrilaterationOptions& opts) {
  if (points.size() != distances.size()) {
    raise(ErrorCode::CountMismatch, "points/distances size mismatch");
  }
  const std::size_t n = points.size();
  if (n < 3) {
    raise(ErrorCode::InsufficientData, "trilateration needs >= 3 points");
  }
  // Coplanar supports cannot select the mirror branch.
  {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : points) mean += p;
    mean /= static_cast<double>(n);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : points) cov += (p - mean) * (p - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    if (eig.eigenvalues()(0) < 1e-16 * std::max(eig.eigenvalues()(2), 1e-12)) {
      raise(ErrorCode::AmbiguousMirror, "all support points coplanar");
    }
  }

  std::mt19937_64 rng(SeedSplitter(opts.seed).derive(12));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  Vec3 best = Vec3::Zero();
  int best_count = -1;
  double best_sum = 0.0;
  bool found = false;

  const std::size_t triple_count = n * (n - 1) * (n - 2) / 6;
  const bool exhaustive = triple_count <= static_cast<std::size_t>(opts.iterations);

  auto consider = [&](std::size_t a, std::size_t b, std::size_t c) {
    std::pair<Vec3, Vec3> cands;
    try {
      cands = sphere_intersection(points[a], points[b], points[c],
                                  distances[a], distances[b], distances[c]);
    } catch (const Error&) {
      return;
    }
    for (const Vec3& cand : {cands.first, cands.second}) {
      double sum = 0.0;
      const int cnt =
          count_distance_inliers(cand, points, distances, opts.inlier_tol, &sum);
      if (cnt > best_count || (cnt == best_count && sum < best_sum)) {
        best_count = cnt;
        best_sum = sum;
        best = cand;
        found = true;
      }
    }
  };

  if (exhaustive) {
    for (std::size_t a = 0; a + 2 < n; ++a)
      for (std::size_t b = a + 1; b + 1 < n; ++b)
        for (std::size_t c = b + 1; c < n; ++c) consider(a, b, c);
  } else {
    for (int it = 0; it < opts.iterations; ++it) {
      std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
      if (a == b || b == c || a == c) continue;
      consider(a, b, c);
    }
  }

  if (!found || best_count < 3) {
    raise(ErrorCode::NoIntersection,
          "no sphere triple produced a consistent intersection");
  }
  return refine_point(best, points, distances, opts.inlier_tol);
}

ColumnLocalization localize_column(const Eigen::Matrix3Xd& mics,
                                   const Eigen::VectorXd& u_col,
                                   const std::vector<int>& rows) {
  ColumnLocalization out;
  const std::size_t k = rows.size();
  if (k < 5) return out;

  // Linear lifting: subtract the squared equation of the first row.
  const int i0 = rows[0];
  Eigen::MatrixXd A(k - 1, 4);
  Eigen::VectorXd rhs(k - 1);
  for (std::size_t t = 1; t < k; ++t) {
    const int i = rows[t];
    const Vec3 dm = mics.col(i) - mics.col(i0);
    A.block<1, 3>(t - 1, 0) = 2.0 * dm.transpose();
    A(t - 1, 3) = -2.0 * (u_col(i) - u_col(i0));
    rhs(t - 1) = mics.col(i).squaredNorm() - mics.col(i0).squaredNorm() -
                 (u_col(i) * u_col(i) - u_col(i0) * u_col(i0));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.singularValues()(3) < 1e-10 * svd.singularValues()(0)) {
    return out;  // near-planar support, no stable solution
  }
  Eigen::VectorXd x = svd.solve(rhs);
  Vec3 s = x.head<3>();
  double o = x(3);

  // Gauss-Newton polish on the true residuals.
  for (int it = 0; it < 20; ++it) {
    Eigen::MatrixXd J(k, 4);
    Eigen::VectorXd r(k);
    for (std::size_t t = 0; t < k; ++t) {
      const int i = rows[t];
      const Vec3 diff = s - mics.col(i);
      const double d = diff.norm();
      r(t) = (d + o) - u_col(i);
      const Vec3 unit = d > 1e-14 ? Vec3(diff / d) : Vec3::Zero();
      J.block<1, 3>(t, 0) = unit.transpose();
      J(t, 3) = 1.0;
    }
    Eigen::Matrix4d JtJ = J.transpose() * J;
    JtJ.diagonal().array() += 1e-12;
    const Eigen::Vector4d delta = JtJ.ldlt().solve(-J.transpose() * r);
    s += delta.head<3>();
    o += delta(3);
    if (delta.norm() < 1e-13 * (1.0 + std::abs(o))) break;
  }

  out.ok = true;
  out.source = s;
  out.offset = o;
  out.residuals.resize(k);
  for (std::size_t t = 0; t < k; ++t) {
    out.residuals(t) = ((s - mics.col(rows[t])).norm() + o) - u_col(rows[t]);
  }
  return out;
}

ExpandResult expand_inliers(const TdoaMatrix& tdoa,
                            const Eigen::Matrix3Xd& mics,
                            const std::vector<Eigen::Index>& inlier_columns,
                            double res_tol, int min_count,
                            const BundleOptions& opts) {
  const Eigen::Index m = tdoa.rows();
  const Eigen::Index n = tdoa.cols();
  if (mics.cols() != m) {
    raise(ErrorCode::CountMismatch, "mic count does not match the matrix");
  }

  std::vector<bool> is_inlier(n, false);
  for (Eigen::Index j : inlier_columns) is_inlier[j] = true;

  std::vector<Eigen::Index> enlarged;
  std::vector<Vec3> col_source(n);
  std::vector<double> col_offset(n, 0.0);
  std::vector<bool> usable(n, false);

  for (Eigen::Index j = 0; j < n; ++j) {
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (tdoa.mask(i, j)) rows.push_back(static_cast<int>(i));
    }
    const auto loc = localize_column(mics, tdoa.U.col(j), rows);
    if (!loc.ok) {
      if (is_inlier[j]) {
        // keep the previous decision even if the column got thin
        enlarged.push_back(j);
      }
      continue;
    }
    int good = 0;
    for (Eigen::Index t = 0; t < loc.residuals.size(); ++t) {
      if (std::abs(loc.residuals(t)) < res_tol) ++good;
    }
    if (good >= min_count || is_inlier[j]) {
      enlarged.push_back(j);
      col_source[j] = loc.source;
      col_offset[j] = loc.offset;
      usable[j] = true;
    }
  }

  if (enlarged.empty()) {
    raise(ErrorCode::NoConsensus, "no usable columns to expand");
  }

  // Re-run bundle adjustment on the enlarged set.
  const Eigen::Index ne = static_cast<Eigen::Index>(enlarged.size());
  Eigen::MatrixXd U(m, ne);
  BoolMask mask(m, ne);
  Eigen::Matrix3Xd sources(3, ne);
  Eigen::VectorXd offsets(ne);
  for (Eigen::Index c = 0; c < ne; ++c) {
    const Eigen::Index j = enlarged[c];
    U.col(c) = tdoa.U.col(j);
    mask.col(c) = tdoa.mask.col(j);
    if (usable[j]) {
      sources.col(c) = col_source[j];
      offsets(c) = col_offset[j];
    } else {
      sources.col(c).setZero();
      offsets(c) = 0.0;
    }
  }

  ExpandResult out;
  out.inlier_columns = enlarged;
  out.refined = bundle_adjust(U, mask, mics, sources, offsets, opts);
  return out;
}

}  // namespace miccal
