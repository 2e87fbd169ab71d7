#pragma once

#include <Eigen/Dense>
#include <vector>

namespace miccal {

using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// m x n range-difference measurements. Row i = microphone i, column j =
// sound event j. Row 1 is zero where observed (u_1 = 0 convention); the
// mask marks observed entries. Missing entries are NaN in serialized form.
struct TdoaMatrix {
  Eigen::MatrixXd U;
  BoolMask mask;
  std::vector<double> event_times;

  TdoaMatrix() = default;
  TdoaMatrix(Eigen::Index m, Eigen::Index n)
      : U(Eigen::MatrixXd::Zero(m, n)), mask(BoolMask::Constant(m, n, true)),
        event_times(static_cast<std::size_t>(n), 0.0) {}

  Eigen::Index rows() const { return U.rows(); }
  Eigen::Index cols() const { return U.cols(); }

  bool observed(Eigen::Index i, Eigen::Index j) const { return mask(i, j); }

  Eigen::Index observed_count() const {
    return static_cast<Eigen::Index>(mask.count());
  }
};

}  // namespace miccal
