#pragma once

#include <Eigen/Dense>
#include <vector>

#include "defacto/errors.hpp"
#include "defacto/rng.hpp"

namespace defacto {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Symmetric positive definite covariance matrix over the T+1 visit grid
// (baseline included). Symmetry is enforced at construction; positive
// definiteness is checked whenever the matrix is factorized.
class CovMatrix {
 public:
  CovMatrix() = default;
  explicit CovMatrix(MatrixXd m);

  int dim() const { return static_cast<int>(m_.rows()); }
  const MatrixXd& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  MatrixXd m_;
};

struct MvnParams {
  VectorXd mean;
  CovMatrix cov;

  MvnParams() = default;
  MvnParams(VectorXd mean, CovMatrix cov);
  int dim() const { return static_cast<int>(mean.size()); }
};

// Regression of the post-t block on the pre-t block (baseline through t)
// of a joint MVN: beta = Sigma_post,pre * Sigma_pre,pre^-1, together with
// the residual covariance of the post block given the pre block.
struct ConditionalRegression {
  int split_index = 0;        // t: pre = visits 0..t, post = t+1..T
  MatrixXd beta;              // (T-t) x (t+1)
  CovMatrix residual_cov;     // (T-t) x (T-t)
};

// Lower-triangular Cholesky factor, L * L^T = cov. Throws
// NotPositiveDefinite when a pivot falls at or below
// 1e-10 * max(diagonal), which flags degenerate fitted covariances.
MatrixXd cholesky(const CovMatrix& cov);

// Solves cov * X = rhs using an existing lower Cholesky factor.
MatrixXd cholesky_solve(const MatrixXd& lower, const MatrixXd& rhs);

ConditionalRegression conditional_regression(const MvnParams& params, int t);

// Conditional distribution of the unobserved coordinates given observed
// index/value pairs. Indices must be distinct and in range; the returned
// parameters are over the unobserved coordinates in increasing index order.
MvnParams conditional_mvn(const MvnParams& params,
                          const std::vector<std::pair<int, double>>& observed);

VectorXd mvn_sample(const MvnParams& params, Rng& rng);

// As above but reusing a precomputed lower factor of params.cov.
VectorXd mvn_sample(const VectorXd& mean, const MatrixXd& lower, Rng& rng);

}  // namespace defacto
