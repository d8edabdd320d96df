#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mlmi/rng.hpp"

namespace mlmi {

// Posterior draws for Bayesian normal regression building blocks shared by
// the imputers.  Coefficient priors are flat; scalar variances carry
// InvGamma(0.001, 0.001) priors and covariance matrices InvWishart(q+1, I).

struct RegressionDraw {
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
};

// sigma2 ~ rss / chi2(n - p) folded with the IG prior, beta ~ N(beta_hat,
// sigma2 (X'X)^-1).  Throws on a rank-deficient design.
RegressionDraw draw_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               Rng& rng);

struct MvRegressionDraw {
  Eigen::MatrixXd B;      // p x q
  Eigen::MatrixXd Sigma;  // q x q residual covariance
};

// One Gibbs sweep for the multivariate regression Y = X B + E given the
// previous Sigma: Sigma | B_prev then B | Sigma.  chol_xtx_inv is the lower
// Cholesky factor of (X'X)^-1, precomputed by the caller since X is fixed.
MvRegressionDraw draw_mv_regression(const Eigen::MatrixXd& X,
                                    const Eigen::MatrixXd& Y,
                                    const Eigen::MatrixXd& chol_xtx_inv,
                                    const Eigen::MatrixXd& B_prev, Rng& rng);

// Conditional-normal factor of a fixed joint covariance for one missingness
// pattern: x[mis] | x[obs] with row-specific joint mean.
struct ConditionalNormal {
  std::vector<int> obs, mis;
  Eigen::MatrixXd reg;        // Sig_mo Sig_oo^-1
  Eigen::MatrixXd chol_cond;  // lower Cholesky of the conditional covariance
  Eigen::MatrixXd cond_cov;

  ConditionalNormal() = default;
  ConditionalNormal(const Eigen::MatrixXd& sigma, std::vector<int> obs_idx,
                    std::vector<int> mis_idx);

  // mu is the full joint mean for this row; x holds the observed entries and
  // receives draws in the missing ones.
  void draw_into(const Eigen::VectorXd& mu, Eigen::VectorXd& x, Rng& rng) const;
};

// Contiguous-group index: rows of each group are adjacent.
struct GroupIndex {
  std::vector<int> start, len;
  std::vector<int> of_row;  // group code per row

  static GroupIndex from_codes(const std::vector<int>& codes);
  int n_groups() const { return static_cast<int>(start.size()); }
};

// Persistent state of a univariate two-level Gibbs sampler
// y = X beta + u_g + e, u_g ~ N(0, sig_u2), e ~ N(0, sig_e2).
struct UniLmm2State {
  Eigen::VectorXd beta;
  Eigen::VectorXd u;
  double sig_u2 = 1.0;
  double sig_e2 = 1.0;

  void init(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
            const GroupIndex& g);
  void sweep(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
             const GroupIndex& g, Rng& rng);
  double mean_row(const Eigen::Ref<const Eigen::RowVectorXd>& x, int group) const {
    return x * beta + u(group);
  }
};

// Three-level version: y = X beta + v_outer + u_inner + e with inner groups
// nested in outer ones.
struct UniLmm3State {
  Eigen::VectorXd beta;
  Eigen::VectorXd v;  // outer (school)
  Eigen::VectorXd u;  // inner (child)
  double sig_v2 = 1.0;
  double sig_u2 = 1.0;
  double sig_e2 = 1.0;

  void init(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
            const GroupIndex& outer, const GroupIndex& inner);
  void sweep(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
             const GroupIndex& outer, const GroupIndex& inner, Rng& rng);
  double mean_row(const Eigen::Ref<const Eigen::RowVectorXd>& x, int outer_g,
                  int inner_g) const {
    return x * beta + v(outer_g) + u(inner_g);
  }
};

}  // namespace mlmi
