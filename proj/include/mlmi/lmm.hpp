#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmi/dataset.hpp"

namespace mlmi {

struct FixedTerm {
  enum class Kind { intercept, main, product, square };
  Kind kind = Kind::main;
  std::string a;
  std::string b;  // product only

  static FixedTerm Intercept() { return {Kind::intercept, "", ""}; }
  static FixedTerm Main(std::string col) { return {Kind::main, std::move(col), ""}; }
  static FixedTerm Product(std::string x, std::string y) {
    return {Kind::product, std::move(x), std::move(y)};
  }
  static FixedTerm Square(std::string col) { return {Kind::square, std::move(col), ""}; }

  std::string label() const;
};

// Random-intercept LMM specification.  random_intercepts is ordered outermost
// first: {"school", "school:child"} gives the three-level model, {"school"}
// a two-level one.  "school:child" means children nested in schools.
struct LmmSpec {
  std::string response;
  std::vector<FixedTerm> fixed_terms;
  std::vector<std::string> random_intercepts;
};

struct LmmFit {
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd se_beta;
  std::vector<std::string> term_labels;
  // (sigma3^2, sigma2^2, sigma1^2): outer-group, inner-group, residual.
  // A single random intercept reports its variance in the level-2 slot.
  double vc3 = 0.0, vc2 = 0.0, vc1 = 0.0;
  double reml_loglik = 0.0;
  bool converged = false;
  int n_obs = 0;
  int n_groups_l3 = 0;
  int n_groups_l2 = 0;

  double beta(const std::string& label) const;
  double se(const std::string& label) const;
};

LmmFit fit_lmm(const LmmSpec& spec, const LongDataset& data);
LmmFit fit_lmm(const LmmSpec& spec, const WideDataset& data);

// Restricted log-likelihood at a fixed variance-component candidate
// (vc3, vc2, vc1); the criterion fit_lmm maximizes.  Returns -inf when the
// implied marginal covariance is singular.
double reml_objective(const LmmSpec& spec, const LongDataset& data, double vc3,
                      double vc2, double vc1);
double reml_objective(const LmmSpec& spec, const WideDataset& data, double vc3,
                      double vc2, double vc1);

// Dense-design entry point shared by the dataset overloads and by samplers
// that assemble their own designs.  group_outer/group_inner are per-row group
// codes; pass an empty vector to drop a level.
struct RemlResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd beta_cov;
  double vc_outer = 0.0, vc_inner = 0.0, vc_resid = 0.0;
  double loglik = 0.0;
  bool converged = false;
};

RemlResult fit_reml(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                    const std::vector<int>& group_outer,
                    const std::vector<int>& group_inner,
                    const std::vector<std::string>& labels);

double reml_loglik_at(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                      const std::vector<int>& group_outer,
                      const std::vector<int>& group_inner, double vc_outer,
                      double vc_inner, double vc_resid);

// Design assembly used by the fitter, the imputers and the tests.
Eigen::MatrixXd build_fixed_design(const std::vector<FixedTerm>& terms,
                                   const LongDataset& data,
                                   std::vector<std::string>* labels = nullptr);
Eigen::MatrixXd build_fixed_design(const std::vector<FixedTerm>& terms,
                                   const WideDataset& data,
                                   std::vector<std::string>* labels = nullptr);

}  // namespace mlmi
