#pragma once

#include <array>
#include <string>
#include <vector>

#include "mlmi/imputers.hpp"
#include "mlmi/lmm.hpp"
#include "mlmi/model.hpp"

namespace mlmi {

struct PooledParameter {
  std::string label;
  double qbar = 0.0;   // pooled point estimate
  double wbar = 0.0;   // within-imputation variance
  double b = 0.0;      // between-imputation variance
  double t = 0.0;      // total variance
  double df = 0.0;     // Barnard-Rubin degrees of freedom
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct RepEstimate {
  std::vector<PooledParameter> params;
  std::array<double, 3> vc{};  // (vc3, vc2, vc1) pooled means
  int n_obs = 0;
  bool converged = true;
};

// Fits the three-level analysis model to one completed dataset.  For JAV
// variants derived_interaction names the imputed derived column.
LmmFit fit_substantive(const SubstantiveModelSpec& model, const LongDataset& completed,
                       const std::string& derived_interaction = "");

// Rubin's rules with Barnard-Rubin small-sample df; n_com is the
// complete-data df (n_obs - p).
PooledParameter rubin_pool(const std::string& label, const std::vector<double>& q,
                           const std::vector<double>& se, int n_com);

std::array<double, 3> pool_variance_components(
    const std::vector<std::array<double, 3>>& vcs);

// Full per-replication pipeline over an imputed set (long-format datasets).
RepEstimate pool_imputed_set(const SubstantiveModelSpec& model,
                             const std::vector<LongDataset>& completed,
                             const std::string& derived_interaction = "");

}  // namespace mlmi
