#pragma once

#include <cstdint>
#include <map>

#include "mlmi/dataset.hpp"
#include "mlmi/model.hpp"
#include "mlmi/rng.hpp"

namespace mlmi {

enum class Mechanism { mar_cats, mar_inflated };

std::string to_string(Mechanism m);
Mechanism mechanism_from_string(const std::string& s);

struct ScenarioConfig {
  std::string name = "scenario";
  int n_schools = 40;
  int school_size = 30;
  AnalysisModel analysis_model = AnalysisModel::model1;
  Mechanism mechanism = Mechanism::mar_cats;
  std::map<int, double> target_missing = {{2, 0.15}, {4, 0.20}, {6, 0.30}};
  double ses_mcar_rate = 0.10;
  std::uint64_t seed = 0;
};

// Response-model coefficients: logit P(observed) = zeta0_k + zeta1 * outcome
// at the next wave + zeta2 * concurrent behaviour score.
struct MissingnessSpec {
  double zeta1 = 1.5;
  double zeta2 = 2.0;
  std::map<int, double> zeta0;  // per exposure wave, filled by calibration

  static MissingnessSpec for_mechanism(Mechanism m) {
    MissingnessSpec s;
    if (m == Mechanism::mar_inflated) {
      s.zeta1 = 3.0;
      s.zeta2 = 4.0;
    }
    return s;
  }
};

// Complete three-level panel: outcome waves 3/5/7, exposure and auxiliary
// measured at the preceding wave, baseline covariates at wave 1.
LongDataset generate_complete(const ScenarioConfig& cfg, const ParamSet& params,
                              Rng& rng);

// Solves, per wave, for the intercept that hits the target missingness
// proportion on this dataset; the mean missing probability is monotone in the
// intercept so bisection converges.  A zero target maps to a finite cap that
// makes every cell observed.
std::map<int, double> calibrate_missingness_intercepts(
    const LongDataset& data, const MissingnessSpec& spec,
    const std::map<int, double>& targets);

// Applies the response model to the exposure and MCAR deletion to SES.
// Appends 0/1 response-indicator columns r_dep and r_ses.
LongDataset impose_missingness(const LongDataset& data, const MissingnessSpec& spec,
                               const ScenarioConfig& cfg, Rng& rng);

}  // namespace mlmi
