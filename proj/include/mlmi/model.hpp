#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mlmi/lmm.hpp"

namespace mlmi {

enum class AnalysisModel { model1, model2, model3 };

std::string to_string(AnalysisModel m);
AnalysisModel analysis_model_from_string(const std::string& s);

// The three target analysis models: a three-level random-intercept regression
// of the outcome on the lagged exposure, wave, one interaction or quadratic
// term, and the baseline confounders.
struct SubstantiveModelSpec {
  AnalysisModel model = AnalysisModel::model1;

  std::string response = "napz";
  std::string exposure = "dep";

  FixedTerm interaction_term() const {
    switch (model) {
      case AnalysisModel::model1: return FixedTerm::Product("dep", "wave");
      case AnalysisModel::model2: return FixedTerm::Product("dep", "ses");
      case AnalysisModel::model3: return FixedTerm::Square("dep");
    }
    throw std::logic_error("bad model");
  }

  // beta0..beta7 ordering; the interaction/quadratic term sits at index 3.
  // When derived_interaction names a column (JAV analysis), that column is
  // used verbatim in place of the recomputed product/square.
  std::vector<FixedTerm> fixed_terms(const std::string& derived_interaction = "") const {
    std::vector<FixedTerm> t;
    t.push_back(FixedTerm::Intercept());
    t.push_back(FixedTerm::Main("dep"));
    t.push_back(FixedTerm::Main("wave"));
    t.push_back(derived_interaction.empty() ? interaction_term()
                                            : FixedTerm::Main(derived_interaction));
    t.push_back(FixedTerm::Main("napz1"));
    t.push_back(FixedTerm::Main("sex"));
    t.push_back(FixedTerm::Main("ses"));
    t.push_back(FixedTerm::Main("age"));
    return t;
  }

  LmmSpec analysis_spec(const std::string& derived_interaction = "") const {
    return {response, fixed_terms(derived_interaction), {"school", "school:child"}};
  }
};

// Generator coefficients and standard deviations; defaults reproduce the
// simulation design.  beta1/beta3 depend on the analysis model.
struct ParamSet {
  double age_min = 7.0, age_max = 10.0;
  double female_prop = 0.5;

  double eta0 = -0.74, eta1 = 0.23, eta2 = 0.07, eta3 = 0.22;
  double sd_psi = 1.0;

  double delta0 = -0.7, delta1 = 0.1, delta2 = -0.46, delta3 = -0.01,
         delta4 = -0.22, delta5 = 0.02;
  double sd_phi = 1.5, sd_u2 = 0.9, sd_u3 = 0.1;

  double beta0 = 2.0, beta1 = -0.07, beta2 = -0.01, beta3 = 0.013,
         beta4 = 0.71, beta5 = 0.14, beta6 = -0.01, beta7 = -0.20;
  double sd1 = 0.7, sd2 = 0.7, sd3 = 0.2;

  double gamma0 = 16.2, gamma1 = 2.5, gamma2 = -0.1;
  double sd_eps = 2.8, sd_v2 = 4.1, sd_v3 = 0.6;

  void validate() const;

  static ParamSet defaults(AnalysisModel m) {
    ParamSet p;
    switch (m) {
      case AnalysisModel::model1:
        p.beta1 = -0.07;
        p.beta3 = 0.013;
        break;
      case AnalysisModel::model2:
        p.beta1 = -0.024;
        p.beta3 = 0.023;
        break;
      case AnalysisModel::model3:
        p.beta1 = -0.024;
        p.beta3 = -0.009;
        break;
    }
    return p;
  }

  double true_vc3() const { return sd3 * sd3; }
  double true_vc2() const { return sd2 * sd2; }
  double true_vc1() const { return sd1 * sd1; }
};

}  // namespace mlmi
