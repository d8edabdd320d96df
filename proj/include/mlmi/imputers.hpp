#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mlmi/dataset.hpp"
#include "mlmi/model.hpp"
#include "mlmi/rng.hpp"

namespace mlmi {

enum class Variant { plain, jav, passive_c, passive_all };

std::string to_string(Variant v);

struct ImputationConfig {
  int m = 20;
  int burn_in = 1000;  // JM iterations; FCS cycles
  int between = 100;   // JM draws between saved datasets
  std::uint64_t seed = 0;
  Variant variant = Variant::plain;
  AnalysisModel model = AnalysisModel::model1;  // drives JAV/passive derivations
  bool latent_cluster_means = true;             // SMC-JM-3L
  bool psr_check = false;                       // SMC-JM-3L burn-in gate
};

struct SamplerDiagnostics {
  std::map<std::string, double> psr;         // per parameter
  std::map<std::string, double> acceptance;  // per target column
  std::vector<std::string> warnings;
};

// m completed datasets.  Wide-format imputers fill `wide`, long-format ones
// fill `completed`; observed cells are identical to the input in either case.
struct ImputedSet {
  std::vector<WideDataset> wide;
  std::vector<LongDataset> completed;
  SamplerDiagnostics diagnostics;

  std::size_t size() const { return wide.empty() ? completed.size() : wide.size(); }
};

// Conventional strategies (wide format, school clustering via dummy
// indicators or random intercepts).
ImputedSet impute_jm_1l_di_wide(const WideDataset& data, const ImputationConfig& cfg);
ImputedSet impute_fcs_1l_di_wide(const WideDataset& data, const ImputationConfig& cfg);
ImputedSet impute_jm_2l_wide(const WideDataset& data, const ImputationConfig& cfg);
ImputedSet impute_fcs_2l_wide(const WideDataset& data, const ImputationConfig& cfg);

// Appends the interaction (model2) or square (model3) wide columns, missing
// wherever a parent is missing; they are then imputed as ordinary variables.
WideDataset derive_jav_columns(const WideDataset& data,
                               const SubstantiveModelSpec& model);

// Derived predictor terms recomputed from the current imputations at every
// FCS visit, keyed by target column.
struct PassivePlan {
  std::map<std::string, std::vector<FixedTerm>> extra_predictors;
};

PassivePlan passive_predictor_plan(Variant variant, const SubstantiveModelSpec& model,
                                   const std::vector<int>& waves = {3, 5, 7});

// Metropolis step with an independence proposal from the covariate full
// conditional: acceptance probability min(1, exp(ll(prop) - ll(cur))).
// Consumes exactly one uniform draw.
double mh_step(double current, double proposal,
               const std::function<double(double)>& loglik_sub, Rng& rng);

enum class CovFamily { normal_glm, lmm_2l, lmm_3l };
enum class ClusterMeanKind { manifest, latent };

struct CovariateModelStep {
  std::string target;
  CovFamily family = CovFamily::normal_glm;
  std::vector<std::string> predictors;
  ClusterMeanKind cluster_means = ClusterMeanKind::latent;
};

struct CovariateModelPlan {
  std::vector<CovariateModelStep> steps;

  // SES by normal regression, then dep by a two-level LMM; ascending
  // missingness order.
  static CovariateModelPlan default_2l(const LongDataset& data);
};

// Substantive-model-compatible samplers (long format).
ImputedSet impute_smc_jm_2l_di(const LongDataset& data,
                               const SubstantiveModelSpec& model,
                               const ImputationConfig& cfg);
ImputedSet impute_smc_sm_2l_di(const LongDataset& data,
                               const SubstantiveModelSpec& model,
                               const CovariateModelPlan& plan,
                               const ImputationConfig& cfg);
ImputedSet impute_smc_jm_3l(const LongDataset& data,
                            const SubstantiveModelSpec& model,
                            const ImputationConfig& cfg);

// Gelman-Rubin potential scale reduction over >= 2 equal-length chains.
double psr(const std::vector<std::vector<double>>& chains);

}  // namespace mlmi
