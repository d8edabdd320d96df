#include <doctest.h>

#include <cmath>

#include "mlmi/harness.hpp"
#include "mlmi/imputers.hpp"
#include "mlmi/stats.hpp"

using namespace mlmi;

namespace {

ScenarioConfig small_scenario(AnalysisModel model, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.name = "smc-test";
  cfg.n_schools = 6;
  cfg.school_size = 8;
  cfg.analysis_model = model;
  cfg.seed = seed;
  return cfg;
}

void check_preserved_and_filled(const LongDataset& incomplete,
                                const ImputedSet& set, std::size_t m) {
  REQUIRE(set.completed.size() == m);
  for (const auto& done : set.completed) {
    for (const std::string name : {"dep", "ses"}) {
      const Column& before = incomplete.column(name);
      const Column& after = done.column(name);
      for (std::size_t r = 0; r < before.values.size(); ++r) {
        REQUIRE(after.values[r].has_value());
        if (before.values[r]) REQUIRE(*after.values[r] == *before.values[r]);
      }
    }
  }
}

}  // namespace

TEST_CASE("metropolis step accepts uphill moves and rejects impossible ones") {
  Rng rng(71);
  // equal likelihood: the independence proposal is always taken
  for (int i = 0; i < 100; ++i)
    CHECK(mh_step(1.0, 2.0, [](double) { return 0.0; }, rng) == 2.0);
  // a proposal with zero likelihood is never taken
  auto ll_block = [](double x) { return x == 2.0 ? kNegInf : 0.0; };
  for (int i = 0; i < 100; ++i) CHECK(mh_step(1.0, 2.0, ll_block, rng) == 1.0);
  // an impossible current state always moves
  auto ll_escape = [](double x) { return x == 1.0 ? kNegInf : 0.0; };
  for (int i = 0; i < 100; ++i) CHECK(mh_step(1.0, 2.0, ll_escape, rng) == 2.0);
}

TEST_CASE("metropolis chain targets proposal density times likelihood") {
  // proposal N(0,1), likelihood exp(-x^2/2): stationary law is N(0, 1/2)
  Rng rng(72);
  auto ll = [](double x) { return -0.5 * x * x; };
  double x = 0.0;
  std::vector<double> draws;
  for (int it = 0; it < 31000; ++it) {
    double prop = rng.normal();
    x = mh_step(x, prop, ll, rng);
    if (it >= 1000) draws.push_back(x);
  }
  CHECK(std::abs(mean(draws)) < 0.03);
  CHECK(std::abs(sample_variance(draws) - 0.5) < 0.04);
}

TEST_CASE("five-state chain reproduces the weighted stationary distribution") {
  const std::vector<double> w = {1.0, 2.0, 3.0, 4.0, 10.0};
  auto ll = [&](double x) { return std::log(w[static_cast<std::size_t>(x)]); };
  Rng rng(73);
  double x = 0.0;
  std::vector<double> freq(5, 0.0);
  const int n = 60000;
  for (int it = 0; it < n; ++it) {
    double prop = static_cast<double>(rng.uniform_index(5));
    x = mh_step(x, prop, ll, rng);
    freq[static_cast<std::size_t>(x)] += 1.0;
  }
  const double total = 20.0;
  for (std::size_t s = 0; s < 5; ++s)
    CHECK(std::abs(freq[s] / n - w[s] / total) < 0.015);
}

TEST_CASE("potential scale reduction separates mixed from stuck chains") {
  std::vector<double> flat(100, 2.5);
  CHECK(psr({flat, flat}) == doctest::Approx(1.0));

  Rng rng(74);
  std::vector<std::vector<double>> same(2, std::vector<double>(10000));
  for (auto& c : same)
    for (double& v : c) v = rng.normal();
  CHECK(psr(same) < 1.02);

  std::vector<std::vector<double>> apart(2, std::vector<double>(1000));
  for (double& v : apart[0]) v = rng.normal(0.0, 1.0);
  for (double& v : apart[1]) v = rng.normal(5.0, 1.0);
  CHECK(psr(apart) > 1.5);

  CHECK_THROWS_AS(psr({flat}), std::invalid_argument);
  CHECK_THROWS_AS(psr({{1.0, 2.0}, {1.0}}), std::invalid_argument);
}

TEST_CASE("complete data passes through the compatible imputers unchanged") {
  ScenarioConfig cfg = small_scenario(AnalysisModel::model1, 75);
  ParamSet p = ParamSet::defaults(cfg.analysis_model);
  Rng rng(cfg.seed);
  LongDataset d = generate_complete(cfg, p, rng);

  SubstantiveModelSpec model;
  model.model = cfg.analysis_model;
  ImputationConfig icfg;
  icfg.m = 2;
  icfg.burn_in = 5;
  icfg.between = 1;
  icfg.seed = 76;

  for (const auto& set :
       {impute_smc_jm_2l_di(d, model, icfg),
        impute_smc_sm_2l_di(d, model, CovariateModelPlan::default_2l(d), icfg),
        impute_smc_jm_3l(d, model, icfg)}) {
    REQUIRE(set.completed.size() == 2);
    for (const auto& done : set.completed) {
      const Column& before = d.column("dep");
      const Column& after = done.column("dep");
      for (std::size_t r = 0; r < before.values.size(); ++r)
        CHECK(*after.values[r] == *before.values[r]);
    }
  }
}

TEST_CASE("compatible joint imputer fills holes and reports acceptance rates") {
  ScenarioConfig cfg = small_scenario(AnalysisModel::model2, 77);
  LongDataset incomplete = make_incomplete(cfg, 1234);

  SubstantiveModelSpec model;
  model.model = cfg.analysis_model;
  ImputationConfig icfg;
  icfg.m = 3;
  icfg.burn_in = 60;
  icfg.between = 5;
  icfg.seed = 78;
  icfg.model = cfg.analysis_model;

  ImputedSet set = impute_smc_jm_2l_di(incomplete, model, icfg);
  check_preserved_and_filled(incomplete, set, 3);
  REQUIRE(!set.diagnostics.acceptance.empty());
  for (const auto& [target, rate] : set.diagnostics.acceptance) {
    CHECK(rate > 0.0);
    CHECK(rate <= 1.0);
  }
}

TEST_CASE("sequential imputer respects the covariate ordering") {
  ScenarioConfig cfg = small_scenario(AnalysisModel::model1, 79);
  LongDataset incomplete = make_incomplete(cfg, 555);

  SubstantiveModelSpec model;
  model.model = cfg.analysis_model;
  ImputationConfig icfg;
  icfg.m = 2;
  icfg.burn_in = 40;
  icfg.between = 5;
  icfg.seed = 80;

  CovariateModelPlan plan = CovariateModelPlan::default_2l(incomplete);
  ImputedSet set = impute_smc_sm_2l_di(incomplete, model, plan, icfg);
  check_preserved_and_filled(incomplete, set, 2);

  // a plan in the wrong order is rejected
  std::swap(plan.steps[0], plan.steps[1]);
  CHECK_THROWS_AS(impute_smc_sm_2l_di(incomplete, model, plan, icfg),
                  std::invalid_argument);
}

TEST_CASE("three-level imputer runs its burn-in gate when asked") {
  ScenarioConfig cfg = small_scenario(AnalysisModel::model1, 81);
  LongDataset incomplete = make_incomplete(cfg, 777);

  SubstantiveModelSpec model;
  model.model = cfg.analysis_model;
  ImputationConfig icfg;
  icfg.m = 2;
  icfg.burn_in = 60;
  icfg.between = 5;
  icfg.seed = 82;
  icfg.psr_check = true;

  ImputedSet set = impute_smc_jm_3l(incomplete, model, icfg);
  check_preserved_and_filled(incomplete, set, 2);
  REQUIRE(!set.diagnostics.psr.empty());
  for (const auto& [param, value] : set.diagnostics.psr) {
    CHECK(std::isfinite(value));
    CHECK(value >= 0.9);  // sqrt((n-1)/n) floor for short chains
  }

  // manifest cluster means are a selectable alternative
  icfg.psr_check = false;
  icfg.latent_cluster_means = false;
  ImputedSet manifest = impute_smc_jm_3l(incomplete, model, icfg);
  check_preserved_and_filled(incomplete, manifest, 2);
}
