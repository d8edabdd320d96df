#include <doctest.h>
#include <cmath>

#include <Eigen/Dense>

#include "mlmi/dgp.hpp"
#include "mlmi/stats.hpp"

using namespace mlmi;

namespace {

ScenarioConfig base_scenario() {
  ScenarioConfig cfg;
  cfg.name = "dgp-test";
  cfg.n_schools = 40;
  cfg.school_size = 30;
  cfg.analysis_model = AnalysisModel::model1;
  cfg.seed = 7001;
  return cfg;
}

}  // namespace

TEST_CASE("generated panel is balanced with exact-count sex assignment") {
  ScenarioConfig cfg = base_scenario();
  ParamSet p = ParamSet::defaults(cfg.analysis_model);
  Rng rng(cfg.seed);
  LongDataset d = generate_complete(cfg, p, rng);

  CHECK(d.n_rows() == 3600);
  CHECK(d.n_children() == 1200);
  CHECK(d.waves == std::vector<int>{3, 5, 7});
  CHECK_NOTHROW(d.validate());

  const Column& sex = d.column("sex");
  const Column& age = d.column("age");
  int n_female = 0;
  for (std::size_t c = 0; c < d.n_children(); ++c) {
    double s = *sex.values[c * 3];
    CHECK((s == 0.0 || s == 1.0));
    if (s == 0.0) ++n_female;
    double a = *age.values[c * 3];
    CHECK(a >= 7.0);
    CHECK(a <= 10.0);
  }
  CHECK(n_female == 600);

  // the wave column mirrors the row wave index
  const Column& wave = d.column("wave");
  for (std::size_t r = 0; r < d.n_rows(); ++r)
    CHECK(*wave.values[r] == doctest::Approx(static_cast<double>(d.wave[r])));
}

TEST_CASE("exposure generator coefficients are recovered by pooled least squares") {
  ScenarioConfig cfg = base_scenario();
  cfg.n_schools = 10;
  cfg.school_size = 20;
  ParamSet p = ParamSet::defaults(cfg.analysis_model);
  Rng rng(4242);

  const int n_datasets = 60;
  std::vector<Eigen::MatrixXd> xs;
  std::vector<Eigen::VectorXd> ys;
  Eigen::Index total = 0;
  for (int rep = 0; rep < n_datasets; ++rep) {
    LongDataset d = generate_complete(cfg, p, rng);
    const Eigen::Index n = static_cast<Eigen::Index>(d.n_rows());
    Eigen::MatrixXd X(n, 6);
    X.col(0).setOnes();
    X.col(1) = d.dense_column("age");
    X.col(2) = d.dense_column("sex");
    X.col(3) = d.dense_column("napz1");
    X.col(4) = d.dense_column("ses");
    X.col(5) = d.dense_column("wave").array() - 1.0;  // exposure wave
    xs.push_back(std::move(X));
    ys.push_back(d.dense_column("dep"));
    total += n;
  }
  Eigen::MatrixXd X(total, 6);
  Eigen::VectorXd y(total);
  Eigen::Index at = 0;
  for (int rep = 0; rep < n_datasets; ++rep) {
    X.middleRows(at, xs[rep].rows()) = xs[rep];
    y.segment(at, ys[rep].size()) = ys[rep];
    at += xs[rep].rows();
  }
  Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);

  CHECK(std::abs(beta(0) - p.delta0) < 0.25);
  CHECK(std::abs(beta(1) - p.delta1) < 0.03);
  CHECK(std::abs(beta(2) - p.delta2) < 0.06);
  CHECK(std::abs(beta(3) - p.delta3) < 0.03);
  CHECK(std::abs(beta(4) - p.delta4) < 0.03);
  CHECK(std::abs(beta(5) - p.delta5) < 0.02);
}

TEST_CASE("inflated mechanism doubles the response-model slopes") {
  MissingnessSpec cats = MissingnessSpec::for_mechanism(Mechanism::mar_cats);
  CHECK(cats.zeta1 == doctest::Approx(1.5));
  CHECK(cats.zeta2 == doctest::Approx(2.0));
  MissingnessSpec infl = MissingnessSpec::for_mechanism(Mechanism::mar_inflated);
  CHECK(infl.zeta1 == doctest::Approx(3.0));
  CHECK(infl.zeta2 == doctest::Approx(4.0));
  CHECK(to_string(Mechanism::mar_cats) == "MAR_CATS");
  CHECK(mechanism_from_string("MAR_inflated") == Mechanism::mar_inflated);
}

TEST_CASE("calibrated intercepts hit the target expected missingness exactly") {
  ScenarioConfig cfg = base_scenario();
  ParamSet p = ParamSet::defaults(cfg.analysis_model);
  Rng rng(cfg.seed);
  LongDataset d = generate_complete(cfg, p, rng);

  MissingnessSpec spec = MissingnessSpec::for_mechanism(cfg.mechanism);
  spec.zeta0 = calibrate_missingness_intercepts(d, spec, cfg.target_missing);
  REQUIRE(spec.zeta0.size() == 3);

  const Column& napz = d.column("napz");
  const Column& sdq = d.column("sdq");
  // the response model takes SDQ as a z-score
  double sdq_mean = 0.0, sdq_ss = 0.0;
  for (std::size_t r = 0; r < d.n_rows(); ++r) sdq_mean += *sdq.values[r];
  sdq_mean /= static_cast<double>(d.n_rows());
  for (std::size_t r = 0; r < d.n_rows(); ++r)
    sdq_ss += (*sdq.values[r] - sdq_mean) * (*sdq.values[r] - sdq_mean);
  const double sdq_sd = std::sqrt(sdq_ss / static_cast<double>(d.n_rows() - 1));
  for (const auto& [exp_wave, target] : cfg.target_missing) {
    double sum_mis = 0.0;
    int count = 0;
    for (std::size_t r = 0; r < d.n_rows(); ++r) {
      if (d.wave[r] != exp_wave + 1) continue;
      double lin = spec.zeta0.at(exp_wave) + spec.zeta1 * *napz.values[r] +
                   spec.zeta2 * (*sdq.values[r] - sdq_mean) / sdq_sd;
      sum_mis += 1.0 - expit(lin);
      ++count;
    }
    CHECK(count == 1200);
    CHECK(sum_mis / count == doctest::Approx(target).epsilon(1e-5));
  }
}

TEST_CASE("imposed missingness matches the targets over repeated draws") {
  ScenarioConfig cfg = base_scenario();
  ParamSet p = ParamSet::defaults(cfg.analysis_model);
  Rng rng(cfg.seed);
  LongDataset d = generate_complete(cfg, p, rng);

  MissingnessSpec spec = MissingnessSpec::for_mechanism(cfg.mechanism);
  spec.zeta0 = calibrate_missingness_intercepts(d, spec, cfg.target_missing);

  const int n_draws = 500;
  std::map<int, double> missing_rate = {{2, 0.0}, {4, 0.0}, {6, 0.0}};
  Rng draw_rng(991);
  for (int it = 0; it < n_draws; ++it) {
    Rng r = draw_rng.fork(static_cast<std::uint64_t>(it));
    LongDataset obs = impose_missingness(d, spec, cfg, r);
    const Column& dep = obs.column("dep");
    for (std::size_t row = 0; row < obs.n_rows(); ++row)
      if (!dep.values[row]) missing_rate[obs.wave[row] - 1] += 1.0;

    // MCAR deletion removes an exact count of SES values
    const Column& ses = obs.column("ses");
    int ses_missing = 0;
    for (std::size_t c = 0; c < obs.n_children(); ++c)
      if (!ses.values[c * 3]) ++ses_missing;
    REQUIRE(ses_missing == 120);

    if (it == 0) {
      // indicator columns agree with the holes
      const Column& r_dep = obs.column("r_dep");
      for (std::size_t row = 0; row < obs.n_rows(); ++row)
        CHECK(*r_dep.values[row] == (dep.values[row] ? 1.0 : 0.0));
    }
  }
  for (auto& [w, acc] : missing_rate) acc /= n_draws * 1200.0;
  CHECK(std::abs(missing_rate[2] - 0.15) < 0.02);
  CHECK(std::abs(missing_rate[4] - 0.20) < 0.02);
  CHECK(std::abs(missing_rate[6] - 0.30) < 0.02);
}

TEST_CASE("a zero target leaves every exposure observed") {
  ScenarioConfig cfg = base_scenario();
  cfg.n_schools = 5;
  cfg.school_size = 10;
  cfg.target_missing = {{2, 0.0}, {4, 0.0}, {6, 0.0}};
  cfg.ses_mcar_rate = 0.0;
  ParamSet p = ParamSet::defaults(cfg.analysis_model);
  Rng rng(5);
  LongDataset d = generate_complete(cfg, p, rng);
  MissingnessSpec spec = MissingnessSpec::for_mechanism(cfg.mechanism);
  spec.zeta0 = calibrate_missingness_intercepts(d, spec, cfg.target_missing);
  Rng r2(6);
  LongDataset obs = impose_missingness(d, spec, cfg, r2);
  const Column& dep = obs.column("dep");
  for (const Cell& c : dep.values) CHECK(c.has_value());
  const Column& ses = obs.column("ses");
  for (const Cell& c : ses.values) CHECK(c.has_value());
}
