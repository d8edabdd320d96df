#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mlmi/harness.hpp"
#include "mlmi/svgplot.hpp"

using namespace mlmi;

namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string first_line(const std::string& path) {
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  return line;
}

ScenarioConfig smoke_scenario() {
  ScenarioConfig cfg;
  cfg.name = "smoke";
  cfg.n_schools = 6;
  cfg.school_size = 8;
  cfg.analysis_model = AnalysisModel::model1;
  cfg.seed = 90210;
  return cfg;
}

}  // namespace

TEST_CASE("method registry matches the study design") {
  const auto& all = registered_methods();
  CHECK(all.size() == 15);
  CHECK(method_valid_for("JM-1L-DI-wide", AnalysisModel::model1));
  CHECK(method_valid_for("SMC-JM-3L", AnalysisModel::model3));
  CHECK_FALSE(method_valid_for("JM-1L-DI-wide-JAV", AnalysisModel::model1));
  CHECK_FALSE(method_valid_for("FCS-1L-DI-wide-passive", AnalysisModel::model2));
  CHECK(method_valid_for("FCS-1L-DI-wide-passive_c", AnalysisModel::model2));
  CHECK(methods_for_model(AnalysisModel::model1).size() == 7);
  CHECK(methods_for_model(AnalysisModel::model2).size() == 11);
  CHECK(methods_for_model(AnalysisModel::model3).size() == 9);
  CHECK_THROWS_AS(method_spec("no-such-method"), std::invalid_argument);

  MethodSpec jav = method_spec("JM-2L-wide-JAV");
  CHECK(jav.variant == Variant::jav);
  CHECK_FALSE(jav.long_format());
  CHECK(method_spec("SMC-SM-2L-DI").long_format());
}

TEST_CASE("smoke run produces a full, deterministic result table") {
  ScenarioConfig cfg = smoke_scenario();
  RunOptions opt;
  opt.preset = Preset::desk;
  opt.exec = ExecMode::serial;
  opt.reps = 2;
  opt.m = 3;

  const std::vector<std::string> methods = methods_for_model(cfg.analysis_model);
  ScenarioResults res = run_scenario(cfg, methods, opt.reps, cfg.seed, opt);

  INFO("failures: ", res.manifest.failures.size());
  // 7 methods x 2 reps x (8 coefficients + 3 variance components)
  CHECK(res.rows.size() == 7 * 2 * 11);
  for (const auto& r : res.rows) {
    CHECK(std::isfinite(r.estimate));
    if (r.parameter.rfind("beta", 0) == 0) {
      CHECK(r.se_total > 0.0);
      CHECK(r.ci_lo < r.ci_hi);
    }
  }
  CHECK(res.manifest.master_seed == cfg.seed);
  CHECK(res.manifest.rep_seeds.size() == 2);
  CHECK(res.manifest.methods == methods);

  // byte-identical rerun, serial and parallel alike
  ScenarioResults again = run_scenario(cfg, methods, opt.reps, cfg.seed, opt);
  RunOptions par = opt;
  par.exec = ExecMode::openmp;
  ScenarioResults parallel = run_scenario(cfg, methods, opt.reps, cfg.seed, par);

  const fs::path dir = fs::temp_directory_path() / "mlmi_harness_test";
  fs::create_directories(dir);
  write_results_csv((dir / "a.csv").string(), res.rows);
  write_results_csv((dir / "b.csv").string(), again.rows);
  write_results_csv((dir / "c.csv").string(), parallel.rows);
  CHECK(slurp((dir / "a.csv").string()) == slurp((dir / "b.csv").string()));
  CHECK(slurp((dir / "a.csv").string()) == slurp((dir / "c.csv").string()));
  CHECK(res.manifest.to_text() == again.manifest.to_text());

  // csv round trip
  auto parsed = read_results_csv((dir / "a.csv").string());
  REQUIRE(parsed.size() == res.rows.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    CHECK(parsed[i].method == res.rows[i].method);
    CHECK(parsed[i].estimate == doctest::Approx(res.rows[i].estimate).epsilon(1e-14));
  }

  // metrics, tables and figures run off the same rows
  auto truth = truth_for(cfg);
  CHECK(truth.at("beta1") == doctest::Approx(-0.07));
  CHECK(truth.at("beta3") == doctest::Approx(0.013));
  CHECK(truth.at("vc3") == doctest::Approx(0.04));
  auto metrics = compute_metrics(res.rows, truth);
  CHECK(metrics.size() == 7 * 11);
  emit_tables(metrics, dir.string());
  CHECK(first_line((dir / "smoke_coefficients.csv").string()) ==
        "Scenario,Method,Parameter,Average Estimate,Bias,Relative Bias (%),"
        "Emp SE,Model SE,Coverage");
  CHECK(first_line((dir / "smoke_variance_components.csv").string()) ==
        "Scenario,Method,Parameter,Average Estimate,Bias,Relative Bias (%),Emp SE");

  emit_plots(res.rows, truth, dir.string());
  std::string svg = slurp((dir / "smoke_beta1_box.svg").string());
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(slurp((dir / "smoke_beta3_se.svg").string()).rfind("<svg", 0) == 0);

  fs::remove_all(dir);
}

TEST_CASE("invalid method requests are rejected up front") {
  ScenarioConfig cfg = smoke_scenario();
  RunOptions opt;
  opt.reps = 1;
  CHECK_THROWS_AS(run_scenario(cfg, {"no-such-method"}, 1, 1, opt),
                  std::invalid_argument);
  CHECK_THROWS_AS(run_scenario(cfg, {"JM-1L-DI-wide-JAV"}, 1, 1, opt),
                  std::invalid_argument);
}

TEST_CASE("metric computation against a hand-worked example") {
  std::vector<ResultRow> rows;
  const double est[5] = {0.9, 1.0, 1.1, 1.2, 0.8};
  const bool covers[5] = {true, true, false, true, false};
  for (int i = 0; i < 5; ++i) {
    ResultRow r;
    r.scenario = "hand";
    r.rep = i;
    r.method = "JM-1L-DI-wide";
    r.parameter = "beta1";
    r.estimate = est[i];
    r.se_total = 0.2;
    r.ci_lo = covers[i] ? 0.5 : est[i] - 0.01;
    r.ci_hi = covers[i] ? 1.5 : est[i] + 0.01;
    rows.push_back(r);
  }
  std::map<std::string, double> truth = {{"beta1", 1.0}};
  auto metrics = compute_metrics(rows, truth);
  REQUIRE(metrics.size() == 1);
  const MetricRow& m = metrics[0];
  CHECK(m.n_reps == 5);
  CHECK(m.avg_estimate == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.bias == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(m.rel_bias_pct == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  CHECK(m.emp_se == doctest::Approx(std::sqrt(0.025)).epsilon(1e-10));
  CHECK(m.mod_se == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(m.coverage_pct == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(m.coverage_mc_err_pct ==
        doctest::Approx(100.0 * std::sqrt(0.6 * 0.4 / 5.0)).epsilon(1e-9));

  std::map<std::string, double> no_truth = {{"beta2", 1.0}};
  CHECK_THROWS(compute_metrics(rows, no_truth));
}

TEST_CASE("config files define scenarios") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "mlmi_test_config.ini";
  {
    std::ofstream f(path);
    f << "# comment line\n"
      << "[main]\n"
      << "analysis_model = model2\n"
      << "mechanism = MAR_inflated\n"
      << "n_schools = 10\n"
      << "school_size = 120\n"
      << "ses_mcar_rate = 0.05\n"
      << "seed = 99\n"
      << "target_missing_4 = 0.25\n";
  }
  auto cfg = parse_config(path.string());
  REQUIRE(cfg.count("main") == 1);
  ScenarioConfig sc = scenario_from_config(cfg.at("main"), "main");
  CHECK(sc.analysis_model == AnalysisModel::model2);
  CHECK(sc.mechanism == Mechanism::mar_inflated);
  CHECK(sc.n_schools == 10);
  CHECK(sc.school_size == 120);
  CHECK(sc.ses_mcar_rate == doctest::Approx(0.05));
  CHECK(sc.seed == 99);
  CHECK(sc.target_missing.at(4) == doctest::Approx(0.25));
  CHECK(sc.target_missing.at(2) == doctest::Approx(0.15));

  std::map<std::string, std::string> bad = {{"n_school", "3"}};
  CHECK_THROWS(scenario_from_config(bad, "bad"));
  fs::remove(path);
}

TEST_CASE("box statistics follow the type-7 quartile convention") {
  std::vector<double> v;
  for (int i = 1; i <= 9; ++i) v.push_back(i);
  BoxStats b = BoxStats::from(v);
  CHECK(b.q1 == doctest::Approx(3.0));
  CHECK(b.median == doctest::Approx(5.0));
  CHECK(b.q3 == doctest::Approx(7.0));
  CHECK(b.whisker_lo == doctest::Approx(1.0));
  CHECK(b.whisker_hi == doctest::Approx(9.0));
  CHECK(b.outliers.empty());

  v.push_back(100.0);
  BoxStats c = BoxStats::from(v);
  CHECK(c.q1 == doctest::Approx(3.25));
  CHECK(c.median == doctest::Approx(5.5));
  CHECK(c.q3 == doctest::Approx(7.75));
  CHECK(c.whisker_hi == doctest::Approx(9.0));
  REQUIRE(c.outliers.size() == 1);
  CHECK(c.outliers[0] == doctest::Approx(100.0));
}

TEST_CASE("preset defaults scale the sampler effort per method") {
  ImputationConfig desk =
      method_defaults(method_spec("JM-1L-DI-wide"), Preset::desk, AnalysisModel::model1);
  ImputationConfig paper =
      method_defaults(method_spec("JM-1L-DI-wide"), Preset::paper, AnalysisModel::model1);
  CHECK(desk.m == 10);
  CHECK(paper.m == 20);
  CHECK(paper.burn_in == 1000);
  CHECK(desk.burn_in == 500);
  ImputationConfig smc3 =
      method_defaults(method_spec("SMC-JM-3L"), Preset::desk, AnalysisModel::model1);
  CHECK(smc3.psr_check);
}
