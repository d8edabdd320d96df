// Acceptance gate: six study-level criteria, one PASS/FAIL line each.
// Criteria 1-4 run full desk-preset scenarios and take a few hours on one core.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mlmi/harness.hpp"
#include "mlmi/stats.hpp"

using namespace mlmi;

namespace {

std::vector<std::string> g_notes;

bool expect(bool cond, const std::string& what) {
  if (!cond) g_notes.push_back(what);
  return cond;
}

void report(int criterion, const std::string& label, bool ok) {
  std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": "
            << label << "\n";
  for (const auto& n : g_notes) std::cout << "    - " << n << "\n";
  g_notes.clear();
  std::cout.flush();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

using MetricMap = std::map<std::pair<std::string, std::string>, MetricRow>;

MetricMap run_desk_scenario(const std::string& name, AnalysisModel model,
                            std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.name = name;
  cfg.analysis_model = model;
  cfg.seed = seed;

  RunOptions opt;
  opt.preset = Preset::desk;
  opt.exec = ExecMode::openmp;

  std::cerr << "running scenario " << name << " (200 reps)...\n";
  ScenarioResults res =
      run_scenario(cfg, methods_for_model(model), -1, cfg.seed, opt);
  if (!res.manifest.failures.empty())
    std::cerr << name << ": " << res.manifest.failures.size()
              << " recorded failures/retries\n";

  MetricMap out;
  for (const MetricRow& m : compute_metrics(res.rows, truth_for(cfg)))
    out[{m.method, m.parameter}] = m;
  return out;
}

const MetricRow& at(const MetricMap& m, const std::string& method,
                    const std::string& param) {
  auto it = m.find({method, param});
  if (it == m.end()) throw std::runtime_error("missing metric " + method + "/" + param);
  return it->second;
}

bool check_interaction_bias(const MetricMap& m, const std::string& method, double lo,
                            double hi) {
  double rb = at(m, method, "beta3").rel_bias_pct;
  return expect(rb >= lo && rb <= hi,
                method + " beta3 relative bias " + fmt(rb) + "% outside [" +
                    fmt(lo) + ", " + fmt(hi) + "]");
}

// Per-imputation moments of the originally missing exposure and SES cells.
struct CellMoments {
  std::vector<double> dep_mean, dep_sd, ses_mean;
};

CellMoments moments_for(const LongDataset& incomplete,
                        const std::vector<LongDataset>& completed) {
  const Column& dep0 = incomplete.column("dep");
  const Column& ses0 = incomplete.column("ses");
  CellMoments out;
  for (const auto& done : completed) {
    const Column& dep = done.column("dep");
    const Column& ses = done.column("ses");
    std::vector<double> dvals, svals;
    for (std::size_t r = 0; r < dep0.values.size(); ++r)
      if (!dep0.values[r]) dvals.push_back(*dep.values[r]);
    const std::size_t w = incomplete.waves.size();
    for (std::size_t c = 0; c < incomplete.n_children(); ++c)
      if (!ses0.values[c * w]) svals.push_back(*ses.values[c * w]);
    out.dep_mean.push_back(mean(dvals));
    out.dep_sd.push_back(sample_sd(dvals));
    out.ses_mean.push_back(mean(svals));
  }
  return out;
}

bool close_within_3se(const std::vector<double>& a, const std::vector<double>& b,
                      const std::string& what) {
  double se = std::sqrt(sample_variance(a) / a.size() +
                        sample_variance(b) / b.size());
  double diff = std::abs(mean(a) - mean(b));
  return expect(diff <= 3.0 * se + 1e-12,
                what + ": difference " + fmt(diff) + " exceeds 3 x SE " + fmt(se));
}

bool criterion5();
bool criterion6();

}  // namespace

int main() {
  bool all_ok = true;

  // --- scenario runs used by criteria 1-4 ---
  MetricMap m1 = run_desk_scenario("accept-model1", AnalysisModel::model1, 20260801);
  MetricMap m2 = run_desk_scenario("accept-model2", AnalysisModel::model2, 20260802);
  MetricMap m3 = run_desk_scenario("accept-model3", AnalysisModel::model3, 20260803);

  // criterion 1: unbiased, nominal-coverage estimation under the linear model
  {
    bool ok = true;
    for (const auto& method : methods_for_model(AnalysisModel::model1)) {
      for (const std::string param : {"beta1", "beta3"}) {
        const MetricRow& r = at(m1, method, param);
        ok &= expect(std::abs(r.rel_bias_pct) < 10.0,
                     method + " " + param + " relative bias " +
                         fmt(r.rel_bias_pct) + "%");
        ok &= expect(r.coverage_pct >= 91.5 && r.coverage_pct <= 97.5,
                     method + " " + param + " coverage " + fmt(r.coverage_pct) + "%");
      }
    }
    report(1, "model 1 exposure and interaction effects", ok);
    all_ok &= ok;
  }

  // criterion 2: interaction attenuation ladder under model 2
  {
    bool ok = true;
    const std::vector<std::string> naive = {"JM-1L-DI-wide", "FCS-1L-DI-wide"};
    const std::vector<std::string> passive = {"FCS-1L-DI-wide-passive_c",
                                              "FCS-2L-wide-passive_c"};
    const std::vector<std::string> smc = {"SMC-JM-2L-DI", "SMC-SM-2L-DI",
                                          "SMC-JM-3L"};
    for (const auto& method : naive)
      ok &= check_interaction_bias(m2, method, -28.0, -14.0);
    for (const auto& method : passive)
      ok &= check_interaction_bias(m2, method, -20.0, -6.0);
    for (const auto& method : smc) ok &= check_interaction_bias(m2, method, -6.0, 6.0);

    auto mean_abs = [&](const std::vector<std::string>& methods) {
      double s = 0.0;
      for (const auto& method : methods)
        s += std::abs(at(m2, method, "beta3").rel_bias_pct);
      return s / methods.size();
    };
    double a_smc = mean_abs(smc), a_pass = mean_abs(passive), a_naive = mean_abs(naive);
    ok &= expect(a_smc < a_pass && a_pass < a_naive,
                 "bias ordering violated: |smc| " + fmt(a_smc) + ", |passive| " +
                     fmt(a_pass) + ", |naive| " + fmt(a_naive));
    report(2, "model 2 interaction bias ordering", ok);
    all_ok &= ok;
  }

  // criterion 3: quadratic term under model 3, JAV bias vs compatible methods
  {
    bool ok = true;
    for (const std::string method : {"JM-1L-DI-wide-JAV", "JM-2L-wide-JAV"}) {
      const MetricRow& r = at(m3, method, "beta3");
      ok &= expect(r.rel_bias_pct >= -40.0 && r.rel_bias_pct <= -20.0,
                   method + " beta3 relative bias " + fmt(r.rel_bias_pct) + "%");
      ok &= expect(r.coverage_pct < 93.5,
                   method + " beta3 coverage " + fmt(r.coverage_pct) + "% not < 93.5%");
    }
    for (const std::string method : {"SMC-JM-2L-DI", "SMC-SM-2L-DI", "SMC-JM-3L"}) {
      const MetricRow& r = at(m3, method, "beta3");
      ok &= expect(std::abs(r.rel_bias_pct) < 6.0,
                   method + " beta3 relative bias " + fmt(r.rel_bias_pct) + "%");
      ok &= expect(r.coverage_pct >= 92.0 && r.coverage_pct <= 97.0,
                   method + " beta3 coverage " + fmt(r.coverage_pct) + "%");
    }
    report(3, "model 3 quadratic-effect bias and coverage", ok);
    all_ok &= ok;
  }

  // criterion 4: variance components across all methods and models
  {
    bool ok = true;
    const std::map<std::string, double> vc_truth = {
        {"vc3", 0.04}, {"vc2", 0.49}, {"vc1", 0.49}};
    struct Block {
      const MetricMap* metrics;
      AnalysisModel model;
      const char* name;
    };
    for (const Block& b : {Block{&m1, AnalysisModel::model1, "model1"},
                           Block{&m2, AnalysisModel::model2, "model2"},
                           Block{&m3, AnalysisModel::model3, "model3"}}) {
      for (const auto& method : methods_for_model(b.model)) {
        for (const auto& [param, truth] : vc_truth) {
          const MetricRow& r = at(*b.metrics, method, param);
          ok &= expect(std::abs(r.rel_bias_pct) < 10.0,
                       std::string(b.name) + " " + method + " " + param +
                           " relative bias " + fmt(r.rel_bias_pct) + "%");
        }
      }
    }
    report(4, "variance-component recovery", ok);
    all_ok &= ok;
  }

  {
    bool ok = criterion5();
    report(5, "property suite", ok);
    all_ok &= ok;
  }

  {
    bool ok = criterion6();
    report(6, "congenial-regime imputation equivalence", ok);
    all_ok &= ok;
  }

  std::cout << (all_ok ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED") << "\n";
  return all_ok ? 0 : 1;
}

namespace {

bool criterion5() {
  bool ok = true;

  // reshape round trip on generated data with holes
  {
    ScenarioConfig cfg;
    cfg.n_schools = 6;
    cfg.school_size = 8;
    cfg.seed = 501;
    LongDataset d = make_incomplete(cfg, 501);
    LongDataset back = reshape_long(reshape_wide(d));
    bool same = d.school == back.school && d.wave == back.wave &&
                d.columns.size() == back.columns.size();
    for (std::size_t j = 0; same && j < d.columns.size(); ++j)
      same = d.columns[j].name == back.columns[j].name &&
             d.columns[j].values == back.columns[j].values;
    ok &= expect(same, "reshape round trip is not the identity");
  }

  // Rubin pooling hand oracle
  {
    PooledParameter p = rubin_pool("b", {1.0, 1.2, 0.8},
                                   {0.2, std::sqrt(0.05), std::sqrt(0.03)}, 50);
    ok &= expect(std::abs(p.t - 0.09333333333) < 1e-8,
                 "pooled total variance " + fmt(p.t) + " != 0.093333");
    ok &= expect(std::abs(p.qbar - 1.0) < 1e-12, "pooled estimate off");
  }

  // REML vs grid search
  {
    ScenarioConfig cfg;
    cfg.n_schools = 10;
    cfg.school_size = 12;
    cfg.seed = 502;
    ParamSet p = ParamSet::defaults(cfg.analysis_model);
    Rng rng(cfg.seed);
    LongDataset d = generate_complete(cfg, p, rng);
    SubstantiveModelSpec model;
    LmmSpec spec = model.analysis_spec();
    LmmFit fit = fit_lmm(spec, d);
    bool beat = fit.converged;
    for (double vc3 = 0.0; vc3 <= 0.2001; vc3 += 0.02)
      for (double vc2 = 0.1; vc2 <= 1.0001; vc2 += 0.1)
        for (double vc1 = 0.2; vc1 <= 1.0001; vc1 += 0.1)
          if (reml_objective(spec, d, vc3, vc2, vc1) > fit.reml_loglik + 1e-3)
            beat = false;
    ok &= expect(beat, "grid point beats the reml optimizer");
  }

  // mh_step stationary distribution vs a rejection-sampling oracle
  {
    Rng rng(503);
    auto ll = [](double x) { return -0.5 * x * x; };
    double x = 0.0;
    std::vector<double> chain;
    const int n_chain = 40000;
    for (int it = 0; it < n_chain + 1000; ++it) {
      x = mh_step(x, rng.normal(), ll, rng);
      if (it >= 1000) chain.push_back(x);
    }
    std::vector<double> rejection;
    while (rejection.size() < 20000) {
      double cand = rng.normal();
      if (rng.uniform() < std::exp(ll(cand))) rejection.push_back(cand);
    }
    // conservative effective size for the dependent chain
    double se_mean = std::sqrt(sample_variance(chain) / (n_chain / 10.0) +
                               sample_variance(rejection) / rejection.size());
    ok &= expect(std::abs(mean(chain) - mean(rejection)) < 3.0 * se_mean,
                 "chain mean differs from rejection oracle");
    double v_chain = sample_variance(chain), v_rej = sample_variance(rejection);
    double se_var = std::sqrt(2.0 * v_chain * v_chain / (n_chain / 10.0) +
                              2.0 * v_rej * v_rej / rejection.size());
    ok &= expect(std::abs(v_chain - v_rej) < 3.0 * se_var,
                 "chain variance differs from rejection oracle");
  }

  // PSR cases
  {
    std::vector<double> flat(50, 1.0);
    ok &= expect(std::abs(psr({flat, flat}) - 1.0) < 1e-12, "psr of constants != 1");
    Rng rng(504);
    std::vector<std::vector<double>> same(2, std::vector<double>(10000));
    for (auto& c : same)
      for (double& v : c) v = rng.normal();
    ok &= expect(psr(same) < 1.02, "psr of identical laws too high");
    std::vector<std::vector<double>> apart(2, std::vector<double>(1000));
    for (double& v : apart[0]) v = rng.normal(0.0, 1.0);
    for (double& v : apart[1]) v = rng.normal(5.0, 1.0);
    ok &= expect(psr(apart) > 1.1, "psr misses separated chains");
  }

  // missingness-proportion calibration over 500 draws
  {
    ScenarioConfig cfg;
    cfg.seed = 505;
    ParamSet p = ParamSet::defaults(cfg.analysis_model);
    Rng rng(cfg.seed);
    LongDataset d = generate_complete(cfg, p, rng);
    MissingnessSpec spec = MissingnessSpec::for_mechanism(cfg.mechanism);
    spec.zeta0 = calibrate_missingness_intercepts(d, spec, cfg.target_missing);
    std::map<int, double> rate = {{2, 0.0}, {4, 0.0}, {6, 0.0}};
    Rng draw_rng(506);
    for (int it = 0; it < 500; ++it) {
      Rng r = draw_rng.fork(static_cast<std::uint64_t>(it));
      LongDataset obs = impose_missingness(d, spec, cfg, r);
      const Column& dep = obs.column("dep");
      for (std::size_t row = 0; row < obs.n_rows(); ++row)
        if (!dep.values[row]) rate[obs.wave[row] - 1] += 1.0;
    }
    for (auto& [w, acc] : rate) {
      acc /= 500.0 * d.n_children();
      ok &= expect(std::abs(acc - cfg.target_missing.at(w)) < 0.02,
                   "wave " + std::to_string(w) + " missingness " + fmt(acc) +
                       " off target");
    }
  }

  // observed-cell preservation and no-missing identity across all imputers
  {
    ScenarioConfig cfg;
    cfg.n_schools = 6;
    cfg.school_size = 8;
    cfg.analysis_model = AnalysisModel::model2;
    cfg.seed = 507;
    LongDataset incomplete = make_incomplete(cfg, 507);
    ParamSet p = ParamSet::defaults(cfg.analysis_model);
    Rng rng(508);
    LongDataset complete = generate_complete(cfg, p, rng);

    for (const auto& label : methods_for_model(cfg.analysis_model)) {
      MethodSpec spec = method_spec(label);
      ImputationConfig icfg = method_defaults(spec, Preset::desk, cfg.analysis_model);
      icfg.m = 2;
      icfg.burn_in = 40;
      icfg.between = 4;
      icfg.seed = 509;

      RepEstimate est = run_method(incomplete, cfg, spec, icfg);
      ok &= expect(est.params.size() == 8,
                   label + " did not produce a full coefficient vector");

      // identity on complete data, via the imputers' own entry points
      ImputedSet id_set;
      SubstantiveModelSpec model;
      model.model = cfg.analysis_model;
      if (spec.long_format()) {
        switch (spec.base) {
          case MethodSpec::Base::smc_jm_2l:
            id_set = impute_smc_jm_2l_di(complete, model, icfg);
            break;
          case MethodSpec::Base::smc_sm_2l:
            id_set = impute_smc_sm_2l_di(complete, model,
                                         CovariateModelPlan::default_2l(complete),
                                         icfg);
            break;
          default: id_set = impute_smc_jm_3l(complete, model, icfg); break;
        }
        bool same = true;
        for (const auto& done : id_set.completed)
          same &= done.column("dep").values == complete.column("dep").values;
        ok &= expect(same, label + " altered complete data");
      } else {
        WideDataset wide = reshape_wide(complete);
        if (spec.variant == Variant::jav) wide = derive_jav_columns(wide, model);
        switch (spec.base) {
          case MethodSpec::Base::jm1l: id_set = impute_jm_1l_di_wide(wide, icfg); break;
          case MethodSpec::Base::fcs1l: id_set = impute_fcs_1l_di_wide(wide, icfg); break;
          case MethodSpec::Base::jm2l: id_set = impute_jm_2l_wide(wide, icfg); break;
          default: id_set = impute_fcs_2l_wide(wide, icfg); break;
        }
        bool same = true;
        for (const auto& done : id_set.wide)
          same &= done.column("dep4").values == wide.column("dep4").values;
        ok &= expect(same, label + " altered complete data");
      }
    }
  }

  // end-to-end manifest determinism
  {
    ScenarioConfig cfg;
    cfg.name = "determinism";
    cfg.n_schools = 5;
    cfg.school_size = 8;
    cfg.seed = 510;
    RunOptions opt;
    opt.preset = Preset::desk;
    opt.exec = ExecMode::openmp;
    opt.reps = 2;
    opt.m = 2;
    const std::vector<std::string> methods = {"JM-1L-DI-wide", "FCS-2L-wide"};
    ScenarioResults a = run_scenario(cfg, methods, opt.reps, cfg.seed, opt);
    ScenarioResults b = run_scenario(cfg, methods, opt.reps, cfg.seed, opt);
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mlmi_acceptance";
    fs::create_directories(dir);
    write_results_csv((dir / "a.csv").string(), a.rows);
    write_results_csv((dir / "b.csv").string(), b.rows);
    std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    ok &= expect(sa.str() == sb.str() && !sa.str().empty(),
                 "rerun is not byte-identical");
    ok &= expect(a.manifest.to_text() == b.manifest.to_text(),
                 "manifest differs between reruns");
    fs::remove_all(dir);
  }

  return ok;
}

bool criterion6() {
  bool ok = true;
  ScenarioConfig cfg;
  cfg.name = "congenial";
  cfg.analysis_model = AnalysisModel::model1;
  cfg.seed = 601;
  LongDataset incomplete = make_incomplete(cfg, 601);
  WideDataset wide = reshape_wide(incomplete);

  SubstantiveModelSpec model;
  model.model = cfg.analysis_model;

  ImputationConfig ref_cfg;
  ref_cfg.m = 20;
  ref_cfg.burn_in = 500;
  ref_cfg.between = 50;
  ref_cfg.seed = 602;
  ImputedSet ref = impute_jm_2l_wide(wide, ref_cfg);
  std::vector<LongDataset> ref_long;
  for (const auto& w : ref.wide) ref_long.push_back(reshape_long(w));
  CellMoments base = moments_for(incomplete, ref_long);

  for (const std::string label : {"SMC-JM-2L-DI", "SMC-SM-2L-DI", "SMC-JM-3L"}) {
    MethodSpec spec = method_spec(label);
    ImputationConfig icfg = method_defaults(spec, Preset::desk, cfg.analysis_model);
    icfg.m = 20;
    icfg.seed = 603;
    std::cerr << "congenial check: " << label << "...\n";
    ImputedSet set;
    switch (spec.base) {
      case MethodSpec::Base::smc_jm_2l:
        set = impute_smc_jm_2l_di(incomplete, model, icfg);
        break;
      case MethodSpec::Base::smc_sm_2l:
        set = impute_smc_sm_2l_di(incomplete, model,
                                  CovariateModelPlan::default_2l(incomplete), icfg);
        break;
      default: set = impute_smc_jm_3l(incomplete, model, icfg); break;
    }
    CellMoments got = moments_for(incomplete, set.completed);
    ok &= close_within_3se(got.dep_mean, base.dep_mean, label + " imputed dep mean");
    ok &= close_within_3se(got.dep_sd, base.dep_sd, label + " imputed dep sd");
    ok &= close_within_3se(got.ses_mean, base.ses_mean, label + " imputed ses mean");
  }
  return ok;
}

}  // namespace
