#include "mlmi/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mlmi/stats.hpp"

namespace mlmi {

Preset preset_from_string(const std::string& s) {
  if (s == "desk") return Preset::desk;
  if (s == "paper") return Preset::paper;
  throw std::invalid_argument("unknown preset: " + s);
}

ExecMode exec_from_string(const std::string& s) {
  if (s == "serial") return ExecMode::serial;
  if (s == "openmp") return ExecMode::openmp;
  throw std::invalid_argument("unknown exec mode: " + s);
}

namespace {

struct Registration {
  MethodSpec spec;
  std::vector<AnalysisModel> models;
};

const std::vector<Registration>& registry() {
  using B = MethodSpec::Base;
  using M = AnalysisModel;
  static const std::vector<Registration> reg = {
      {{"JM-1L-DI-wide", B::jm1l, Variant::plain}, {M::model1, M::model2, M::model3}},
      {{"JM-1L-DI-wide-JAV", B::jm1l, Variant::jav}, {M::model2, M::model3}},
      {{"FCS-1L-DI-wide", B::fcs1l, Variant::plain}, {M::model1, M::model2, M::model3}},
      {{"FCS-1L-DI-wide-passive_c", B::fcs1l, Variant::passive_c}, {M::model2}},
      {{"FCS-1L-DI-wide-passive_all", B::fcs1l, Variant::passive_all}, {M::model2}},
      {{"FCS-1L-DI-wide-passive", B::fcs1l, Variant::passive_c}, {M::model3}},
      {{"JM-2L-wide", B::jm2l, Variant::plain}, {M::model1}},
      {{"JM-2L-wide-JAV", B::jm2l, Variant::jav}, {M::model2, M::model3}},
      {{"FCS-2L-wide", B::fcs2l, Variant::plain}, {M::model1}},
      {{"FCS-2L-wide-passive_c", B::fcs2l, Variant::passive_c}, {M::model2}},
      {{"FCS-2L-wide-passive_all", B::fcs2l, Variant::passive_all}, {M::model2}},
      {{"FCS-2L-wide-passive", B::fcs2l, Variant::passive_c}, {M::model3}},
      {{"SMC-JM-2L-DI", B::smc_jm_2l, Variant::plain},
       {M::model1, M::model2, M::model3}},
      {{"SMC-SM-2L-DI", B::smc_sm_2l, Variant::plain},
       {M::model1, M::model2, M::model3}},
      {{"SMC-JM-3L", B::smc_jm_3l, Variant::plain},
       {M::model1, M::model2, M::model3}},
  };
  return reg;
}

const Registration& find_registration(const std::string& label) {
  for (const auto& r : registry())
    if (r.spec.label == label) return r;
  throw std::invalid_argument("unknown method label: " + label);
}

}  // namespace

const std::vector<std::string>& registered_methods() {
  static const std::vector<std::string> labels = [] {
    std::vector<std::string> v;
    for (const auto& r : registry()) v.push_back(r.spec.label);
    return v;
  }();
  return labels;
}

MethodSpec method_spec(const std::string& label) {
  return find_registration(label).spec;
}

bool method_valid_for(const std::string& label, AnalysisModel model) {
  for (AnalysisModel m : find_registration(label).models)
    if (m == model) return true;
  return false;
}

std::vector<std::string> methods_for_model(AnalysisModel model) {
  std::vector<std::string> v;
  for (const auto& r : registry())
    if (method_valid_for(r.spec.label, model)) v.push_back(r.spec.label);
  return v;
}

ImputationConfig method_defaults(const MethodSpec& spec, Preset preset,
                                 AnalysisModel model) {
  ImputationConfig cfg;
  cfg.model = model;
  cfg.variant = spec.variant;
  const bool desk = preset == Preset::desk;
  cfg.m = desk ? 10 : 20;
  switch (spec.base) {
    case MethodSpec::Base::jm1l:
    case MethodSpec::Base::jm2l:
      cfg.burn_in = desk ? 500 : 1000;
      cfg.between = desk ? 50 : 100;
      break;
    case MethodSpec::Base::fcs1l:
    case MethodSpec::Base::fcs2l:
      cfg.burn_in = desk ? 5 : 10;
      cfg.between = 1;
      break;
    case MethodSpec::Base::smc_jm_2l:
      // full-length chains even at desk scale: the halved settings leave
      // visible initialization bias in the nonlinear-term coefficients
      cfg.burn_in = 500;
      cfg.between = 10;
      break;
    case MethodSpec::Base::smc_sm_2l:
      cfg.burn_in = 1000;
      cfg.between = desk ? 50 : 100;
      break;
    case MethodSpec::Base::smc_jm_3l:
      cfg.burn_in = desk ? 500 : 2500;
      cfg.between = desk ? 20 : 100;
      cfg.psr_check = true;
      break;
  }
  return cfg;
}

LongDataset make_incomplete(const ScenarioConfig& scenario, std::uint64_t rep_seed) {
  ParamSet params = ParamSet::defaults(scenario.analysis_model);
  Rng gen(mix64(rep_seed, hash_label("generate")));
  LongDataset full = generate_complete(scenario, params, gen);
  MissingnessSpec spec = MissingnessSpec::for_mechanism(scenario.mechanism);
  spec.zeta0 = calibrate_missingness_intercepts(full, spec, scenario.target_missing);
  Rng imp(mix64(rep_seed, hash_label("impose")));
  return impose_missingness(full, spec, scenario, imp);
}

RepEstimate run_method(const LongDataset& incomplete, const ScenarioConfig& scenario,
                       const MethodSpec& spec, const ImputationConfig& cfg) {
  SubstantiveModelSpec model;
  model.model = scenario.analysis_model;

  std::vector<LongDataset> completed;
  std::string derived;
  ImputedSet set;
  if (spec.long_format()) {
    switch (spec.base) {
      case MethodSpec::Base::smc_jm_2l:
        set = impute_smc_jm_2l_di(incomplete, model, cfg);
        break;
      case MethodSpec::Base::smc_sm_2l:
        set = impute_smc_sm_2l_di(incomplete, model,
                                  CovariateModelPlan::default_2l(incomplete), cfg);
        break;
      default:
        set = impute_smc_jm_3l(incomplete, model, cfg);
        break;
    }
    completed = std::move(set.completed);
  } else {
    WideDataset wide = reshape_wide(incomplete);
    if (spec.variant == Variant::jav) {
      wide = derive_jav_columns(wide, model);
      derived = "jav";
    }
    switch (spec.base) {
      case MethodSpec::Base::jm1l: set = impute_jm_1l_di_wide(wide, cfg); break;
      case MethodSpec::Base::fcs1l: set = impute_fcs_1l_di_wide(wide, cfg); break;
      case MethodSpec::Base::jm2l: set = impute_jm_2l_wide(wide, cfg); break;
      default: set = impute_fcs_2l_wide(wide, cfg); break;
    }
    for (const auto& wd : set.wide) completed.push_back(reshape_long(wd));
  }
  return pool_imputed_set(model, completed, derived);
}

namespace {

std::vector<ResultRow> rows_for(const std::string& scenario, int rep,
                                const std::string& method, const RepEstimate& est) {
  std::vector<ResultRow> rows;
  for (std::size_t j = 0; j < est.params.size(); ++j) {
    const auto& p = est.params[j];
    ResultRow r;
    r.scenario = scenario;
    r.rep = rep;
    r.method = method;
    r.parameter = "beta" + std::to_string(j);
    r.estimate = p.qbar;
    r.se_total = std::sqrt(std::max(0.0, p.t));
    r.ci_lo = p.ci_lo;
    r.ci_hi = p.ci_hi;
    r.converged = est.converged;
    rows.push_back(r);
  }
  const char* vc_names[3] = {"vc3", "vc2", "vc1"};
  for (int k = 0; k < 3; ++k) {
    ResultRow r;
    r.scenario = scenario;
    r.rep = rep;
    r.method = method;
    r.parameter = vc_names[k];
    r.estimate = est.vc[static_cast<std::size_t>(k)];
    r.converged = est.converged;
    rows.push_back(r);
  }
  return rows;
}

struct RepOutput {
  std::vector<ResultRow> rows;
  std::vector<std::string> failures;
};

RepOutput run_one_rep(const ScenarioConfig& scenario,
                      const std::vector<MethodSpec>& specs,
                      const std::vector<ImputationConfig>& cfgs, int rep,
                      std::uint64_t rep_seed) {
  RepOutput out;
  LongDataset incomplete = make_incomplete(scenario, rep_seed);
  for (std::size_t mi = 0; mi < specs.size(); ++mi) {
    ImputationConfig cfg = cfgs[mi];
    cfg.seed = mix64(rep_seed, hash_label(specs[mi].label));
    RepEstimate est;
    bool ok = false;
    std::string reason;
    for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
      if (attempt == 1) {
        cfg.seed = mix64(cfg.seed, hash_label("retry"));
        out.failures.push_back("rep " + std::to_string(rep) + "/" +
                               specs[mi].label + ": " + reason + " (retried)");
      }
      try {
        est = run_method(incomplete, scenario, specs[mi], cfg);
        ok = est.converged;
        reason = ok ? "" : "analysis fit did not converge";
      } catch (const std::exception& e) {
        reason = e.what();
        est = RepEstimate{};
      }
    }
    if (!est.params.empty()) {
      auto rows = rows_for(scenario.name, rep, specs[mi].label, est);
      out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    }
    if (!ok && !reason.empty())
      out.failures.push_back("rep " + std::to_string(rep) + "/" + specs[mi].label +
                             ": " + reason);
  }
  return out;
}

}  // namespace

ScenarioResults run_scenario(const ScenarioConfig& scenario,
                             const std::vector<std::string>& methods, int reps,
                             std::uint64_t master_seed, const RunOptions& opt) {
  std::vector<MethodSpec> specs;
  std::vector<ImputationConfig> cfgs;
  for (const auto& label : methods) {
    if (!method_valid_for(label, scenario.analysis_model))
      throw std::invalid_argument("method " + label + " is not defined for " +
                                  to_string(scenario.analysis_model));
    MethodSpec spec = method_spec(label);
    ImputationConfig cfg = method_defaults(spec, opt.preset, scenario.analysis_model);
    if (opt.m > 0) cfg.m = opt.m;
    specs.push_back(spec);
    cfgs.push_back(cfg);
  }
  if (reps <= 0) reps = opt.preset == Preset::desk ? 200 : 1000;

  ScenarioResults out;
  out.manifest.master_seed = master_seed;
  out.manifest.reps = reps;
  out.manifest.scenario = scenario.name;
  out.manifest.preset = opt.preset == Preset::desk ? "desk" : "paper";
  out.manifest.methods = methods;
  for (std::size_t mi = 0; mi < specs.size(); ++mi) {
    std::ostringstream os;
    os << "m=" << cfgs[mi].m << " burn_in=" << cfgs[mi].burn_in
       << " between=" << cfgs[mi].between
       << " variant=" << to_string(cfgs[mi].variant);
    out.manifest.method_configs[specs[mi].label] = os.str();
  }
  for (int rep = 0; rep < reps; ++rep)
    out.manifest.rep_seeds.push_back(
        mix64(master_seed, static_cast<std::uint64_t>(rep)));

  std::vector<RepOutput> per_rep(static_cast<std::size_t>(reps));
  if (opt.exec == ExecMode::openmp) {
#ifdef _OPENMP
    if (opt.workers > 0) omp_set_num_threads(opt.workers);
#pragma omp parallel for schedule(dynamic)
#endif
    for (int rep = 0; rep < reps; ++rep)
      per_rep[static_cast<std::size_t>(rep)] = run_one_rep(
          scenario, specs, cfgs, rep, out.manifest.rep_seeds[static_cast<std::size_t>(rep)]);
  } else {
    for (int rep = 0; rep < reps; ++rep)
      per_rep[static_cast<std::size_t>(rep)] = run_one_rep(
          scenario, specs, cfgs, rep, out.manifest.rep_seeds[static_cast<std::size_t>(rep)]);
  }

  // ordered merge keeps output independent of completion order
  for (const auto& r : per_rep) {
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
    out.manifest.failures.insert(out.manifest.failures.end(), r.failures.begin(),
                                 r.failures.end());
  }
  return out;
}

std::map<std::string, double> truth_for(const ScenarioConfig& scenario) {
  ParamSet p = ParamSet::defaults(scenario.analysis_model);
  return {{"beta0", p.beta0}, {"beta1", p.beta1}, {"beta2", p.beta2},
          {"beta3", p.beta3}, {"beta4", p.beta4}, {"beta5", p.beta5},
          {"beta6", p.beta6}, {"beta7", p.beta7}, {"vc3", p.true_vc3()},
          {"vc2", p.true_vc2()}, {"vc1", p.true_vc1()}};
}

std::vector<MetricRow> compute_metrics(const std::vector<ResultRow>& rows,
                                       const std::map<std::string, double>& truth) {
  // keyed by (scenario, method, parameter), first-appearance order
  std::vector<MetricRow> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) {
    std::string key = r.scenario + "\x1f" + r.method + "\x1f" + r.parameter;
    auto it = index.find(key);
    if (it == index.end()) {
      index[key] = groups.size();
      groups.emplace_back();
      it = index.find(key);
    }
    groups[it->second].push_back(&r);
  }
  for (const auto& g : groups) {
    if (g.size() < 2) continue;
    const ResultRow& head = *g.front();
    auto t = truth.find(head.parameter);
    if (t == truth.end())
      throw std::invalid_argument("no truth for parameter " + head.parameter);
    const double tr = t->second;

    MetricRow m;
    m.scenario = head.scenario;
    m.method = head.method;
    m.parameter = head.parameter;
    m.n_reps = static_cast<int>(g.size());
    std::vector<double> est, mod;
    int covered = 0;
    const bool coef = head.parameter.rfind("beta", 0) == 0;
    for (const ResultRow* r : g) {
      est.push_back(r->estimate);
      if (coef) {
        mod.push_back(r->se_total);
        if (r->ci_lo <= tr && tr <= r->ci_hi) ++covered;
      }
    }
    m.avg_estimate = mean(est);
    m.bias = m.avg_estimate - tr;
    m.rel_bias_pct = tr != 0.0 ? 100.0 * m.bias / tr : 0.0;
    m.emp_se = sample_sd(est);
    if (coef) {
      m.mod_se = mean(mod);
      const double c = static_cast<double>(covered) / static_cast<double>(g.size());
      m.coverage_pct = 100.0 * c;
      m.coverage_mc_err_pct =
          100.0 * std::sqrt(c * (1.0 - c) / static_cast<double>(g.size()));
    }
    out.push_back(m);
  }
  return out;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(17);
  return f;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  auto f = open_out(path);
  f << "scenario,rep,method,parameter,estimate,se_total,ci_lo,ci_hi,converged\n";
  for (const auto& r : rows)
    f << r.scenario << ',' << r.rep << ',' << r.method << ',' << r.parameter << ','
      << r.estimate << ',' << r.se_total << ',' << r.ci_lo << ',' << r.ci_hi << ','
      << (r.converged ? 1 : 0) << '\n';
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(f, line);  // header
  std::vector<ResultRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto parts = split_csv_line(line);
    if (parts.size() != 9) throw std::runtime_error("malformed results row: " + line);
    ResultRow r;
    r.scenario = parts[0];
    r.rep = std::stoi(parts[1]);
    r.method = parts[2];
    r.parameter = parts[3];
    r.estimate = std::stod(parts[4]);
    r.se_total = std::stod(parts[5]);
    r.ci_lo = std::stod(parts[6]);
    r.ci_hi = std::stod(parts[7]);
    r.converged = parts[8] == "1";
    rows.push_back(r);
  }
  return rows;
}

void emit_tables(const std::vector<MetricRow>& metrics, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::vector<const MetricRow*>> coef, vc;
  for (const auto& m : metrics)
    (m.parameter.rfind("beta", 0) == 0 ? coef : vc)[m.scenario].push_back(&m);
  auto method_rank = [](const std::string& label) {
    const auto& reg = registered_methods();
    for (std::size_t i = 0; i < reg.size(); ++i)
      if (reg[i] == label) return i;
    return reg.size();
  };
  for (auto* group : {&coef, &vc}) {
    const bool is_coef = group == &coef;
    for (auto& [scenario, rows] : *group) {
      std::stable_sort(rows.begin(), rows.end(),
                       [&](const MetricRow* a, const MetricRow* b) {
                         auto ra = method_rank(a->method), rb = method_rank(b->method);
                         if (ra != rb) return ra < rb;
                         return a->parameter < b->parameter;
                       });
      std::string path = dir + "/" + scenario +
                         (is_coef ? "_coefficients.csv" : "_variance_components.csv");
      auto f = open_out(path);
      if (is_coef) {
        f << "Scenario,Method,Parameter,Average Estimate,Bias,Relative Bias (%),"
             "Emp SE,Model SE,Coverage\n";
        for (const MetricRow* m : rows)
          f << m->scenario << ',' << m->method << ',' << m->parameter << ','
            << m->avg_estimate << ',' << m->bias << ',' << m->rel_bias_pct << ','
            << m->emp_se << ',' << m->mod_se << ',' << m->coverage_pct << '\n';
      } else {
        f << "Scenario,Method,Parameter,Average Estimate,Bias,Relative Bias (%),"
             "Emp SE\n";
        for (const MetricRow* m : rows)
          f << m->scenario << ',' << m->method << ',' << m->parameter << ','
            << m->avg_estimate << ',' << m->bias << ',' << m->rel_bias_pct << ','
            << m->emp_se << '\n';
      }
    }
  }
}

void write_truth_file(const std::string& path,
                      const std::map<std::string, double>& truth) {
  auto f = open_out(path);
  for (const auto& [k, v] : truth) f << k << " = " << v << '\n';
}

std::map<std::string, double> read_truth_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::map<std::string, double> out;
  std::string line;
  while (std::getline(f, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    out[key] = std::stod(line.substr(eq + 1));
  }
  return out;
}

std::string RunManifest::to_text() const {
  std::ostringstream os;
  os << "version = " << version << '\n'
     << "scenario = " << scenario << '\n'
     << "preset = " << preset << '\n'
     << "master_seed = " << master_seed << '\n'
     << "reps = " << reps << '\n';
  os << "methods =";
  for (const auto& m : methods) os << ' ' << m;
  os << '\n';
  for (const auto& [k, v] : method_configs) os << "config " << k << ": " << v << '\n';
  os << "rep_seeds =";
  for (auto s : rep_seeds) os << ' ' << s;
  os << '\n';
  for (const auto& fl : failures) os << "failure: " << fl << '\n';
  return os.str();
}

std::map<std::string, std::map<std::string, std::string>> parse_config(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path);
  std::map<std::string, std::map<std::string, std::string>> out;
  std::string line, section;
  auto trim = [](std::string s) {
    s.erase(0, s.find_first_not_of(" \t\r"));
    s.erase(s.find_last_not_of(" \t\r") + 1);
    return s;
  };
  while (std::getline(f, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      out[section];
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("malformed config line: " + line);
    out[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

ScenarioConfig scenario_from_config(
    const std::map<std::string, std::string>& section, const std::string& name) {
  ScenarioConfig cfg;
  cfg.name = name;
  for (const auto& [k, v] : section) {
    if (k == "analysis_model") cfg.analysis_model = analysis_model_from_string(v);
    else if (k == "mechanism") cfg.mechanism = mechanism_from_string(v);
    else if (k == "n_schools") cfg.n_schools = std::stoi(v);
    else if (k == "school_size") cfg.school_size = std::stoi(v);
    else if (k == "ses_mcar_rate") cfg.ses_mcar_rate = std::stod(v);
    else if (k == "seed") cfg.seed = std::stoull(v);
    else if (k.rfind("target_missing_", 0) == 0)
      cfg.target_missing[std::stoi(k.substr(15))] = std::stod(v);
    else throw std::invalid_argument("unknown scenario key: " + k);
  }
  return cfg;
}

}  // namespace mlmi
