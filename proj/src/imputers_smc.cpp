#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "mlmi/gibbs.hpp"
#include "mlmi/imputers.hpp"
#include "mlmi/stats.hpp"

namespace mlmi {

double mh_step(double current, double proposal,
               const std::function<double(double)>& loglik_sub, Rng& rng) {
  const double lp = loglik_sub(proposal);
  const double lc = loglik_sub(current);
  const double u = rng.uniform();  // consumed unconditionally
  if (!std::isfinite(lp)) return current;
  if (!std::isfinite(lc)) return proposal;
  return std::log(u) < lp - lc ? proposal : current;
}

double psr(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("psr needs >= 2 chains");
  const std::size_t n = chains[0].size();
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("psr chains must be equal length");
  if (n < 2) throw std::invalid_argument("psr chains too short");

  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : chains) {
    means.push_back(mean(c));
    w += sample_variance(c);
  }
  w /= static_cast<double>(chains.size());
  const double b = static_cast<double>(n) * sample_variance(means);
  if (w == 0.0) return b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double nn = static_cast<double>(n);
  return std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
}

CovariateModelPlan CovariateModelPlan::default_2l(const LongDataset& data) {
  CovariateModelPlan plan;
  CovariateModelStep ses;
  ses.target = "ses";
  ses.family = CovFamily::normal_glm;
  ses.predictors = {"napz1", "sex", "age"};
  for (int w : data.waves) ses.predictors.push_back("sdq" + std::to_string(w - 1));
  CovariateModelStep dep;
  dep.target = "dep";
  dep.family = CovFamily::lmm_2l;
  // sdq_mean carries the between-child component of the level-1 predictor,
  // which the same-wave value plus a child intercept alone would miss
  dep.predictors = {"ses", "napz1", "sex", "age", "sdq", "sdq_mean", "wave"};
  plan.steps = {ses, dep};
  return plan;
}

namespace {

constexpr int kWarnWindow = 200;
constexpr double kWarnRate = 0.01;

struct AcceptCounter {
  long accepted = 0, proposed = 0;
  long win_accepted = 0, win_proposed = 0;
  bool warned = false;

  void record(bool accept) {
    ++proposed;
    ++win_proposed;
    if (accept) {
      ++accepted;
      ++win_accepted;
    }
  }
  // called once per iteration; returns true when a sustained-low warning fires
  bool roll(int it) {
    if (it % kWarnWindow != 0 || win_proposed == 0) return false;
    bool low = static_cast<double>(win_accepted) / win_proposed < kWarnRate;
    win_accepted = win_proposed = 0;
    if (low && !warned) {
      warned = true;
      return true;
    }
    return false;
  }
  double rate() const {
    return proposed == 0 ? 1.0 : static_cast<double>(accepted) / proposed;
  }
};

// Mutable long-format working state shared by the three samplers.
struct LongWork {
  const LongDataset* src = nullptr;
  int n = 0, n_children = 0, n_schools = 0, n_waves = 0;
  GroupIndex child_rows, school_rows;   // over long rows
  std::vector<int> school_of_child;     // 0-based codes
  GroupIndex child_by_school;           // children grouped by school

  Eigen::VectorXd dep, napz, wave_v, sdq;      // per row
  std::vector<char> dep_missing;               // per row
  Eigen::VectorXd ses, napz1, sex, age;        // per child
  std::vector<char> ses_missing;               // per child
  std::vector<int> mis_dep_rows;
  std::vector<int> mis_ses_children;

  explicit LongWork(const LongDataset& d) : src(&d) {
    n = static_cast<int>(d.n_rows());
    n_waves = static_cast<int>(d.waves.size());
    n_children = static_cast<int>(d.n_children());
    std::vector<int> child_codes(n), school_codes(n);
    int cc = -1;
    for (int r = 0; r < n; ++r) {
      if (r == 0 || d.school[r] != d.school[r - 1] || d.child[r] != d.child[r - 1])
        ++cc;
      child_codes[r] = cc;
      school_codes[r] = d.school[r];
    }
    child_rows = GroupIndex::from_codes(child_codes);
    school_rows = GroupIndex::from_codes(school_codes);
    n_schools = school_rows.n_groups();
    school_of_child.resize(n_children);
    for (int c = 0; c < n_children; ++c)
      school_of_child[c] = school_rows.of_row[child_rows.start[c]];
    child_by_school = GroupIndex::from_codes(school_of_child);

    const Column& dep_c = d.column("dep");
    dep.resize(n);
    dep_missing.assign(n, 0);
    for (int r = 0; r < n; ++r) {
      if (dep_c.values[r]) {
        dep(r) = *dep_c.values[r];
      } else {
        dep(r) = 0.0;
        dep_missing[r] = 1;
        mis_dep_rows.push_back(r);
      }
    }
    napz = d.dense_column("napz");
    wave_v = d.dense_column("wave");
    sdq = d.dense_column("sdq");

    const Column& ses_c = d.column("ses");
    ses.resize(n_children);
    ses_missing.assign(n_children, 0);
    napz1.resize(n_children);
    sex.resize(n_children);
    age.resize(n_children);
    const Column& napz1_c = d.column("napz1");
    const Column& sex_c = d.column("sex");
    const Column& age_c = d.column("age");
    for (int c = 0; c < n_children; ++c) {
      const int r0 = child_rows.start[c];
      napz1(c) = *napz1_c.values[r0];
      sex(c) = *sex_c.values[r0];
      age(c) = *age_c.values[r0];
      if (ses_c.values[r0]) {
        ses(c) = *ses_c.values[r0];
      } else {
        ses(c) = 0.0;
        ses_missing[c] = 1;
        mis_ses_children.push_back(c);
      }
    }
  }

  void random_fill(Rng& rng) {
    std::vector<double> obs_dep, obs_ses;
    for (int r = 0; r < n; ++r)
      if (!dep_missing[r]) obs_dep.push_back(dep(r));
    for (int c = 0; c < n_children; ++c)
      if (!ses_missing[c]) obs_ses.push_back(ses(c));
    if (!mis_dep_rows.empty() && obs_dep.empty())
      throw std::runtime_error("exposure entirely missing");
    if (!mis_ses_children.empty() && obs_ses.empty())
      throw std::runtime_error("ses entirely missing");
    for (int r : mis_dep_rows) dep(r) = obs_dep[rng.uniform_index(obs_dep.size())];
    for (int c : mis_ses_children)
      ses(c) = obs_ses[rng.uniform_index(obs_ses.size())];
  }

  double inter(AnalysisModel m, double depv, int row) const {
    switch (m) {
      case AnalysisModel::model1: return depv * wave_v(row);
      case AnalysisModel::model2: return depv * ses(child_rows.of_row[row]);
      case AnalysisModel::model3: return depv * depv;
    }
    return 0.0;
  }

  // substantive design in beta0..beta7 order; DI block appended when
  // n_di > 0 (one-hot school columns, first school as reference)
  Eigen::MatrixXd substantive_design(AnalysisModel m, bool with_di) const {
    const int n_di = with_di ? n_schools - 1 : 0;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, 8 + n_di);
    for (int r = 0; r < n; ++r) {
      const int c = child_rows.of_row[r];
      X(r, 0) = 1.0;
      X(r, 1) = dep(r);
      X(r, 2) = wave_v(r);
      X(r, 3) = inter(m, dep(r), r);
      X(r, 4) = napz1(c);
      X(r, 5) = sex(c);
      X(r, 6) = ses(c);
      X(r, 7) = age(c);
      const int s = school_rows.of_row[r];
      if (with_di && s > 0) X(r, 8 + s - 1) = 1.0;
    }
    return X;
  }

  LongDataset completed() const {
    LongDataset out = *src;
    Column& dep_c = out.column("dep");
    Column& ses_c = out.column("ses");
    for (int r : mis_dep_rows) dep_c.values[r] = dep(r);
    for (int c : mis_ses_children)
      for (int k = 0; k < n_waves; ++k)
        ses_c.values[child_rows.start[c] + k] = ses(c);
    return out;
  }
};

// Substantive-model mean of one row given current parameters; di_coef(s)
// supplies the school fixed effect (0 for the reference or the RE value).
struct SubstantiveEval {
  const LongWork* w;
  AnalysisModel m;
  const Eigen::VectorXd* beta;  // length 8 + DIs
  double school_effect(int s) const {
    if (use_random) return (*v_school)(s);
    return s > 0 ? (*beta)(8 + s - 1) : 0.0;
  }
  bool use_random = false;             // 3L: random school intercepts
  const Eigen::VectorXd* v_school = nullptr;
  const Eigen::VectorXd* u_child = nullptr;
  double sig_e2 = 1.0;

  double mean_row(int r, double depv, double sesv) const {
    const int c = w->child_rows.of_row[r];
    const int s = w->school_rows.of_row[r];
    double inter;
    switch (m) {
      case AnalysisModel::model1: inter = depv * w->wave_v(r); break;
      case AnalysisModel::model2: inter = depv * sesv; break;
      default: inter = depv * depv; break;
    }
    const Eigen::VectorXd& b = *beta;
    return b(0) + b(1) * depv + b(2) * w->wave_v(r) + inter * b(3) +
           b(4) * w->napz1(c) + b(5) * w->sex(c) + b(6) * sesv + b(7) * w->age(c) +
           school_effect(s) + (*u_child)(c);
  }

  double loglik_row(int r, double depv, double sesv) const {
    return gaussian_loglik(w->napz(r), mean_row(r, depv, sesv), sig_e2);
  }
};

void note_warning(SamplerDiagnostics& diag, const std::string& target) {
  diag.warnings.push_back("sustained acceptance rate below 0.01 for " + target);
}

ImputedSet identity_long(const LongDataset& data, int m) {
  ImputedSet out;
  out.completed.assign(static_cast<std::size_t>(m), data);
  return out;
}

// ---- SMC-JM-2L-DI --------------------------------------------------------

// Joint latent-normal covariate model in long format: dep is a level-1
// response with a child random intercept, ses a child-level response whose
// residual is the second component of the bivariate child effect, so the
// dep-ses association is carried by the 2x2 child-level covariance. School
// membership enters both equations as DIs; the substantive model is a
// two-level LMM with child random intercepts and school DIs.
ImputedSet smc_jm_2l_impl(const LongDataset& data, const SubstantiveModelSpec& model,
                          const ImputationConfig& cfg) {
  if (cfg.m < 2) throw std::invalid_argument("need m >= 2 imputations");
  LongWork w(data);
  if (w.mis_dep_rows.empty() && w.mis_ses_children.empty())
    return identity_long(data, cfg.m);

  Rng rng(mix64(cfg.seed, hash_label("smc-jm-2l")));
  w.random_fill(rng);

  // sdq is complete; its child mean carries the between-child component of
  // the level-1 predictor, which the same-wave value plus the child
  // intercept alone would miss
  Eigen::VectorXd sdq_mean(w.n_children);
  for (int c = 0; c < w.n_children; ++c) {
    double s = 0.0;
    for (int k = 0; k < w.n_waves; ++k) s += w.sdq(w.child_rows.start[c] + k);
    sdq_mean(c) = s / w.n_waves;
  }

  const int n_di = w.n_schools - 1;
  // dep equation: time, same-wave sdq + its child mean, child-level
  // confounders, school DIs; both designs are complete, so they are constant
  const int pd = 7 + n_di;
  Eigen::MatrixXd Xd = Eigen::MatrixXd::Zero(w.n, pd);
  for (int r = 0; r < w.n; ++r) {
    const int c = w.child_rows.of_row[r];
    Xd(r, 0) = 1.0;
    Xd(r, 1) = w.napz1(c);
    Xd(r, 2) = w.sex(c);
    Xd(r, 3) = w.age(c);
    Xd(r, 4) = w.sdq(r);
    Xd(r, 5) = sdq_mean(c);
    Xd(r, 6) = w.wave_v(r);
    const int s = w.school_rows.of_row[r];
    if (s > 0) Xd(r, 7 + s - 1) = 1.0;
  }
  // ses equation: child-level completes including per-wave sdq
  const int ps = 4 + w.n_waves + n_di;
  Eigen::MatrixXd Zs = Eigen::MatrixXd::Zero(w.n_children, ps);
  for (int c = 0; c < w.n_children; ++c) {
    Zs(c, 0) = 1.0;
    Zs(c, 1) = w.napz1(c);
    Zs(c, 2) = w.sex(c);
    Zs(c, 3) = w.age(c);
    for (int k = 0; k < w.n_waves; ++k)
      Zs(c, 4 + k) = w.sdq(w.child_rows.start[c] + k);
    const int s = w.school_of_child[c];
    if (s > 0) Zs(c, 4 + w.n_waves + s - 1) = 1.0;
  }
  Eigen::LLT<Eigen::MatrixXd> xllt(Xd.transpose() * Xd);
  Eigen::LLT<Eigen::MatrixXd> zllt(Zs.transpose() * Zs);
  if (xllt.info() != Eigen::Success || zllt.info() != Eigen::Success)
    throw std::runtime_error("collinear school indicators in covariate model");

  Eigen::VectorXd beta_d = xllt.solve(Xd.transpose() * w.dep);
  double sig_e2 = std::max(
      (w.dep - Xd * beta_d).squaredNorm() / std::max(1, w.n - pd), 1e-6);
  Eigen::VectorXd beta_s = zllt.solve(Zs.transpose() * w.ses);
  Eigen::VectorXd ud = Eigen::VectorXd::Zero(w.n_children);
  Eigen::MatrixXd omu = Eigen::MatrixXd::Identity(2, 2);

  UniLmm2State sub;
  {
    Eigen::MatrixXd X = w.substantive_design(model.model, true);
    sub.init(X, w.napz, w.child_rows);
  }

  ImputedSet out;
  std::map<std::string, AcceptCounter> acc;
  const int total = cfg.burn_in + (cfg.m - 1) * std::max(1, cfg.between);
  for (int it = 1; it <= total; ++it) {
    // (a) substantive parameters
    Eigen::MatrixXd X = w.substantive_design(model.model, true);
    sub.sweep(X, w.napz, w.child_rows, rng);
    SubstantiveEval se{&w, model.model, &sub.beta, false, nullptr, &sub.u,
                       sub.sig_e2};

    // (b) covariate-model parameters
    // ud_c | us_c, dep: conditional prior N(rho_d us_c, vd) combined with the
    // child's dep residuals
    Eigen::VectorXd us = w.ses - Zs * beta_s;
    const double rho_d = omu(0, 1) / omu(1, 1);
    const double vd = omu(0, 0) - omu(0, 1) * omu(0, 1) / omu(1, 1);
    Eigen::VectorXd dres = w.dep - Xd * beta_d;
    for (int c = 0; c < w.n_children; ++c) {
      const double s = dres.segment(w.child_rows.start[c], w.n_waves).sum();
      const double prec = 1.0 / vd + w.n_waves / sig_e2;
      ud(c) = rng.normal((rho_d * us(c) / vd + s / sig_e2) / prec,
                         std::sqrt(1.0 / prec));
    }
    Eigen::VectorXd y_adj = w.dep;
    for (int r = 0; r < w.n; ++r) y_adj(r) -= ud(w.child_rows.of_row[r]);
    beta_d = xllt.solve(Xd.transpose() * y_adj) +
             std::sqrt(sig_e2) * xllt.matrixU().solve(rng.normal_vector(pd));
    const double rss = (y_adj - Xd * beta_d).squaredNorm();
    sig_e2 = rng.inv_gamma(0.001 + 0.5 * w.n, 0.001 + 0.5 * rss);
    // ses residual conditional on ud is N(rho_s ud, vs)
    const double rho_s = omu(0, 1) / omu(0, 0);
    const double vs = omu(1, 1) - omu(0, 1) * omu(0, 1) / omu(0, 0);
    Eigen::VectorXd s_adj = w.ses - rho_s * ud;
    beta_s = zllt.solve(Zs.transpose() * s_adj) +
             std::sqrt(vs) * zllt.matrixU().solve(rng.normal_vector(ps));
    us = w.ses - Zs * beta_s;
    Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(2, 2);
    for (int c = 0; c < w.n_children; ++c) {
      Eigen::Vector2d uc(ud(c), us(c));
      scale += uc * uc.transpose();
    }
    omu = rng.inv_wishart(2 + 1 + w.n_children, scale);

    // (c) missing cells
    const double dep_sd = std::sqrt(sig_e2);
    for (int r : w.mis_dep_rows) {
      const int c = w.child_rows.of_row[r];
      const double pmean = Xd.row(r) * beta_d + ud(c);
      const double proposal = rng.normal(pmean, dep_sd);
      auto ll = [&](double x) { return se.loglik_row(r, x, w.ses(c)); };
      const double updated = mh_step(w.dep(r), proposal, ll, rng);
      acc["dep"].record(updated == proposal && proposal != w.dep(r));
      w.dep(r) = updated;
    }
    const double ses_rho = omu(0, 1) / omu(0, 0);
    const double ses_sd =
        std::sqrt(omu(1, 1) - omu(0, 1) * omu(0, 1) / omu(0, 0));
    for (int c : w.mis_ses_children) {
      const double pmean = Zs.row(c) * beta_s + ses_rho * ud(c);
      const double proposal = rng.normal(pmean, ses_sd);
      auto ll = [&](double x) {
        double s = 0.0;
        for (int k = 0; k < w.n_waves; ++k) {
          const int r = w.child_rows.start[c] + k;
          s += se.loglik_row(r, w.dep(r), x);
        }
        return s;
      };
      const double updated = mh_step(w.ses(c), proposal, ll, rng);
      acc["ses"].record(updated == proposal && proposal != w.ses(c));
      w.ses(c) = updated;
    }
    for (auto& [name, counter] : acc)
      if (counter.roll(it)) note_warning(out.diagnostics, name);

    if (it >= cfg.burn_in &&
        (it - cfg.burn_in) % std::max(1, cfg.between) == 0 &&
        out.completed.size() < static_cast<std::size_t>(cfg.m))
      out.completed.push_back(w.completed());
  }
  for (const auto& [name, counter] : acc)
    out.diagnostics.acceptance[name] = counter.rate();
  if (out.completed.size() != static_cast<std::size_t>(cfg.m))
    throw std::logic_error("smc chain saved wrong number of datasets");
  return out;
}

// ---- SMC-SM-2L-DI --------------------------------------------------------

Eigen::VectorXd child_level_column(const LongWork& w, const std::string& name) {
  if (name == "napz1") return w.napz1;
  if (name == "sex") return w.sex;
  if (name == "age") return w.age;
  if (name == "ses") return w.ses;
  if (name == "sdq_mean") {
    Eigen::VectorXd v(w.n_children);
    for (int c = 0; c < w.n_children; ++c) {
      double s = 0.0;
      for (int k = 0; k < w.n_waves; ++k) s += w.sdq(w.child_rows.start[c] + k);
      v(c) = s / w.n_waves;
    }
    return v;
  }
  if (name.rfind("sdq", 0) == 0 || name.rfind("dep", 0) == 0) {
    const int target_wave = std::stoi(name.substr(3));
    for (int k = 0; k < w.n_waves; ++k) {
      if (w.src->waves[static_cast<std::size_t>(k)] - 1 != target_wave) continue;
      Eigen::VectorXd v(w.n_children);
      for (int c = 0; c < w.n_children; ++c) {
        const int r = w.child_rows.start[c] + k;
        v(c) = name.rfind("sdq", 0) == 0 ? w.sdq(r) : w.dep(r);
      }
      return v;
    }
  }
  throw std::invalid_argument("unknown child-level covariate: " + name);
}

Eigen::VectorXd row_level_column(const LongWork& w, const std::string& name) {
  if (name == "dep") return w.dep;
  if (name == "sdq") return w.sdq;
  if (name == "wave") return w.wave_v;
  Eigen::VectorXd child = child_level_column(w, name);
  Eigen::VectorXd v(w.n);
  for (int r = 0; r < w.n; ++r) v(r) = child(w.child_rows.of_row[r]);
  return v;
}

ImputedSet smc_sm_2l_impl(const LongDataset& data, const SubstantiveModelSpec& model,
                          const CovariateModelPlan& plan,
                          const ImputationConfig& cfg) {
  if (cfg.m < 2) throw std::invalid_argument("need m >= 2 imputations");
  if (plan.steps.size() != 2 || plan.steps[0].target != "ses" ||
      plan.steps[1].target != "dep")
    throw std::invalid_argument("expected covariate sequence (ses, dep)");
  LongWork w(data);
  if (w.mis_dep_rows.empty() && w.mis_ses_children.empty())
    return identity_long(data, cfg.m);

  Rng rng(mix64(cfg.seed, hash_label("smc-sm-2l")));
  w.random_fill(rng);

  const int n_di = w.n_schools - 1;

  // ses model: child-level regression with school DIs
  auto build_ses_design = [&] {
    const auto& preds = plan.steps[0].predictors;
    Eigen::MatrixXd Zs =
        Eigen::MatrixXd::Zero(w.n_children, 1 + static_cast<int>(preds.size()) + n_di);
    Zs.col(0).setOnes();
    for (std::size_t j = 0; j < preds.size(); ++j)
      Zs.col(1 + static_cast<Eigen::Index>(j)) = child_level_column(w, preds[j]);
    for (int c = 0; c < w.n_children; ++c) {
      const int s = w.school_of_child[c];
      if (s > 0) Zs(c, 1 + static_cast<Eigen::Index>(preds.size()) + s - 1) = 1.0;
    }
    return Zs;
  };
  // dep model: row-level two-level LMM (child random intercept) with DIs
  auto build_dep_design = [&] {
    const auto& preds = plan.steps[1].predictors;
    Eigen::MatrixXd Xd =
        Eigen::MatrixXd::Zero(w.n, 1 + static_cast<int>(preds.size()) + n_di);
    Xd.col(0).setOnes();
    for (std::size_t j = 0; j < preds.size(); ++j)
      Xd.col(1 + static_cast<Eigen::Index>(j)) = row_level_column(w, preds[j]);
    for (int r = 0; r < w.n; ++r) {
      const int s = w.school_rows.of_row[r];
      if (s > 0) Xd(r, 1 + static_cast<Eigen::Index>(preds.size()) + s - 1) = 1.0;
    }
    return Xd;
  };
  const int ses_slot_in_dep = [&] {
    const auto& preds = plan.steps[1].predictors;
    for (std::size_t j = 0; j < preds.size(); ++j)
      if (preds[j] == "ses") return 1 + static_cast<int>(j);
    return -1;
  }();

  RegressionDraw ses_model;
  {
    Eigen::MatrixXd Zs = build_ses_design();
    ses_model = draw_regression(Zs, w.ses, rng);
  }
  UniLmm2State dep_model;
  {
    Eigen::MatrixXd Xd = build_dep_design();
    dep_model.init(Xd, w.dep, w.child_rows);
  }
  UniLmm2State sub;
  {
    Eigen::MatrixXd X = w.substantive_design(model.model, true);
    sub.init(X, w.napz, w.child_rows);
  }

  ImputedSet out;
  std::map<std::string, AcceptCounter> acc;
  const int total = cfg.burn_in + (cfg.m - 1) * std::max(1, cfg.between);
  for (int it = 1; it <= total; ++it) {
    Eigen::MatrixXd X = w.substantive_design(model.model, true);
    sub.sweep(X, w.napz, w.child_rows, rng);
    SubstantiveEval se{&w, model.model, &sub.beta, false, nullptr, &sub.u,
                       sub.sig_e2};

    Eigen::MatrixXd Zs = build_ses_design();
    ses_model = draw_regression(Zs, w.ses, rng);
    Eigen::MatrixXd Xd = build_dep_design();
    dep_model.sweep(Xd, w.dep, w.child_rows, rng);

    // ses updates: target includes the substantive rows and the dep model
    // rows where ses is a predictor
    const double ses_sd = std::sqrt(ses_model.sigma2);
    for (int c : w.mis_ses_children) {
      const double pmean = Zs.row(c) * ses_model.beta;
      const double proposal = rng.normal(pmean, ses_sd);
      auto ll = [&](double x) {
        double s = 0.0;
        for (int k = 0; k < w.n_waves; ++k) {
          const int r = w.child_rows.start[c] + k;
          s += se.loglik_row(r, w.dep(r), x);
          if (ses_slot_in_dep >= 0) {
            double dep_mean = Xd.row(r) * dep_model.beta + dep_model.u(c) +
                              (x - w.ses(c)) * dep_model.beta(ses_slot_in_dep);
            s += gaussian_loglik(w.dep(r), dep_mean, dep_model.sig_e2);
          }
        }
        return s;
      };
      const double updated = mh_step(w.ses(c), proposal, ll, rng);
      acc["ses"].record(updated == proposal && proposal != w.ses(c));
      if (updated != w.ses(c)) {
        w.ses(c) = updated;
        if (ses_slot_in_dep >= 0)
          for (int k = 0; k < w.n_waves; ++k)
            Xd(w.child_rows.start[c] + k, ses_slot_in_dep) = updated;
      }
    }

    // dep updates: last in the sequence, so only the substantive rows enter
    const double dep_sd = std::sqrt(dep_model.sig_e2);
    for (int r : w.mis_dep_rows) {
      const int c = w.child_rows.of_row[r];
      const double pmean = Xd.row(r) * dep_model.beta + dep_model.u(c);
      const double proposal = rng.normal(pmean, dep_sd);
      auto ll = [&](double x) { return se.loglik_row(r, x, w.ses(c)); };
      const double updated = mh_step(w.dep(r), proposal, ll, rng);
      acc["dep"].record(updated == proposal && proposal != w.dep(r));
      w.dep(r) = updated;
    }
    for (auto& [name, counter] : acc)
      if (counter.roll(it)) note_warning(out.diagnostics, name);

    if (it >= cfg.burn_in &&
        (it - cfg.burn_in) % std::max(1, cfg.between) == 0 &&
        out.completed.size() < static_cast<std::size_t>(cfg.m))
      out.completed.push_back(w.completed());
  }
  for (const auto& [name, counter] : acc)
    out.diagnostics.acceptance[name] = counter.rate();
  if (out.completed.size() != static_cast<std::size_t>(cfg.m))
    throw std::logic_error("smc chain saved wrong number of datasets");
  return out;
}

// ---- SMC-JM-3L -----------------------------------------------------------

struct Smc3lChain {
  LongWork w;
  UniLmm3State sub;        // substantive three-level model
  UniLmm3State dep_model;  // dep ~ covariates with school+child intercepts
  UniLmm2State ses_model;  // ses ~ level-2/3 covariates + cluster means, school RI
  Rng rng;

  Smc3lChain(const LongDataset& data, const SubstantiveModelSpec& model,
             std::uint64_t seed)
      : w(data), rng(seed) {
    w.random_fill(rng);
    init_sdq_means();
    Eigen::MatrixXd X = w.substantive_design(model.model, false);
    sub.init(X, w.napz, w.school_rows, w.child_rows);
    Eigen::MatrixXd Xd = dep_design();
    dep_model.init(Xd, w.dep, w.school_rows, w.child_rows);
    Eigen::MatrixXd Zs = ses_design(true);
    ses_model.init(Zs, w.ses, w.child_by_school);
  }

  // sdq is complete, so its cluster means are the observed averages; they
  // carry the between-child and between-school components of the level-1
  // predictor into the dep model as the latent-mean decomposition requires
  Eigen::VectorXd sdq_child_mean, sdq_school_mean;

  void init_sdq_means() {
    sdq_child_mean.resize(w.n_children);
    for (int c = 0; c < w.n_children; ++c) {
      double s = 0.0;
      for (int k = 0; k < w.n_waves; ++k) s += w.sdq(w.child_rows.start[c] + k);
      sdq_child_mean(c) = s / w.n_waves;
    }
    sdq_school_mean = Eigen::VectorXd::Zero(w.n_schools);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(w.n_schools);
    for (int c = 0; c < w.n_children; ++c) {
      sdq_school_mean(w.school_of_child[c]) += sdq_child_mean(c);
      count(w.school_of_child[c]) += 1.0;
    }
    sdq_school_mean.array() /= count.array();
  }

  Eigen::MatrixXd dep_design() const {
    Eigen::MatrixXd X(w.n, 9);
    for (int r = 0; r < w.n; ++r) {
      const int c = w.child_rows.of_row[r];
      X(r, 0) = 1.0;
      X(r, 1) = w.ses(c);
      X(r, 2) = w.napz1(c);
      X(r, 3) = w.sex(c);
      X(r, 4) = w.age(c);
      X(r, 5) = w.sdq(r);
      X(r, 6) = w.wave_v(r);
      X(r, 7) = sdq_child_mean(c);
      X(r, 8) = sdq_school_mean(w.school_rows.of_row[r]);
    }
    return X;
  }

  // cluster-mean term for dep: latent uses the dep model's implied child
  // mean (fixed part average + random intercepts); manifest averages the
  // current values.
  double dep_cluster_mean(int c, bool latent, const Eigen::MatrixXd& Xd) const {
    double s = 0.0;
    for (int k = 0; k < w.n_waves; ++k) {
      const int r = w.child_rows.start[c] + k;
      s += latent ? Xd.row(r) * dep_model.beta : w.dep(r);
    }
    s /= w.n_waves;
    if (latent) s += dep_model.v(w.school_of_child[c]) + dep_model.u(c);
    return s;
  }

  Eigen::MatrixXd ses_design(bool latent) const {
    Eigen::MatrixXd Xd = dep_design();
    Eigen::MatrixXd Z(w.n_children, 6);
    for (int c = 0; c < w.n_children; ++c) {
      Z(c, 0) = 1.0;
      Z(c, 1) = w.napz1(c);
      Z(c, 2) = w.sex(c);
      Z(c, 3) = w.age(c);
      Z(c, 4) = dep_cluster_mean(c, latent, Xd);
      double sm = 0.0;
      for (int k = 0; k < w.n_waves; ++k) sm += w.sdq(w.child_rows.start[c] + k);
      Z(c, 5) = sm / w.n_waves;
    }
    return Z;
  }

  // one full sweep; records MH accepts into acc
  void iterate(const SubstantiveModelSpec& model, bool latent,
               std::map<std::string, AcceptCounter>& acc) {
    Eigen::MatrixXd X = w.substantive_design(model.model, false);
    sub.sweep(X, w.napz, w.school_rows, w.child_rows, rng);
    SubstantiveEval se{&w, model.model, &sub.beta, true, &sub.v, &sub.u,
                       sub.sig_e2};

    Eigen::MatrixXd Xd = dep_design();
    dep_model.sweep(Xd, w.dep, w.school_rows, w.child_rows, rng);
    Eigen::MatrixXd Zs = ses_design(latent);
    ses_model.sweep(Zs, w.ses, w.child_by_school, rng);

    const double dep_sd = std::sqrt(dep_model.sig_e2);
    for (int r : w.mis_dep_rows) {
      const int c = w.child_rows.of_row[r];
      const int s = w.school_rows.of_row[r];
      const double pmean =
          Xd.row(r) * dep_model.beta + dep_model.v(s) + dep_model.u(c);
      const double proposal = rng.normal(pmean, dep_sd);
      auto ll = [&](double x) {
        double v = se.loglik_row(r, x, w.ses(c));
        if (!latent) {
          // manifest cluster means feed the ses model
          double zm = Zs(c, 4) + (x - w.dep(r)) / w.n_waves;
          double mean = Zs.row(c) * ses_model.beta +
                        ses_model.u(w.school_of_child[c]) +
                        (zm - Zs(c, 4)) * ses_model.beta(4);
          v += gaussian_loglik(w.ses(c), mean, ses_model.sig_e2);
        }
        return v;
      };
      const double updated = mh_step(w.dep(r), proposal, ll, rng);
      acc["dep"].record(updated == proposal && proposal != w.dep(r));
      if (updated != w.dep(r)) {
        if (!latent) Zs(c, 4) += (updated - w.dep(r)) / w.n_waves;
        w.dep(r) = updated;
      }
    }

    const double ses_sd = std::sqrt(ses_model.sig_e2);
    const int ses_slot_in_dep = 1;
    for (int c : w.mis_ses_children) {
      const double pmean =
          Zs.row(c) * ses_model.beta + ses_model.u(w.school_of_child[c]);
      const double proposal = rng.normal(pmean, ses_sd);
      auto ll = [&](double x) {
        double s = 0.0;
        for (int k = 0; k < w.n_waves; ++k) {
          const int r = w.child_rows.start[c] + k;
          s += se.loglik_row(r, w.dep(r), x);
          double dep_mean = Xd.row(r) * dep_model.beta +
                            dep_model.v(w.school_rows.of_row[r]) +
                            dep_model.u(c) +
                            (x - w.ses(c)) * dep_model.beta(ses_slot_in_dep);
          s += gaussian_loglik(w.dep(r), dep_mean, dep_model.sig_e2);
        }
        return s;
      };
      const double updated = mh_step(w.ses(c), proposal, ll, rng);
      acc["ses"].record(updated == proposal && proposal != w.ses(c));
      w.ses(c) = updated;
    }
  }

  std::vector<double> monitored() const {
    std::vector<double> v;
    for (int j = 0; j < 8; ++j) v.push_back(sub.beta(j));
    v.push_back(std::log(sub.sig_v2));
    v.push_back(std::log(sub.sig_u2));
    v.push_back(std::log(sub.sig_e2));
    return v;
  }
};

const char* kMonitorNames[] = {"beta0",    "beta1",    "beta2",   "beta3",
                               "beta4",    "beta5",    "beta6",   "beta7",
                               "log_vc3",  "log_vc2",  "log_vc1"};

ImputedSet smc_jm_3l_impl(const LongDataset& data, const SubstantiveModelSpec& model,
                          const ImputationConfig& cfg) {
  if (cfg.m < 2) throw std::invalid_argument("need m >= 2 imputations");
  {
    LongWork probe(data);
    if (probe.mis_dep_rows.empty() && probe.mis_ses_children.empty())
      return identity_long(data, cfg.m);
  }
  const bool latent = cfg.latent_cluster_means;
  const std::uint64_t base = mix64(cfg.seed, hash_label("smc-jm-3l"));

  ImputedSet out;
  std::map<std::string, AcceptCounter> acc;

  Smc3lChain chain(data, model, mix64(base, 1));
  const int n_params = static_cast<int>(chain.monitored().size());

  if (cfg.psr_check) {
    Smc3lChain shadow(data, model, mix64(base, 2));
    std::vector<std::vector<double>> trace_a(n_params), trace_b(n_params);
    std::map<std::string, AcceptCounter> shadow_acc;
    for (int it = 1; it <= cfg.burn_in; ++it) {
      chain.iterate(model, latent, acc);
      shadow.iterate(model, latent, shadow_acc);
      auto ma = chain.monitored();
      auto mb = shadow.monitored();
      for (int j = 0; j < n_params; ++j) {
        trace_a[j].push_back(ma[j]);
        trace_b[j].push_back(mb[j]);
      }
      for (auto& [name, counter] : acc)
        if (counter.roll(it)) note_warning(out.diagnostics, name);
    }
    double worst = 0.0;
    for (int j = 0; j < n_params; ++j) {
      // discard the first half as warm-up, as is conventional for PSR
      std::size_t half = trace_a[j].size() / 2;
      std::vector<double> a(trace_a[j].begin() + half, trace_a[j].end());
      std::vector<double> b(trace_b[j].begin() + half, trace_b[j].end());
      double r = psr({a, b});
      out.diagnostics.psr[kMonitorNames[j]] = r;
      worst = std::max(worst, r);
    }
    if (worst >= 1.10)
      out.diagnostics.warnings.push_back(
          "worst PSR " + std::to_string(worst) + " at burn-in end (>= 1.10)");
  } else {
    for (int it = 1; it <= cfg.burn_in; ++it) {
      chain.iterate(model, latent, acc);
      for (auto& [name, counter] : acc)
        if (counter.roll(it)) note_warning(out.diagnostics, name);
    }
  }

  out.completed.push_back(chain.w.completed());
  const int between = std::max(1, cfg.between);
  while (out.completed.size() < static_cast<std::size_t>(cfg.m)) {
    for (int it = 0; it < between; ++it) chain.iterate(model, latent, acc);
    out.completed.push_back(chain.w.completed());
  }
  for (const auto& [name, counter] : acc)
    out.diagnostics.acceptance[name] = counter.rate();
  return out;
}

}  // namespace

ImputedSet impute_smc_jm_2l_di(const LongDataset& data,
                               const SubstantiveModelSpec& model,
                               const ImputationConfig& cfg) {
  return smc_jm_2l_impl(data, model, cfg);
}

ImputedSet impute_smc_sm_2l_di(const LongDataset& data,
                               const SubstantiveModelSpec& model,
                               const CovariateModelPlan& plan,
                               const ImputationConfig& cfg) {
  return smc_sm_2l_impl(data, model, plan, cfg);
}

ImputedSet impute_smc_jm_3l(const LongDataset& data,
                            const SubstantiveModelSpec& model,
                            const ImputationConfig& cfg) {
  return smc_jm_3l_impl(data, model, cfg);
}

}  // namespace mlmi
