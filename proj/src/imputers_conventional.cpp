#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

#include "mlmi/gibbs.hpp"
#include "mlmi/imputers.hpp"

namespace mlmi {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::plain: return "plain";
    case Variant::jav: return "jav";
    case Variant::passive_c: return "passive_c";
    case Variant::passive_all: return "passive_all";
  }
  return "plain";
}

namespace {

bool usable(const Column& c) {
  return c.role != ColumnRole::id && c.role != ColumnRole::time;
}

// Dense working copy of the usable wide columns with a fixed missingness
// mask; imputation chains mutate `values` only at masked cells.
struct WideWork {
  std::vector<std::string> names;
  std::map<std::string, int> index;
  Eigen::MatrixXd values;                  // n x ncol, missing cells start as 0
  std::vector<std::vector<char>> missing;  // [col][row]
  std::vector<int> missing_count;
  std::vector<int> incomplete;  // ascending missingness
  std::vector<int> complete;
  int n = 0;

  explicit WideWork(const WideDataset& data) {
    n = static_cast<int>(data.n_rows());
    for (const auto& c : data.columns) {
      if (!usable(c)) continue;
      index[c.name] = static_cast<int>(names.size());
      names.push_back(c.name);
    }
    values.setZero(n, static_cast<Eigen::Index>(names.size()));
    missing.assign(names.size(), std::vector<char>(n, 0));
    missing_count.assign(names.size(), 0);
    for (std::size_t j = 0; j < names.size(); ++j) {
      const Column& c = data.column(names[j]);
      for (int i = 0; i < n; ++i) {
        if (c.values[i]) {
          values(i, static_cast<Eigen::Index>(j)) = *c.values[i];
        } else {
          missing[j][i] = 1;
          ++missing_count[j];
        }
      }
    }
    for (std::size_t j = 0; j < names.size(); ++j)
      (missing_count[j] > 0 ? incomplete : complete).push_back(static_cast<int>(j));
    std::stable_sort(incomplete.begin(), incomplete.end(),
                     [&](int a, int b) { return missing_count[a] < missing_count[b]; });
  }

  void random_fill(const WideDataset& data, Rng& rng) {
    for (int j : incomplete) {
      const Column& c = data.column(names[static_cast<std::size_t>(j)]);
      std::vector<double> obs;
      for (int i = 0; i < n; ++i)
        if (c.values[i]) obs.push_back(*c.values[i]);
      if (obs.empty()) throw std::runtime_error("column entirely missing: " + c.name);
      for (int i = 0; i < n; ++i)
        if (missing[static_cast<std::size_t>(j)][i])
          values(i, j) = obs[rng.uniform_index(obs.size())];
    }
  }

  Eigen::VectorXd eval_term(const FixedTerm& t) const {
    auto col = [&](const std::string& name) -> Eigen::VectorXd {
      auto it = index.find(name);
      if (it == index.end())
        throw std::invalid_argument("passive term refers to unknown column: " + name);
      return values.col(it->second);
    };
    switch (t.kind) {
      case FixedTerm::Kind::intercept: return Eigen::VectorXd::Ones(n);
      case FixedTerm::Kind::main: return col(t.a);
      case FixedTerm::Kind::product: return col(t.a).cwiseProduct(col(t.b));
      case FixedTerm::Kind::square: {
        Eigen::VectorXd v = col(t.a);
        return v.cwiseProduct(v);
      }
    }
    throw std::logic_error("bad term");
  }

  WideDataset completed(const WideDataset& data) const {
    WideDataset out = data;
    for (int j : incomplete) {
      Column& c = out.column(names[static_cast<std::size_t>(j)]);
      for (int i = 0; i < n; ++i)
        if (missing[static_cast<std::size_t>(j)][i]) c.values[i] = values(i, j);
    }
    return out;
  }
};

// Complete fixed predictor block shared by every iteration: intercept,
// complete usable columns, optionally school dummy indicators.
Eigen::MatrixXd complete_design(const WideWork& w, const WideDataset& data,
                                bool dummy_indicators) {
  DesignMatrix di;
  if (dummy_indicators) di = build_dummy_indicators(data.school);
  const Eigen::Index p =
      1 + static_cast<Eigen::Index>(w.complete.size()) + di.entries.cols();
  Eigen::MatrixXd X(w.n, p);
  X.col(0).setOnes();
  Eigen::Index k = 1;
  for (int j : w.complete) X.col(k++) = w.values.col(j);
  for (Eigen::Index j = 0; j < di.entries.cols(); ++j)
    X.col(k++) = di.entries.col(j);
  return X;
}

std::map<std::uint64_t, std::vector<int>> missing_patterns(const WideWork& w) {
  std::map<std::uint64_t, std::vector<int>> pat;
  for (int i = 0; i < w.n; ++i) {
    std::uint64_t mask = 0;
    for (std::size_t k = 0; k < w.incomplete.size(); ++k)
      if (w.missing[static_cast<std::size_t>(w.incomplete[k])][i])
        mask |= (1ULL << k);
    if (mask) pat[mask].push_back(i);
  }
  return pat;
}

ImputedSet identity_set(const WideDataset& data, int m) {
  ImputedSet out;
  out.wide.assign(static_cast<std::size_t>(m), data);
  return out;
}

// Shared JM data-augmentation loop; with_random_intercepts switches between
// the DI fixed-effects form and the school-random-effects MLMM.
ImputedSet jm_impute(const WideDataset& data, const ImputationConfig& cfg,
                     bool with_random_intercepts) {
  if (cfg.m < 2) throw std::invalid_argument("need m >= 2 imputations");
  WideWork w(data);
  if (w.incomplete.empty()) return identity_set(data, cfg.m);

  Rng rng(mix64(cfg.seed, hash_label("jm")));
  w.random_fill(data, rng);

  const int q = static_cast<int>(w.incomplete.size());
  Eigen::MatrixXd X = complete_design(w, data, !with_random_intercepts);
  const int p = static_cast<int>(X.cols());
  if (w.n <= p + q) throw std::runtime_error("too few rows for the joint model");

  Eigen::LLT<Eigen::MatrixXd> llt(X.transpose() * X);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("collinear predictors in joint imputation model");
  // lower Cholesky of (X'X)^-1
  Eigen::MatrixXd xtx_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd chol_xtx_inv = Eigen::LLT<Eigen::MatrixXd>(xtx_inv).matrixL();

  GroupIndex schools = GroupIndex::from_codes(data.school);
  auto pat = missing_patterns(w);

  Eigen::MatrixXd Y(w.n, q);
  for (int k = 0; k < q; ++k) Y.col(k) = w.values.col(w.incomplete[k]);

  Eigen::MatrixXd B = llt.solve(X.transpose() * Y);
  Eigen::MatrixXd Sigma = Eigen::MatrixXd::Identity(q, q);
  Eigen::MatrixXd U = Eigen::MatrixXd::Zero(schools.n_groups(), q);  // 2L only
  Eigen::MatrixXd Psi = Eigen::MatrixXd::Identity(q, q);

  ImputedSet out;
  const int total = cfg.burn_in + (cfg.m - 1) * std::max(1, cfg.between);
  for (int it = 1; it <= total; ++it) {
    if (with_random_intercepts) {
      // u_s | B, Sigma, Psi
      Eigen::MatrixXd resid = Y - X * B;
      Eigen::MatrixXd sigma_inv = Sigma.inverse();
      Eigen::MatrixXd psi_inv = Psi.inverse();
      for (int s = 0; s < schools.n_groups(); ++s) {
        Eigen::MatrixXd prec = schools.len[s] * sigma_inv + psi_inv;
        Eigen::LLT<Eigen::MatrixXd> pl(prec);
        Eigen::VectorXd rhs = sigma_inv * resid.middleRows(schools.start[s],
                                                           schools.len[s])
                                              .colwise()
                                              .sum()
                                              .transpose();
        Eigen::VectorXd mean = pl.solve(rhs);
        U.row(s) = (mean + pl.matrixU().solve(rng.normal_vector(q))).transpose();
      }
      Psi = rng.inv_wishart(q + 1 + schools.n_groups(),
                            Eigen::MatrixXd::Identity(q, q) + U.transpose() * U);
      // fold the random effects out of Y for the regression draw
      Eigen::MatrixXd Y_adj = Y;
      for (int s = 0; s < schools.n_groups(); ++s)
        Y_adj.middleRows(schools.start[s], schools.len[s]).rowwise() -= U.row(s);
      auto d = draw_mv_regression(X, Y_adj, chol_xtx_inv, B, rng);
      B = d.B;
      Sigma = d.Sigma;
    } else {
      auto d = draw_mv_regression(X, Y, chol_xtx_inv, B, rng);
      B = d.B;
      Sigma = d.Sigma;
    }

    // missing cells from row conditionals
    Eigen::MatrixXd M = X * B;
    if (with_random_intercepts)
      for (int s = 0; s < schools.n_groups(); ++s)
        M.middleRows(schools.start[s], schools.len[s]).rowwise() += U.row(s);
    for (const auto& [mask, rows] : pat) {
      std::vector<int> obs, mis;
      for (int k = 0; k < q; ++k)
        ((mask >> k) & 1 ? mis : obs).push_back(k);
      ConditionalNormal cn(Sigma, obs, mis);
      Eigen::VectorXd x(q), mu(q);
      for (int i : rows) {
        x = Y.row(i).transpose();
        mu = M.row(i).transpose();
        cn.draw_into(mu, x, rng);
        Y.row(i) = x.transpose();
      }
    }

    if (it >= cfg.burn_in &&
        (it - cfg.burn_in) % std::max(1, cfg.between) == 0 &&
        out.wide.size() < static_cast<std::size_t>(cfg.m)) {
      for (int k = 0; k < q; ++k) w.values.col(w.incomplete[k]) = Y.col(k);
      out.wide.push_back(w.completed(data));
    }
  }
  if (out.wide.size() != static_cast<std::size_t>(cfg.m))
    throw std::logic_error("joint chain saved wrong number of datasets");
  return out;
}

// Shared FCS loop; two_level switches each univariate model from a DI
// regression to a school random-intercept LMM.
ImputedSet fcs_impute(const WideDataset& data, const ImputationConfig& cfg,
                      bool two_level) {
  if (cfg.m < 2) throw std::invalid_argument("need m >= 2 imputations");
  WideWork probe(data);
  if (probe.incomplete.empty()) return identity_set(data, cfg.m);

  PassivePlan plan;
  if (cfg.variant == Variant::passive_c || cfg.variant == Variant::passive_all) {
    SubstantiveModelSpec spec;
    spec.model = cfg.model;
    plan = passive_predictor_plan(cfg.variant, spec, data.waves);
  }

  DesignMatrix di;
  if (!two_level) di = build_dummy_indicators(data.school);
  GroupIndex schools = GroupIndex::from_codes(data.school);

  Rng master(mix64(cfg.seed, hash_label("fcs")));
  ImputedSet out;

  for (int imp = 0; imp < cfg.m; ++imp) {
    Rng rng = master.fork(static_cast<std::uint64_t>(imp));
    WideWork w(data);
    w.random_fill(data, rng);

    // per-target persistent two-level state
    std::vector<Eigen::VectorXd> u_state(w.incomplete.size());
    std::vector<double> sig_u2(w.incomplete.size(), 0.0);
    for (auto& u : u_state) u = Eigen::VectorXd::Zero(schools.n_groups());

    for (int cycle = 0; cycle < cfg.burn_in; ++cycle) {
      for (std::size_t ti = 0; ti < w.incomplete.size(); ++ti) {
        const int t = w.incomplete[ti];
        const auto& t_missing = w.missing[static_cast<std::size_t>(t)];

        // predictors: all other usable columns, passive terms, DIs
        std::vector<Eigen::VectorXd> cols;
        cols.push_back(Eigen::VectorXd::Ones(w.n));
        for (std::size_t j = 0; j < w.names.size(); ++j)
          if (static_cast<int>(j) != t) cols.push_back(w.values.col(j));
        auto pit = plan.extra_predictors.find(w.names[static_cast<std::size_t>(t)]);
        if (pit != plan.extra_predictors.end())
          for (const auto& term : pit->second) cols.push_back(w.eval_term(term));
        Eigen::Index p = static_cast<Eigen::Index>(cols.size()) + di.entries.cols();
        Eigen::MatrixXd X(w.n, p);
        for (std::size_t j = 0; j < cols.size(); ++j)
          X.col(static_cast<Eigen::Index>(j)) = cols[j];
        for (Eigen::Index j = 0; j < di.entries.cols(); ++j)
          X.col(static_cast<Eigen::Index>(cols.size()) + j) = di.entries.col(j);

        Eigen::VectorXd y = w.values.col(t);
        const int n_obs = w.n - w.missing_count[static_cast<std::size_t>(t)];
        Eigen::MatrixXd X_obs(n_obs, p);
        Eigen::VectorXd y_obs(n_obs);
        std::vector<int> school_of_obs(static_cast<std::size_t>(n_obs));
        int r = 0;
        for (int i = 0; i < w.n; ++i) {
          if (t_missing[i]) continue;
          X_obs.row(r) = X.row(i);
          y_obs(r) = y(i);
          school_of_obs[static_cast<std::size_t>(r)] = schools.of_row[i];
          ++r;
        }

        if (!two_level) {
          auto d = draw_regression(X_obs, y_obs, rng);
          double sd = std::sqrt(d.sigma2);
          for (int i = 0; i < w.n; ++i)
            if (t_missing[i])
              w.values(i, t) = X.row(i) * d.beta + sd * rng.normal();
        } else {
          Eigen::VectorXd& u = u_state[ti];
          if (cycle == 0) {
            auto d0 = draw_regression(X_obs, y_obs, rng);
            sig_u2[ti] = std::max(0.5 * d0.sigma2, 1e-6);
          }
          // beta | u
          Eigen::VectorXd y_adj = y_obs;
          for (int i = 0; i < n_obs; ++i)
            y_adj(i) -= u(school_of_obs[static_cast<std::size_t>(i)]);
          auto d = draw_regression(X_obs, y_adj, rng);
          // u_s | beta; schools without observed rows get a prior draw
          Eigen::VectorXd resid = y_obs - X_obs * d.beta;
          Eigen::VectorXd sum_s = Eigen::VectorXd::Zero(schools.n_groups());
          Eigen::VectorXd cnt_s = Eigen::VectorXd::Zero(schools.n_groups());
          for (int i = 0; i < n_obs; ++i) {
            sum_s(school_of_obs[static_cast<std::size_t>(i)]) += resid(i);
            cnt_s(school_of_obs[static_cast<std::size_t>(i)]) += 1.0;
          }
          for (int s = 0; s < schools.n_groups(); ++s) {
            double prec = cnt_s(s) / d.sigma2 + 1.0 / sig_u2[ti];
            u(s) = rng.normal(sum_s(s) / d.sigma2 / prec, std::sqrt(1.0 / prec));
          }
          sig_u2[ti] = rng.inv_gamma(0.001 + 0.5 * schools.n_groups(),
                                     0.001 + 0.5 * u.squaredNorm());
          double sd = std::sqrt(d.sigma2);
          for (int i = 0; i < w.n; ++i)
            if (t_missing[i])
              w.values(i, t) =
                  X.row(i) * d.beta + u(schools.of_row[i]) + sd * rng.normal();
        }
      }
    }
    out.wide.push_back(w.completed(data));
  }
  return out;
}

}  // namespace

ImputedSet impute_jm_1l_di_wide(const WideDataset& data, const ImputationConfig& cfg) {
  return jm_impute(data, cfg, false);
}

ImputedSet impute_jm_2l_wide(const WideDataset& data, const ImputationConfig& cfg) {
  return jm_impute(data, cfg, true);
}

ImputedSet impute_fcs_1l_di_wide(const WideDataset& data, const ImputationConfig& cfg) {
  return fcs_impute(data, cfg, false);
}

ImputedSet impute_fcs_2l_wide(const WideDataset& data, const ImputationConfig& cfg) {
  return fcs_impute(data, cfg, true);
}

WideDataset derive_jav_columns(const WideDataset& data,
                               const SubstantiveModelSpec& model) {
  if (model.model == AnalysisModel::model1)
    throw std::invalid_argument("model1 has no derived term to impute");
  WideDataset out = data;
  for (int wave : data.waves) {
    const int k = wave - 1;  // exposure wave
    const std::string dep_name = "dep" + std::to_string(k);
    const Column& dep = data.column(dep_name);
    Column jav;
    jav.name = "jav" + std::to_string(k);
    jav.role = ColumnRole::derived;
    jav.level = 2;  // wide columns are per-child
    jav.values.resize(dep.values.size());
    if (model.model == AnalysisModel::model2) {
      const Column& ses = data.column("ses");
      jav.formula = dep_name + "*ses";
      for (std::size_t i = 0; i < dep.values.size(); ++i)
        if (dep.values[i] && ses.values[i])
          jav.values[i] = *dep.values[i] * *ses.values[i];
    } else {
      jav.formula = dep_name + "^2";
      for (std::size_t i = 0; i < dep.values.size(); ++i)
        if (dep.values[i]) jav.values[i] = *dep.values[i] * *dep.values[i];
    }
    out.columns.push_back(std::move(jav));
  }
  out.time_varying.push_back({"jav", ColumnRole::derived, -1});
  return out;
}

PassivePlan passive_predictor_plan(Variant variant, const SubstantiveModelSpec& model,
                                   const std::vector<int>& waves) {
  if (variant != Variant::passive_c && variant != Variant::passive_all)
    throw std::invalid_argument("not a passive variant");
  if (model.model == AnalysisModel::model1)
    throw std::invalid_argument("model1 needs no passive terms");

  PassivePlan plan;
  auto dep_name = [](int w) { return "dep" + std::to_string(w - 1); };
  auto napz_name = [](int w) { return "napz" + std::to_string(w); };

  if (model.model == AnalysisModel::model2) {
    for (int w : waves) {
      std::vector<FixedTerm>& t = plan.extra_predictors[dep_name(w)];
      if (variant == Variant::passive_c) {
        t.push_back(FixedTerm::Product(napz_name(w), "ses"));
      } else {
        for (int w2 : waves) t.push_back(FixedTerm::Product(napz_name(w2), "ses"));
      }
    }
    std::vector<FixedTerm>& s = plan.extra_predictors["ses"];
    for (int w : waves) s.push_back(FixedTerm::Product(napz_name(w), dep_name(w)));
  } else {
    // model3: squares of the other exposure waves; SES sees all of them
    for (int w : waves) {
      std::vector<FixedTerm>& t = plan.extra_predictors[dep_name(w)];
      for (int w2 : waves)
        if (w2 != w) t.push_back(FixedTerm::Square(dep_name(w2)));
    }
    std::vector<FixedTerm>& s = plan.extra_predictors["ses"];
    for (int w : waves) s.push_back(FixedTerm::Square(dep_name(w)));
  }
  return plan;
}

}  // namespace mlmi
