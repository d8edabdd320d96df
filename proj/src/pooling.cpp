#include "mlmi/pooling.hpp"

#include <cmath>
#include <stdexcept>

#include "mlmi/stats.hpp"

namespace mlmi {

LmmFit fit_substantive(const SubstantiveModelSpec& model, const LongDataset& completed,
                       const std::string& derived_interaction) {
  return fit_lmm(model.analysis_spec(derived_interaction), completed);
}

PooledParameter rubin_pool(const std::string& label, const std::vector<double>& q,
                           const std::vector<double>& se, int n_com) {
  const std::size_t m = q.size();
  if (m < 2 || se.size() != m)
    throw std::invalid_argument("rubin_pool needs m >= 2 matched (Q, SE) pairs");

  PooledParameter p;
  p.label = label;
  p.qbar = mean(q);
  std::vector<double> w(m);
  for (std::size_t i = 0; i < m; ++i) w[i] = se[i] * se[i];
  p.wbar = mean(w);
  p.b = sample_variance(q);
  const double md = static_cast<double>(m);
  p.t = p.wbar + (1.0 + 1.0 / md) * p.b;

  if (p.t <= 0.0) {
    p.df = 1e8;
    p.ci_lo = p.ci_hi = p.qbar;
    return p;
  }
  const double lambda = (1.0 + 1.0 / md) * p.b / p.t;
  double nu;
  if (lambda <= 0.0) {
    nu = 1e8;  // B = 0: complete agreement across imputations
  } else {
    const double nu_old = (md - 1.0) / (lambda * lambda);
    const double nu_com = std::max(1.0, static_cast<double>(n_com));
    const double nu_obs = nu_com * (nu_com + 1.0) / (nu_com + 3.0) * (1.0 - lambda);
    nu = 1.0 / (1.0 / nu_old + 1.0 / nu_obs);
  }
  p.df = nu;
  const double half = t_quantile(0.975, nu) * std::sqrt(p.t);
  p.ci_lo = p.qbar - half;
  p.ci_hi = p.qbar + half;
  return p;
}

std::array<double, 3> pool_variance_components(
    const std::vector<std::array<double, 3>>& vcs) {
  if (vcs.size() < 2)
    throw std::invalid_argument("pool_variance_components needs m >= 2");
  std::array<double, 3> out{0.0, 0.0, 0.0};
  for (const auto& v : vcs)
    for (int j = 0; j < 3; ++j) out[j] += v[j];
  for (int j = 0; j < 3; ++j) out[j] /= static_cast<double>(vcs.size());
  return out;
}

RepEstimate pool_imputed_set(const SubstantiveModelSpec& model,
                             const std::vector<LongDataset>& completed,
                             const std::string& derived_interaction) {
  if (completed.size() < 2)
    throw std::invalid_argument("pooling needs m >= 2 completed datasets");

  std::vector<LmmFit> fits;
  fits.reserve(completed.size());
  for (const auto& d : completed)
    fits.push_back(fit_substantive(model, d, derived_interaction));

  RepEstimate rep;
  rep.n_obs = fits.front().n_obs;
  const std::size_t np = fits.front().term_labels.size();
  const int n_com = fits.front().n_obs - static_cast<int>(np);
  for (std::size_t j = 0; j < np; ++j) {
    std::vector<double> q, se;
    for (const auto& f : fits) {
      q.push_back(f.beta_hat(static_cast<Eigen::Index>(j)));
      se.push_back(f.se_beta(static_cast<Eigen::Index>(j)));
    }
    rep.params.push_back(rubin_pool(fits.front().term_labels[j], q, se, n_com));
  }
  std::vector<std::array<double, 3>> vcs;
  for (const auto& f : fits) vcs.push_back({f.vc3, f.vc2, f.vc1});
  rep.vc = pool_variance_components(vcs);
  for (const auto& f : fits) rep.converged = rep.converged && f.converged;
  return rep;
}

}  // namespace mlmi
