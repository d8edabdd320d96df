#include "mlmi/gibbs.hpp"

#include <stdexcept>

namespace mlmi {

namespace {
constexpr double kIgShape = 0.001;
constexpr double kIgRate = 0.001;
}  // namespace

RegressionDraw draw_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               Rng& rng) {
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (n <= p) throw std::runtime_error("draw_regression: n <= p");
  Eigen::MatrixXd xtx = X.transpose() * X;
  Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("draw_regression: rank-deficient design");
  Eigen::VectorXd beta_hat = llt.solve(X.transpose() * y);
  double rss = (y - X * beta_hat).squaredNorm();

  RegressionDraw d;
  d.sigma2 = rng.inv_gamma(kIgShape + 0.5 * (n - p), kIgRate + 0.5 * rss);
  // solve L' w = z gives w ~ N(0, (X'X)^-1)
  Eigen::VectorXd z = rng.normal_vector(p);
  Eigen::VectorXd w = llt.matrixU().solve(z);
  d.beta = beta_hat + std::sqrt(d.sigma2) * w;
  return d;
}

MvRegressionDraw draw_mv_regression(const Eigen::MatrixXd& X,
                                    const Eigen::MatrixXd& Y,
                                    const Eigen::MatrixXd& chol_xtx_inv,
                                    const Eigen::MatrixXd& B_prev, Rng& rng) {
  const int n = static_cast<int>(X.rows());
  const int q = static_cast<int>(Y.cols());

  Eigen::MatrixXd resid = Y - X * B_prev;
  Eigen::MatrixXd scale =
      Eigen::MatrixXd::Identity(q, q) + resid.transpose() * resid;

  MvRegressionDraw d;
  for (int attempt = 0;; ++attempt) {
    d.Sigma = rng.inv_wishart(q + 1 + n, scale);
    Eigen::LLT<Eigen::MatrixXd> llt(d.Sigma);
    if (llt.info() == Eigen::Success) break;
    if (attempt >= 10)
      throw std::runtime_error("covariance draw not positive-definite");
    scale += 1e-8 * Eigen::MatrixXd::Identity(q, q);
  }

  Eigen::MatrixXd B_hat =
      chol_xtx_inv * chol_xtx_inv.transpose() * (X.transpose() * Y);
  Eigen::MatrixXd chol_sigma = d.Sigma.llt().matrixL();
  d.B = B_hat + chol_xtx_inv *
                    rng.normal_matrix(static_cast<int>(X.cols()), q) *
                    chol_sigma.transpose();
  return d;
}

ConditionalNormal::ConditionalNormal(const Eigen::MatrixXd& sigma,
                                     std::vector<int> obs_idx,
                                     std::vector<int> mis_idx)
    : obs(std::move(obs_idx)), mis(std::move(mis_idx)) {
  const int no = static_cast<int>(obs.size());
  const int nm = static_cast<int>(mis.size());
  Eigen::MatrixXd s_oo(no, no), s_mo(nm, no), s_mm(nm, nm);
  for (int i = 0; i < no; ++i)
    for (int j = 0; j < no; ++j) s_oo(i, j) = sigma(obs[i], obs[j]);
  for (int i = 0; i < nm; ++i)
    for (int j = 0; j < no; ++j) s_mo(i, j) = sigma(mis[i], obs[j]);
  for (int i = 0; i < nm; ++i)
    for (int j = 0; j < nm; ++j) s_mm(i, j) = sigma(mis[i], mis[j]);

  if (no > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(s_oo);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("singular observed block in conditional normal");
    reg = llt.solve(s_mo.transpose()).transpose();  // Sig_mo Sig_oo^-1
    cond_cov = s_mm - reg * s_mo.transpose();
  } else {
    reg.resize(nm, 0);
    cond_cov = s_mm;
  }
  // symmetrize before factoring; tiny asymmetry accumulates from the solve
  cond_cov = 0.5 * (cond_cov + cond_cov.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(cond_cov +
                                  1e-12 * Eigen::MatrixXd::Identity(nm, nm));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("conditional covariance not positive-definite");
  chol_cond = llt.matrixL();
}

void ConditionalNormal::draw_into(const Eigen::VectorXd& mu, Eigen::VectorXd& x,
                                  Rng& rng) const {
  const int no = static_cast<int>(obs.size());
  const int nm = static_cast<int>(mis.size());
  Eigen::VectorXd dev(no);
  for (int i = 0; i < no; ++i) dev(i) = x(obs[i]) - mu(obs[i]);
  Eigen::VectorXd m(nm);
  for (int i = 0; i < nm; ++i) m(i) = mu(mis[i]);
  if (no > 0) m += reg * dev;
  Eigen::VectorXd draw = m + chol_cond * rng.normal_vector(nm);
  for (int i = 0; i < nm; ++i) x(mis[i]) = draw(i);
}

GroupIndex GroupIndex::from_codes(const std::vector<int>& codes) {
  GroupIndex g;
  g.of_row.resize(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (i == 0 || codes[i] != codes[i - 1]) {
      g.start.push_back(static_cast<int>(i));
      g.len.push_back(0);
    }
    ++g.len.back();
    g.of_row[i] = static_cast<int>(g.start.size()) - 1;
  }
  return g;
}

void UniLmm2State::init(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const GroupIndex& g) {
  Eigen::LLT<Eigen::MatrixXd> llt(X.transpose() * X);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("rank-deficient design in two-level sampler");
  beta = llt.solve(X.transpose() * y);
  u = Eigen::VectorXd::Zero(g.n_groups());
  double rv = (y - X * beta).squaredNorm() / std::max<int>(1, y.size() - X.cols());
  sig_u2 = std::max(0.5 * rv, 1e-6);
  sig_e2 = std::max(0.5 * rv, 1e-6);
}

void UniLmm2State::sweep(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const GroupIndex& g, Rng& rng) {
  const int n = static_cast<int>(y.size());
  const int p = static_cast<int>(X.cols());
  const int ng = g.n_groups();

  // beta | u, sig_e2
  Eigen::VectorXd y_adj = y;
  for (int i = 0; i < n; ++i) y_adj(i) -= u(g.of_row[i]);
  Eigen::LLT<Eigen::MatrixXd> llt(X.transpose() * X);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("rank-deficient design in two-level sampler");
  Eigen::VectorXd beta_hat = llt.solve(X.transpose() * y_adj);
  beta = beta_hat +
         std::sqrt(sig_e2) * llt.matrixU().solve(rng.normal_vector(p));

  // u_g | beta, variances
  Eigen::VectorXd resid = y - X * beta;
  for (int gi = 0; gi < ng; ++gi) {
    double s = resid.segment(g.start[gi], g.len[gi]).sum();
    double prec = g.len[gi] / sig_e2 + 1.0 / sig_u2;
    u(gi) = rng.normal(s / sig_e2 / prec, std::sqrt(1.0 / prec));
  }

  sig_u2 = rng.inv_gamma(kIgShape + 0.5 * ng, kIgRate + 0.5 * u.squaredNorm());

  double rss = 0.0;
  for (int i = 0; i < n; ++i) {
    double e = resid(i) - u(g.of_row[i]);
    rss += e * e;
  }
  sig_e2 = rng.inv_gamma(kIgShape + 0.5 * n, kIgRate + 0.5 * rss);
}

void UniLmm3State::init(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const GroupIndex& outer, const GroupIndex& inner) {
  Eigen::LLT<Eigen::MatrixXd> llt(X.transpose() * X);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("rank-deficient design in three-level sampler");
  beta = llt.solve(X.transpose() * y);
  v = Eigen::VectorXd::Zero(outer.n_groups());
  u = Eigen::VectorXd::Zero(inner.n_groups());
  double rv = (y - X * beta).squaredNorm() / std::max<int>(1, y.size() - X.cols());
  sig_v2 = std::max(0.25 * rv, 1e-6);
  sig_u2 = std::max(0.25 * rv, 1e-6);
  sig_e2 = std::max(0.5 * rv, 1e-6);
}

void UniLmm3State::sweep(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const GroupIndex& outer, const GroupIndex& inner,
                         Rng& rng) {
  const int n = static_cast<int>(y.size());
  const int p = static_cast<int>(X.cols());
  const int nv = outer.n_groups();
  const int nu = inner.n_groups();

  Eigen::VectorXd y_adj = y;
  for (int i = 0; i < n; ++i)
    y_adj(i) -= v(outer.of_row[i]) + u(inner.of_row[i]);
  Eigen::LLT<Eigen::MatrixXd> llt(X.transpose() * X);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("rank-deficient design in three-level sampler");
  Eigen::VectorXd beta_hat = llt.solve(X.transpose() * y_adj);
  beta = beta_hat +
         std::sqrt(sig_e2) * llt.matrixU().solve(rng.normal_vector(p));

  Eigen::VectorXd resid = y - X * beta;

  // inner intercepts given outer ones
  for (int gi = 0; gi < nu; ++gi) {
    double s = 0.0;
    for (int i = inner.start[gi]; i < inner.start[gi] + inner.len[gi]; ++i)
      s += resid(i) - v(outer.of_row[i]);
    double prec = inner.len[gi] / sig_e2 + 1.0 / sig_u2;
    u(gi) = rng.normal(s / sig_e2 / prec, std::sqrt(1.0 / prec));
  }
  // outer intercepts given inner ones
  for (int gi = 0; gi < nv; ++gi) {
    double s = 0.0;
    for (int i = outer.start[gi]; i < outer.start[gi] + outer.len[gi]; ++i)
      s += resid(i) - u(inner.of_row[i]);
    double prec = outer.len[gi] / sig_e2 + 1.0 / sig_v2;
    v(gi) = rng.normal(s / sig_e2 / prec, std::sqrt(1.0 / prec));
  }
  sig_u2 = rng.inv_gamma(kIgShape + 0.5 * nu, kIgRate + 0.5 * u.squaredNorm());
  sig_v2 = rng.inv_gamma(kIgShape + 0.5 * nv, kIgRate + 0.5 * v.squaredNorm());

  double rss = 0.0;
  for (int i = 0; i < n; ++i) {
    double e = resid(i) - v(outer.of_row[i]) - u(inner.of_row[i]);
    rss += e * e;
  }
  sig_e2 = rng.inv_gamma(kIgShape + 0.5 * n, kIgRate + 0.5 * rss);
}

}  // namespace mlmi
