#include "mlmi/lmm.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <type_traits>

#include "mlmi/stats.hpp"

namespace mlmi {

std::string FixedTerm::label() const {
  switch (kind) {
    case Kind::intercept: return "(Intercept)";
    case Kind::main: return a;
    case Kind::product: return a + ":" + b;
    case Kind::square: return a + "^2";
  }
  return a;
}

double LmmFit::beta(const std::string& label) const {
  for (std::size_t i = 0; i < term_labels.size(); ++i)
    if (term_labels[i] == label) return beta_hat(static_cast<Eigen::Index>(i));
  throw std::invalid_argument("no fitted term: " + label);
}

double LmmFit::se(const std::string& label) const {
  for (std::size_t i = 0; i < term_labels.size(); ++i)
    if (term_labels[i] == label) return se_beta(static_cast<Eigen::Index>(i));
  throw std::invalid_argument("no fitted term: " + label);
}

namespace {

template <typename D>
Eigen::MatrixXd build_design_impl(const std::vector<FixedTerm>& terms, const D& data,
                                  std::vector<std::string>* labels) {
  Eigen::Index n = 0;
  if (!terms.empty()) {
    for (const auto& t : terms) {
      if (t.kind != FixedTerm::Kind::intercept) {
        n = static_cast<Eigen::Index>(data.column(t.a).values.size());
        break;
      }
    }
  }
  if (n == 0) n = static_cast<Eigen::Index>(data.n_rows());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(terms.size()));
  for (std::size_t j = 0; j < terms.size(); ++j) {
    const auto& t = terms[j];
    Eigen::Index col = static_cast<Eigen::Index>(j);
    switch (t.kind) {
      case FixedTerm::Kind::intercept:
        X.col(col).setOnes();
        break;
      case FixedTerm::Kind::main:
        X.col(col) = data.dense_column(t.a);
        break;
      case FixedTerm::Kind::product:
        X.col(col) =
            data.dense_column(t.a).cwiseProduct(data.dense_column(t.b));
        break;
      case FixedTerm::Kind::square: {
        Eigen::VectorXd v = data.dense_column(t.a);
        X.col(col) = v.cwiseProduct(v);
        break;
      }
    }
    if (labels) labels->push_back(t.label());
  }
  return X;
}

// Run-length group structure; rows must be contiguous per group.
struct Runs {
  std::vector<int> start;
  std::vector<int> len;
};

Runs make_runs(const std::vector<int>& codes) {
  Runs r;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (i == 0 || codes[i] != codes[i - 1]) {
      r.start.push_back(static_cast<int>(i));
      r.len.push_back(0);
    }
    ++r.len.back();
  }
  return r;
}

// Precomputed sufficient statistics for the profiled REML criterion of a
// random-intercept model with up to two nested levels.  The marginal
// correlation is W = I + rho_in * sum J_inner + rho_out * sum J_outer; child
// blocks are inverted in closed form and the outer group enters as a rank-one
// update, so each evaluation is O(#groups * p^2).
class RemlEngine {
 public:
  RemlEngine(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
             const std::vector<int>& group_outer,
             const std::vector<int>& group_inner)
      : n_(static_cast<int>(X.rows())), p_(static_cast<int>(X.cols())) {
    has_outer_ = !group_outer.empty();
    has_inner_ = !group_inner.empty();
    // A single grouping is always treated as the block-diagonal (inner) one.
    const std::vector<int>& inner =
        has_inner_ ? group_inner : group_outer;
    if (has_outer_ && !has_inner_) {
      has_outer_ = false;
      has_inner_ = true;
    }
    if (has_inner_) {
      inner_ = make_runs(inner);
      if (has_outer_) {
        // outer runs measured in inner-group units
        std::vector<int> outer_of_inner;
        for (std::size_t g = 0; g < inner_.start.size(); ++g)
          outer_of_inner.push_back(group_outer[inner_.start[g]]);
        outer_ = make_runs(outer_of_inner);
      } else {
        outer_.start.resize(inner_.start.size());
        outer_.len.assign(inner_.start.size(), 1);
        for (std::size_t g = 0; g < inner_.start.size(); ++g)
          outer_.start[g] = static_cast<int>(g);
      }
    }
    XtX_ = X.transpose() * X;
    Xty_ = X.transpose() * y;
    yty_ = y.squaredNorm();
    if (has_inner_) {
      const std::size_t ng = inner_.start.size();
      sx_.resize(p_, static_cast<Eigen::Index>(ng));
      sy_.resize(static_cast<Eigen::Index>(ng));
      for (std::size_t g = 0; g < ng; ++g) {
        sx_.col(static_cast<Eigen::Index>(g)) =
            X.middleRows(inner_.start[g], inner_.len[g]).colwise().sum();
        sy_(static_cast<Eigen::Index>(g)) =
            y.segment(inner_.start[g], inner_.len[g]).sum();
      }
    }
  }

  int n() const { return n_; }
  int p() const { return p_; }
  int n_inner_groups() const { return static_cast<int>(inner_.start.size()); }
  int n_outer_groups() const {
    return has_outer_ ? static_cast<int>(outer_.start.size()) : 0;
  }
  bool two_levels() const { return has_outer_; }

  struct Eval {
    double loglik = kNegInf;    // profiled restricted log-likelihood
    double sigma2 = 0.0;        // profiled residual variance
    double logdet_w = 0.0;
    double logdet_xtwx = 0.0;
    double rss_w = 0.0;         // r' W^-1 r
    Eigen::VectorXd beta;
    Eigen::MatrixXd xtwx;
  };

  Eval evaluate(double rho_in, double rho_out) const {
    Eval e;
    Eigen::MatrixXd xtwx = XtX_;
    Eigen::VectorXd xtwy = Xty_;
    double ytwy = yty_;
    double logdet = 0.0;

    if (has_inner_) {
      Eigen::VectorXd tx(p_);
      for (std::size_t oi = 0; oi < outer_.start.size(); ++oi) {
        tx.setZero();
        double ty = 0.0, s = 0.0;
        for (int g = outer_.start[oi]; g < outer_.start[oi] + outer_.len[oi]; ++g) {
          const double nc = inner_.len[g];
          const double d = 1.0 + nc * rho_in;
          const double w = rho_in / d;
          const auto sxg = sx_.col(g);
          const double syg = sy_(g);
          if (w != 0.0) {
            xtwx.noalias() -= w * sxg * sxg.transpose();
            xtwy.noalias() -= (w * syg) * sxg;
            ytwy -= w * syg * syg;
            logdet += std::log(d);
          }
          tx.noalias() += sxg / d;
          ty += syg / d;
          s += nc / d;
        }
        if (rho_out != 0.0) {
          const double c = rho_out / (1.0 + rho_out * s);
          xtwx.noalias() -= c * tx * tx.transpose();
          xtwy.noalias() -= (c * ty) * tx;
          ytwy -= c * ty * ty;
          logdet += std::log(1.0 + rho_out * s);
        }
      }
    }

    Eigen::LLT<Eigen::MatrixXd> llt(xtwx);
    if (llt.info() != Eigen::Success) return e;
    e.beta = llt.solve(xtwy);
    e.xtwx = std::move(xtwx);
    e.rss_w = ytwy - 2.0 * e.beta.dot(xtwy) + e.beta.dot(e.xtwx * e.beta);
    e.logdet_w = logdet;
    e.logdet_xtwx = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double dof = n_ - p_;
    if (e.rss_w <= 1e-12 * std::max(1.0, yty_)) {
      // degenerate exact fit; callers special-case this
      e.sigma2 = 0.0;
      e.loglik = std::numeric_limits<double>::max();
      return e;
    }
    e.sigma2 = e.rss_w / dof;
    e.loglik = -0.5 * (dof * (1.0 + std::log(2.0 * M_PI * e.sigma2)) +
                       e.logdet_w + e.logdet_xtwx);
    return e;
  }

  double profiled(double rho_in, double rho_out) const {
    return evaluate(rho_in, rho_out).loglik;
  }

 private:
  int n_, p_;
  bool has_outer_ = false, has_inner_ = false;
  Runs inner_, outer_;
  Eigen::MatrixXd XtX_, sx_;
  Eigen::VectorXd Xty_, sy_;
  double yty_ = 0.0;
};

constexpr double kLogRhoFloor = -30.0;
constexpr double kLogRhoCeil = 16.0;

double clamp_log_rho(double lr) {
  return std::min(std::max(lr, kLogRhoFloor), kLogRhoCeil);
}

// Golden-section maximization of f over [lo, hi].
template <typename F>
double golden_max(F&& f, double lo, double hi, double tol = 1e-9) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

struct NmResult {
  Eigen::Vector2d x;
  double f = kNegInf;
  double spread = 0.0;
};

template <typename F>
NmResult nelder_mead2(F&& f, Eigen::Vector2d x0, double step, int max_iter,
                      double tol) {
  std::array<Eigen::Vector2d, 3> xs = {x0, x0 + Eigen::Vector2d(step, 0.0),
                                       x0 + Eigen::Vector2d(0.0, step)};
  std::array<double, 3> fs;
  for (int i = 0; i < 3; ++i) fs[i] = f(xs[i]);
  auto order = [&] {
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        if (fs[j] > fs[i]) {
          std::swap(fs[i], fs[j]);
          std::swap(xs[i], xs[j]);
        }
  };
  for (int it = 0; it < max_iter; ++it) {
    order();
    double spread = std::max((xs[0] - xs[1]).norm(), (xs[0] - xs[2]).norm());
    if (spread < tol && std::abs(fs[0] - fs[2]) < 1e-12 * (1.0 + std::abs(fs[0])))
      break;
    Eigen::Vector2d centroid = 0.5 * (xs[0] + xs[1]);
    Eigen::Vector2d xr = centroid + (centroid - xs[2]);
    double fr = f(xr);
    if (fr > fs[0]) {
      Eigen::Vector2d xe = centroid + 2.0 * (centroid - xs[2]);
      double fe = f(xe);
      if (fe > fr) {
        xs[2] = xe;
        fs[2] = fe;
      } else {
        xs[2] = xr;
        fs[2] = fr;
      }
    } else if (fr > fs[1]) {
      xs[2] = xr;
      fs[2] = fr;
    } else {
      Eigen::Vector2d xc = centroid + 0.5 * (xs[2] - centroid);
      double fc = f(xc);
      if (fc > fs[2]) {
        xs[2] = xc;
        fs[2] = fc;
      } else {
        xs[1] = xs[0] + 0.5 * (xs[1] - xs[0]);
        xs[2] = xs[0] + 0.5 * (xs[2] - xs[0]);
        fs[1] = f(xs[1]);
        fs[2] = f(xs[2]);
      }
    }
  }
  order();
  NmResult r;
  r.x = xs[0];
  r.f = fs[0];
  r.spread = std::max((xs[0] - xs[1]).norm(), (xs[0] - xs[2]).norm());
  return r;
}

void check_rank(const Eigen::MatrixXd& X, const std::vector<std::string>& labels) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-8);
  if (qr.rank() < X.cols()) {
    std::string bad;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < X.cols(); ++i) {
      if (!bad.empty()) bad += ", ";
      Eigen::Index col = perm(i);
      bad += (col < static_cast<Eigen::Index>(labels.size()))
                 ? labels[static_cast<std::size_t>(col)]
                 : ("col" + std::to_string(col));
    }
    throw std::runtime_error("rank-deficient fixed-effects design; collinear: " + bad);
  }
}

}  // namespace

RemlResult fit_reml(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                    const std::vector<int>& group_outer,
                    const std::vector<int>& group_inner,
                    const std::vector<std::string>& labels) {
  check_rank(X, labels);
  RemlEngine engine(y, X, group_outer, group_inner);
  const bool two = engine.two_levels();
  const bool any = engine.n_inner_groups() > 0;

  double best_rho_in = 0.0, best_rho_out = 0.0;
  double best_f = engine.profiled(0.0, 0.0);
  bool converged = true;

  if (any && !two) {
    double lr = golden_max(
        [&](double l) { return engine.profiled(std::exp(clamp_log_rho(l)), 0.0); },
        kLogRhoFloor, kLogRhoCeil);
    double rho = std::exp(clamp_log_rho(lr));
    double f = engine.profiled(rho, 0.0);
    if (f > best_f && lr > kLogRhoFloor + 0.5) {
      best_f = f;
      best_rho_in = rho;
    }
  } else if (two) {
    auto obj = [&](const Eigen::Vector2d& x) {
      return engine.profiled(std::exp(clamp_log_rho(x(0))),
                             std::exp(clamp_log_rho(x(1))));
    };
    NmResult best_nm;
    for (Eigen::Vector2d start :
         {Eigen::Vector2d(0.0, -1.0), Eigen::Vector2d(-2.0, -3.0)}) {
      NmResult r = nelder_mead2(obj, start, 1.0, 400, 1e-9);
      if (r.f > best_nm.f) best_nm = r;
    }
    if (best_nm.f > best_f) {
      best_f = best_nm.f;
      best_rho_in = std::exp(clamp_log_rho(best_nm.x(0)));
      best_rho_out = std::exp(clamp_log_rho(best_nm.x(1)));
      if (best_nm.x(0) < kLogRhoFloor + 0.5) best_rho_in = 0.0;
      if (best_nm.x(1) < kLogRhoFloor + 0.5) best_rho_out = 0.0;
      converged = true;  // refined by the gradient check below
    }
    // Boundary profiles guard against a simplex stuck in the interior when
    // the optimum sits on an axis.
    {
      double lr = golden_max(
          [&](double l) { return engine.profiled(std::exp(clamp_log_rho(l)), 0.0); },
          kLogRhoFloor, kLogRhoCeil);
      double rho = std::exp(clamp_log_rho(lr));
      double f = engine.profiled(rho, 0.0);
      if (f > best_f) {
        best_f = f;
        best_rho_in = lr > kLogRhoFloor + 0.5 ? rho : 0.0;
        best_rho_out = 0.0;
      }
    }
    {
      double lr = golden_max(
          [&](double l) { return engine.profiled(0.0, std::exp(clamp_log_rho(l))); },
          kLogRhoFloor, kLogRhoCeil);
      double rho = std::exp(clamp_log_rho(lr));
      double f = engine.profiled(0.0, rho);
      if (f > best_f) {
        best_f = f;
        best_rho_in = 0.0;
        best_rho_out = lr > kLogRhoFloor + 0.5 ? rho : 0.0;
      }
    }
  }

  auto eval = engine.evaluate(best_rho_in, best_rho_out);
  RemlResult r;
  r.beta = eval.beta;
  if (eval.sigma2 == 0.0 && eval.loglik == std::numeric_limits<double>::max()) {
    // exact fit (e.g. constant response): all variance components zero
    r.beta_cov = Eigen::MatrixXd::Zero(X.cols(), X.cols());
    r.vc_resid = r.vc_inner = r.vc_outer = 0.0;
    r.loglik = 0.0;
    r.converged = true;
    return r;
  }
  r.beta_cov = eval.sigma2 * eval.xtwx.inverse();
  r.vc_resid = eval.sigma2;
  r.vc_inner = best_rho_in * eval.sigma2;
  r.vc_outer = best_rho_out * eval.sigma2;
  r.loglik = eval.loglik;

  // Gradient check on the profiled log-rho scale; a boundary component has a
  // vanishing log-scale derivative and is accepted as converged.
  double grad_norm = 0.0;
  const double h = 1e-5;
  auto safe = [&](double ri, double ro) { return engine.profiled(ri, ro); };
  if (best_rho_in > 0.0) {
    double g = (safe(best_rho_in * std::exp(h), best_rho_out) -
                safe(best_rho_in * std::exp(-h), best_rho_out)) /
               (2.0 * h);
    grad_norm += g * g;
  }
  if (best_rho_out > 0.0) {
    double g = (safe(best_rho_in, best_rho_out * std::exp(h)) -
                safe(best_rho_in, best_rho_out * std::exp(-h))) /
               (2.0 * h);
    grad_norm += g * g;
  }
  r.converged = converged && std::sqrt(grad_norm) < 1e-3;
  return r;
}

double reml_loglik_at(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                      const std::vector<int>& group_outer,
                      const std::vector<int>& group_inner, double vc_outer,
                      double vc_inner, double vc_resid) {
  if (vc_resid <= 0.0) return kNegInf;
  RemlEngine engine(y, X, group_outer, group_inner);
  auto e = engine.evaluate(vc_inner / vc_resid, vc_outer / vc_resid);
  if (!std::isfinite(e.loglik)) return kNegInf;
  const double n = engine.n(), p = engine.p();
  if (e.sigma2 == 0.0 && e.loglik == std::numeric_limits<double>::max())
    return std::numeric_limits<double>::max();
  return -0.5 * ((n - p) * std::log(2.0 * M_PI) + (n - p) * std::log(vc_resid) +
                 e.logdet_w + e.logdet_xtwx + e.rss_w / vc_resid);
}

namespace {

struct GroupVectors {
  std::vector<int> outer;
  std::vector<int> inner;
};

GroupVectors groups_for(const LmmSpec& spec, const LongDataset& data) {
  GroupVectors g;
  if (spec.random_intercepts.empty()) return g;
  auto child_codes = [&] {
    std::vector<int> codes(data.n_rows());
    int code = 0;
    for (std::size_t r = 0; r < data.n_rows(); ++r) {
      if (r > 0 && (data.school[r] != data.school[r - 1] ||
                    data.child[r] != data.child[r - 1]))
        ++code;
      codes[r] = code;
    }
    return codes;
  };
  if (spec.random_intercepts.size() == 1) {
    const auto& name = spec.random_intercepts[0];
    if (name == "school")
      g.inner = data.school;
    else if (name == "school:child")
      g.inner = child_codes();
    else
      throw std::invalid_argument("unknown grouping: " + name);
  } else if (spec.random_intercepts.size() == 2) {
    if (spec.random_intercepts[0] != "school" ||
        spec.random_intercepts[1] != "school:child")
      throw std::invalid_argument("expected nested school, school:child grouping");
    g.outer = data.school;
    g.inner = child_codes();
  } else {
    throw std::invalid_argument("at most two nested random intercepts supported");
  }
  return g;
}

GroupVectors groups_for(const LmmSpec& spec, const WideDataset& data) {
  GroupVectors g;
  if (spec.random_intercepts.empty()) return g;
  if (spec.random_intercepts.size() > 1 || spec.random_intercepts[0] != "school")
    throw std::invalid_argument("wide-format fits support only a school intercept");
  g.inner = data.school;
  return g;
}

template <typename D>
LmmFit fit_impl(const LmmSpec& spec, const D& data) {
  std::vector<std::string> labels;
  Eigen::MatrixXd X = build_design_impl(spec.fixed_terms, data, &labels);
  Eigen::VectorXd y = data.dense_column(spec.response);
  GroupVectors g = groups_for(spec, data);
  RemlResult r = fit_reml(y, X, g.outer, g.inner, labels);

  LmmFit fit;
  fit.beta_hat = r.beta;
  fit.se_beta = r.beta_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.term_labels = labels;
  fit.vc1 = r.vc_resid;
  if (spec.random_intercepts.size() == 2) {
    fit.vc2 = r.vc_inner;
    fit.vc3 = r.vc_outer;
  } else {
    fit.vc2 = r.vc_inner;
    fit.vc3 = 0.0;
  }
  fit.reml_loglik = r.loglik;
  fit.converged = r.converged;
  fit.n_obs = static_cast<int>(y.size());
  std::set<int> schools(data.school.begin(), data.school.end());
  fit.n_groups_l3 = static_cast<int>(schools.size());
  if constexpr (std::is_same_v<D, LongDataset>)
    fit.n_groups_l2 = static_cast<int>(data.n_children());
  else
    fit.n_groups_l2 = static_cast<int>(data.n_rows());
  return fit;
}

}  // namespace

LmmFit fit_lmm(const LmmSpec& spec, const LongDataset& data) {
  return fit_impl(spec, data);
}
LmmFit fit_lmm(const LmmSpec& spec, const WideDataset& data) {
  return fit_impl(spec, data);
}

double reml_objective(const LmmSpec& spec, const LongDataset& data, double vc3,
                      double vc2, double vc1) {
  if (vc3 < 0.0 || vc2 < 0.0) throw std::invalid_argument("negative variance");
  Eigen::MatrixXd X = build_fixed_design(spec.fixed_terms, data);
  Eigen::VectorXd y = data.dense_column(spec.response);
  GroupVectors g = groups_for(spec, data);
  return reml_loglik_at(y, X, g.outer, g.inner, vc3, vc2, vc1);
}

double reml_objective(const LmmSpec& spec, const WideDataset& data, double vc3,
                      double vc2, double vc1) {
  if (vc3 < 0.0 || vc2 < 0.0) throw std::invalid_argument("negative variance");
  Eigen::MatrixXd X = build_fixed_design(spec.fixed_terms, data);
  Eigen::VectorXd y = data.dense_column(spec.response);
  GroupVectors g = groups_for(spec, data);
  return reml_loglik_at(y, X, g.outer, g.inner, vc3, vc2, vc1);
}

Eigen::MatrixXd build_fixed_design(const std::vector<FixedTerm>& terms,
                                   const LongDataset& data,
                                   std::vector<std::string>* labels) {
  return build_design_impl(terms, data, labels);
}

Eigen::MatrixXd build_fixed_design(const std::vector<FixedTerm>& terms,
                                   const WideDataset& data,
                                   std::vector<std::string>* labels) {
  return build_design_impl(terms, data, labels);
}

}  // namespace mlmi
