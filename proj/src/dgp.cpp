#include "mlmi/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mlmi/stats.hpp"

namespace mlmi {

std::string to_string(AnalysisModel m) {
  switch (m) {
    case AnalysisModel::model1: return "model1";
    case AnalysisModel::model2: return "model2";
    case AnalysisModel::model3: return "model3";
  }
  return "model1";
}

AnalysisModel analysis_model_from_string(const std::string& s) {
  if (s == "model1") return AnalysisModel::model1;
  if (s == "model2") return AnalysisModel::model2;
  if (s == "model3") return AnalysisModel::model3;
  throw std::invalid_argument("unknown analysis model: " + s);
}

std::string to_string(Mechanism m) {
  return m == Mechanism::mar_cats ? "MAR_CATS" : "MAR_inflated";
}

Mechanism mechanism_from_string(const std::string& s) {
  if (s == "MAR_CATS") return Mechanism::mar_cats;
  if (s == "MAR_inflated") return Mechanism::mar_inflated;
  throw std::invalid_argument("unknown mechanism: " + s);
}

void ParamSet::validate() const {
  if (!(age_min < age_max)) throw std::invalid_argument("age bounds: need a < b");
  if (female_prop < 0.0 || female_prop > 1.0)
    throw std::invalid_argument("female proportion outside [0,1]");
  for (double sd : {sd_psi, sd_phi, sd_u2, sd_u3, sd1, sd2, sd3, sd_eps, sd_v2, sd_v3})
    if (sd < 0.0) throw std::invalid_argument("negative standard deviation");
}

LongDataset generate_complete(const ScenarioConfig& cfg, const ParamSet& p, Rng& rng) {
  p.validate();
  if (cfg.n_schools <= 0 || cfg.school_size <= 0)
    throw std::invalid_argument("cluster counts must be positive");

  const int n = cfg.n_schools * cfg.school_size;
  const std::vector<int> out_waves = {3, 5, 7};

  LongDataset d;
  d.waves = out_waves;

  std::vector<double> age(n), sexv(n), ses(n), napz1(n);
  for (int c = 0; c < n; ++c) age[c] = rng.uniform(p.age_min, p.age_max);

  // Exact-count sex assignment: a random permutation marks the females.
  {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const int n_female = static_cast<int>(std::floor(p.female_prop * n));
    for (int c = 0; c < n; ++c) sexv[c] = 1.0;  // 1 = male
    for (int i = 0; i < n_female; ++i) sexv[order[i]] = 0.0;
  }

  for (int c = 0; c < n; ++c) ses[c] = rng.normal();
  for (int c = 0; c < n; ++c)
    napz1[c] = p.eta0 + p.eta1 * sexv[c] + p.eta2 * age[c] + p.eta3 * ses[c] +
               rng.normal(0.0, p.sd_psi);

  std::vector<double> dep_u3(cfg.n_schools), out_u3(cfg.n_schools),
      sdq_u3(cfg.n_schools);
  for (int s = 0; s < cfg.n_schools; ++s) {
    dep_u3[s] = rng.normal(0.0, p.sd_u3);
    out_u3[s] = rng.normal(0.0, p.sd3);
    sdq_u3[s] = rng.normal(0.0, p.sd_v3);
  }

  const std::size_t rows = static_cast<std::size_t>(n) * out_waves.size();
  auto make_col = [&](const char* name, ColumnRole role, int level, int offset) {
    Column c;
    c.name = name;
    c.role = role;
    c.level = level;
    c.wave_offset = offset;
    c.values.resize(rows);
    return c;
  };
  Column c_napz = make_col("napz", ColumnRole::outcome, 1, 0);
  Column c_dep = make_col("dep", ColumnRole::exposure, 1, -1);
  Column c_sdq = make_col("sdq", ColumnRole::auxiliary, 1, -1);
  Column c_wave = make_col("wave", ColumnRole::time, 1, 0);
  Column c_napz1 = make_col("napz1", ColumnRole::confounder, 2, 0);
  Column c_sex = make_col("sex", ColumnRole::confounder, 2, 0);
  Column c_ses = make_col("ses", ColumnRole::confounder, 2, 0);
  Column c_age = make_col("age", ColumnRole::confounder, 2, 0);

  d.school.resize(rows);
  d.child.resize(rows);
  d.wave.resize(rows);

  std::size_t r = 0;
  for (int c = 0; c < n; ++c) {
    const int school = c / cfg.school_size + 1;
    const int child = c % cfg.school_size + 1;
    const double dep_u2 = rng.normal(0.0, p.sd_u2);
    const double out_u2 = rng.normal(0.0, p.sd2);
    const double sdq_u2 = rng.normal(0.0, p.sd_v2);

    for (int k : out_waves) {
      const int exp_wave = k - 1;  // exposure measured at 2, 4, 6
      const double dep = p.delta0 + p.delta1 * age[c] + p.delta2 * sexv[c] +
                         p.delta3 * napz1[c] + p.delta4 * ses[c] +
                         p.delta5 * exp_wave + dep_u3[school - 1] + dep_u2 +
                         rng.normal(0.0, p.sd_phi);
      double inter = 0.0;
      switch (cfg.analysis_model) {
        case AnalysisModel::model1: inter = dep * k; break;
        case AnalysisModel::model2: inter = dep * ses[c]; break;
        case AnalysisModel::model3: inter = dep * dep; break;
      }
      const double napz = p.beta0 + p.beta1 * dep + p.beta2 * k + p.beta3 * inter +
                          p.beta4 * napz1[c] + p.beta5 * sexv[c] + p.beta6 * ses[c] +
                          p.beta7 * age[c] + out_u3[school - 1] + out_u2 +
                          rng.normal(0.0, p.sd1);
      const double sdq = p.gamma0 + p.gamma1 * dep + p.gamma2 * exp_wave +
                         sdq_u3[school - 1] + sdq_u2 + rng.normal(0.0, p.sd_eps);

      d.school[r] = school;
      d.child[r] = child;
      d.wave[r] = k;
      c_napz.values[r] = napz;
      c_dep.values[r] = dep;
      c_sdq.values[r] = sdq;
      c_wave.values[r] = static_cast<double>(k);
      c_napz1.values[r] = napz1[c];
      c_sex.values[r] = sexv[c];
      c_ses.values[r] = ses[c];
      c_age.values[r] = age[c];
      ++r;
    }
  }

  d.columns = {std::move(c_napz), std::move(c_dep), std::move(c_sdq),
               std::move(c_wave), std::move(c_napz1), std::move(c_sex),
               std::move(c_ses), std::move(c_age)};
  d.validate();
  return d;
}

namespace {

constexpr double kZeta0Cap = 1e6;

// Mean missing probability at intercept z0, over the rows of one wave.
double mean_missing(const std::vector<double>& score, double z0) {
  double s = 0.0;
  for (double x : score) s += 1.0 - expit(z0 + x);
  return s / static_cast<double>(score.size());
}

// SDQ enters the response model as a z-score.  The raw scale has sd ~ 6.6,
// which with zeta2 = 2 would turn the logistic selection into a hard
// threshold; the slopes are per standard deviation of the predictor.
std::vector<double> standardized_sdq(const LongDataset& data) {
  const Column& sdq = data.column("sdq");
  std::vector<double> z(data.n_rows());
  double s = 0.0;
  for (std::size_t r = 0; r < z.size(); ++r) s += *sdq.values[r];
  const double mean = s / static_cast<double>(z.size());
  double ss = 0.0;
  for (std::size_t r = 0; r < z.size(); ++r) {
    z[r] = *sdq.values[r] - mean;
    ss += z[r] * z[r];
  }
  const double sd = std::sqrt(ss / static_cast<double>(z.size() - 1));
  for (double& v : z) v /= sd;
  return z;
}

}  // namespace

std::map<int, double> calibrate_missingness_intercepts(
    const LongDataset& data, const MissingnessSpec& spec,
    const std::map<int, double>& targets) {
  const Column& napz = data.column("napz");
  const std::vector<double> sdq_z = standardized_sdq(data);

  std::map<int, double> out;
  for (const auto& [wave, target] : targets) {
    if (target < 0.0 || target >= 1.0)
      throw std::invalid_argument("missingness target outside [0,1)");
    if (target == 0.0) {
      out[wave] = kZeta0Cap;
      continue;
    }
    std::vector<double> score;
    for (std::size_t r = 0; r < data.n_rows(); ++r) {
      if (data.wave[r] != wave + 1) continue;  // dep at wave k sits on row k+1
      score.push_back(spec.zeta1 * *napz.values[r] + spec.zeta2 * sdq_z[r]);
    }
    if (score.empty()) throw std::invalid_argument("no rows for wave");

    // Expand the bracket until it straddles the target, then bisect.
    double lo = -20.0, hi = 20.0;
    while (mean_missing(score, lo) < target && lo > -1e7) lo *= 2.0;
    while (mean_missing(score, hi) > target && hi < 1e7) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      double m = mean_missing(score, mid);
      if (std::abs(m - target) <= 1e-6 && hi - lo < 1e-6) {
        lo = hi = mid;
        break;
      }
      (m > target ? lo : hi) = mid;
    }
    out[wave] = 0.5 * (lo + hi);
  }
  return out;
}

LongDataset impose_missingness(const LongDataset& data, const MissingnessSpec& spec,
                               const ScenarioConfig& cfg, Rng& rng) {
  LongDataset d = data;
  Column& dep = d.column("dep");
  const Column& napz = d.column("napz");
  const std::vector<double> sdq_z = standardized_sdq(d);
  Column& ses = d.column("ses");

  Column r_dep;
  r_dep.name = "r_dep";
  r_dep.role = ColumnRole::id;
  r_dep.level = 1;
  r_dep.wave_offset = -1;
  r_dep.values.assign(d.n_rows(), Cell{1.0});
  Column r_ses;
  r_ses.name = "r_ses";
  r_ses.role = ColumnRole::id;
  r_ses.level = 2;
  r_ses.values.assign(d.n_rows(), Cell{1.0});

  for (std::size_t r = 0; r < d.n_rows(); ++r) {
    const int exp_wave = d.wave[r] - 1;
    auto it = spec.zeta0.find(exp_wave);
    if (it == spec.zeta0.end())
      throw std::runtime_error("missingness intercept not calibrated for wave " +
                               std::to_string(exp_wave));
    const double p_obs =
        expit(it->second + spec.zeta1 * *napz.values[r] + spec.zeta2 * sdq_z[r]);
    const double u = rng.uniform();  // one draw per cell regardless of outcome
    if (u >= p_obs) {
      dep.values[r] = std::nullopt;
      r_dep.values[r] = 0.0;
    }
  }

  const std::size_t n_children = d.n_children();
  const std::size_t w = d.waves.size();
  std::size_t n_ses_missing = static_cast<std::size_t>(
      std::floor(cfg.ses_mcar_rate * static_cast<double>(n_children)));
  std::vector<std::size_t> order(n_children);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (std::size_t i = 0; i < n_ses_missing; ++i) {
    for (std::size_t k = 0; k < w; ++k) {
      ses.values[order[i] * w + k] = std::nullopt;
      r_ses.values[order[i] * w + k] = 0.0;
    }
  }

  d.columns.push_back(std::move(r_dep));
  d.columns.push_back(std::move(r_ses));
  return d;
}

}  // namespace mlmi
