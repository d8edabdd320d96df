#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace mlmi {

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double t_quantile(double p, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("t_quantile: df must be > 0");
  if (df > 1e8) df = 1e8;  // boost overflows for the B=0 limit
  boost::math::students_t_distribution<double> dist(df);
  return boost::math::quantile(dist, p);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double sample_sd(const std::vector<double>& v) {
  return std::sqrt(sample_variance(v));
}

// Type-7 linear interpolation quantile (the common statistical default).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(v.begin(), v.end());
  double h = (static_cast<double>(v.size()) - 1.0) * p;
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double gaussian_loglik(double x, double mean, double var) {
  double d = x - mean;
  return -0.5 * (std::log(2.0 * M_PI * var) + d * d / var);
}

}  // namespace mlmi
