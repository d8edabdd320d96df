#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace mlmi {

// splitmix64; used both as a stream mixer and to expand seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b));
}

inline std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG stream.  All samplers are implemented here rather than
// through std::*_distribution so that a given (seed, call sequence) yields
// the same draws on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix64(seed)) {}

  // Derive an independent stream, leaving this one untouched.
  Rng fork(std::uint64_t salt) const { return Rng(mix64(state_, salt)); }
  Rng fork(std::string_view label) const { return fork(hash_label(label)); }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  double uniform() {  // (0,1)
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u = uniform();
    double v = uniform();
    double r = std::sqrt(-2.0 * std::log(u));
    double theta = 2.0 * M_PI * v;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Marsaglia-Tsang; valid for any shape > 0.
  double gamma(double shape, double scale) {
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
        return d * v * scale;
      }
    }
  }

  double chi_squared(double df) { return gamma(0.5 * df, 2.0); }

  // sigma2 ~ InvGamma(shape, rate)
  double inv_gamma(double shape, double rate) {
    return rate / gamma(shape, 1.0);
  }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = normal();
    return z;
  }

  Eigen::MatrixXd normal_matrix(int rows, int cols) {
    Eigen::MatrixXd z(rows, cols);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) z(i, j) = normal();
    return z;
  }

  // Bartlett decomposition.  Returns W ~ Wishart(df, scale).
  Eigen::MatrixXd wishart(double df, const Eigen::MatrixXd& scale) {
    int p = static_cast<int>(scale.rows());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < p; ++i) {
      a(i, i) = std::sqrt(chi_squared(df - i));
      for (int j = 0; j < i; ++j) a(i, j) = normal();
    }
    Eigen::MatrixXd l = scale.llt().matrixL();
    Eigen::MatrixXd la = l * a;
    return la * la.transpose();
  }

  // S ~ InvWishart(df, scale): S^-1 ~ Wishart(df, scale^-1).
  Eigen::MatrixXd inv_wishart(double df, const Eigen::MatrixXd& scale) {
    Eigen::MatrixXd w = wishart(df, scale.inverse());
    return w.inverse();
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mlmi
