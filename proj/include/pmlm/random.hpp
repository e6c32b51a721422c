#pragma once

#include "numeric.hpp"

#include <cstdint>
#include <random>

namespace pmlm {

/**
 * splitmix64 finaliser. Used for deriving sub-seeds and as a hash.
 */
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/**
 * The seed splitting rule. Task i of a job with seed s gets the seed
 * splitmix64(s ^ splitmix64(i + 1)).
 */
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index)
  noexcept {
  return splitmix64(seed ^ splitmix64(index + 1));
}

/**
 * Seedable generator used everywhere. The engine is std::mt19937_64 whose
 * output sequence is fixed by the C++ standard; all transformations to other
 * distributions are implemented here so the streams are identical across
 * platforms and standard libraries.
 */
class rng {
  std::mt19937_64 engine;

public:
  explicit rng(std::uint64_t seed) : engine(seed) { }

  std::uint64_t next_u64() { return engine(); }

  /// uniform on the open interval (0, 1)
  double uniform() {
    return (static_cast<double>(engine() >> 11) + .5) * 0x1p-53;
  }

  double normal() { return qnorm(uniform()); }

  vec normal(Eigen::Index n) {
    vec out(n);
    for(auto &x : out) x = normal();
    return out;
  }

  /// integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    std::uint64_t const limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do x = engine(); while(x >= limit);
    return x % n;
  }

  /// gamma variate with given shape and unit scale (Marsaglia and Tsang)
  double gamma(double shape) {
    if(shape < 1){
      double const u = uniform();
      return gamma(shape + 1) * std::pow(u, 1 / shape);
    }
    double const d = shape - 1. / 3., c = 1 / std::sqrt(9 * d);
    for(;;){
      double x, v;
      do {
        x = normal();
        v = 1 + c * x;
      } while(v <= 0);
      v = v * v * v;
      double const u = uniform();
      if(u < 1 - .0331 * x * x * x * x) return d * v;
      if(std::log(u) < .5 * x * x + d * (1 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    double const x = gamma(a), y = gamma(b);
    return x / (x + y);
  }

  double chi_square(double df) { return 2 * gamma(df / 2); }

  int binomial(int m, double p) {
    int out{};
    for(int i = 0; i < m; ++i)
      out += uniform() < p;
    return out;
  }

  /**
   * Wishart draw W(scale, df) with the Bartlett decomposition.
   */
  mat wishart(mat const &scale, double df) {
    Eigen::Index const k = scale.rows();
    mat const l = cholesky(scale);
    mat a = mat::Zero(k, k);
    for(Eigen::Index i = 0; i < k; ++i){
      a(i, i) = std::sqrt(chi_square(df - static_cast<double>(i)));
      for(Eigen::Index j = 0; j < i; ++j)
        a(i, j) = normal();
    }
    mat const la = l * a;
    mat out = la * la.transpose();
    symmetrize(out);
    return out;
  }

  /**
   * Haar distributed orthogonal matrix from the QR decomposition of a
   * Gaussian matrix computed with Householder reflections, with the sign
   * correction that makes the distribution exactly uniform.
   */
  mat random_orthogonal(Eigen::Index k) {
    mat g(k, k);
    for(Eigen::Index j = 0; j < k; ++j)
      for(Eigen::Index i = 0; i < k; ++i)
        g(i, j) = normal();
    Eigen::HouseholderQR<mat> qr(g);
    mat q = qr.householderQ();
    mat const &r = qr.matrixQR();
    for(Eigen::Index j = 0; j < k; ++j)
      if(r(j, j) < 0)
        q.col(j) *= -1;
    return q;
  }
};

} // namespace pmlm
