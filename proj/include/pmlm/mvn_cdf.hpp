#pragma once

#include "numeric.hpp"
#include "random.hpp"
#include "sequences.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <chrono>
#include <cstdint>
#include <numeric>
#include <vector>

namespace pmlm {

struct bad_dimension : error {
  using error::error;
};

/// integration region with -inf / inf entries allowed
struct hyper_rect {
  vec lower, upper;

  static hyper_rect lower_orthant(vec const &upper){
    return {vec::Constant(upper.size(), -inf), upper};
  }
};

enum class approx_status { converged, max_samples, exact };

inline char const * to_string(approx_status s){
  switch(s){
  case approx_status::converged: return "converged";
  case approx_status::max_samples: return "max_samples";
  case approx_status::exact: return "exact";
  }
  return "unknown";
}

/**
 * Result of a stochastic approximation. The approximated quantity is
 * estimate * exp(log_scale) with standard error std_error * exp(log_scale).
 */
struct approx_result {
  double estimate{};
  double std_error{};
  long long n_evals{};
  double elapsed{};
  approx_status status{approx_status::converged};
  double log_scale{};

  double log_estimate() const { return std::log(estimate) + log_scale; }
  /// delta method standard error of the log estimate
  double log_std_error() const { return std_error / std::abs(estimate); }
};

struct cdf_options {
  double abs_tol{0};
  double rel_tol{1e-4};
  long long max_samples{1000000};
  int n_replicates{8};
  std::uint64_t seed{1};
  bool reorder{true};
  /// stop when error_multiplier * SE <= max(abs_tol, rel_tol * estimate)
  double error_multiplier{3.5};
};

struct cdf_grad_result {
  approx_result prob;
  vec d_lower, d_upper, d_mu;
  /// derivative wrt a symmetric perturbation: dP = sum_ij d_sigma_ij dS_ij
  mat d_sigma;
};

namespace detail {

using clock = std::chrono::steady_clock;

inline double seconds_since(clock::time_point start){
  return std::chrono::duration<double>(clock::now() - start).count();
}

/// mean of N(0, 1) truncated to (a, b)
inline double truncated_mean(double a, double b){
  double const p = pnorm(b) - pnorm(a);
  if(p > 1e-12){
    double const da = std::isfinite(a) ? dnorm(a) : 0,
                 db = std::isfinite(b) ? dnorm(b) : 0;
    return (da - db) / p;
  }
  // far in a tail
  if(a > 0) return std::isfinite(a) ? a + 1 / std::max(a, 1.) : 0;
  if(b < 0) return std::isfinite(b) ? b - 1 / std::max(-b, 1.) : 0;
  return 0;
}

/**
 * Problem after centering, reordering, and factorization. lower and upper
 * are centered bounds in the new order and chol the Cholesky factor of the
 * permuted covariance matrix.
 */
struct sov_problem {
  std::vector<int> perm;
  vec lower, upper;
  mat chol;
};

/**
 * Greedy reordering interleaved with the Cholesky decomposition. At each step
 * the remaining variable with the smallest conditional interval probability
 * is moved first; the conditioned value is the truncated mean.
 */
inline sov_problem reorder_and_factor(vec const &lower, vec const &upper,
                                      mat const &sigma, bool reorder){
  Eigen::Index const k = sigma.rows();
  sov_problem out{std::vector<int>(k), lower, upper, mat::Zero(k, k)};
  std::iota(out.perm.begin(), out.perm.end(), 0);
  mat c = sigma;
  mat &l = out.chol;
  vec y = vec::Zero(k);

  double const max_diag = sigma.diagonal().maxCoeff();
  double const eps_pivot =
    static_cast<double>(k) * std::numeric_limits<double>::epsilon() * max_diag;

  for(Eigen::Index i = 0; i < k; ++i){
    Eigen::Index best = i;
    if(reorder && i < k - 1){
      double best_prob = inf;
      for(Eigen::Index j = i; j < k; ++j){
        double s{}, v = c(j, j);
        for(Eigen::Index m = 0; m < i; ++m){
          s += l(j, m) * y[m];
          v -= l(j, m) * l(j, m);
        }
        if(!(v > eps_pivot))
          throw not_positive_definite();
        double const sd = std::sqrt(v);
        double const p = pnorm((out.upper[j] - s) / sd) -
          pnorm((out.lower[j] - s) / sd);
        if(p < best_prob){
          best_prob = p;
          best = j;
        }
      }
    }

    if(best != i){
      std::swap(out.perm[i], out.perm[best]);
      std::swap(out.lower[i], out.lower[best]);
      std::swap(out.upper[i], out.upper[best]);
      c.row(i).swap(c.row(best));
      c.col(i).swap(c.col(best));
      l.row(i).swap(l.row(best));
    }

    double v = c(i, i);
    for(Eigen::Index m = 0; m < i; ++m)
      v -= l(i, m) * l(i, m);
    if(!(v > eps_pivot))
      throw not_positive_definite();
    double const lii = std::sqrt(v);
    l(i, i) = lii;
    for(Eigen::Index r = i + 1; r < k; ++r){
      double x = c(r, i);
      for(Eigen::Index m = 0; m < i; ++m)
        x -= l(r, m) * l(i, m);
      l(r, i) = x / lii;
    }

    double s{};
    for(Eigen::Index m = 0; m < i; ++m)
      s += l(i, m) * y[m];
    y[i] = truncated_mean((out.lower[i] - s) / lii, (out.upper[i] - s) / lii);
  }

  return out;
}

/**
 * Removes variables which are deterministic or perfectly correlated with
 * another variable by restricting the bounds of the variable they are
 * proportional to. Returns false if the region has probability zero.
 */
inline bool reduce_singular(vec &lower, vec &upper, mat &sigma){
  Eigen::Index const k = sigma.rows();
  double const max_diag = sigma.diagonal().maxCoeff();
  std::vector<bool> keep(k, true);

  for(Eigen::Index j = 0; j < k; ++j){
    if(sigma(j, j) <= 1e-12 * max_diag){
      if(!(lower[j] < 0 && 0 <= upper[j]))
        return false;
      keep[j] = false;
    }
  }

  for(Eigen::Index j = 0; j < k; ++j){
    if(!keep[j]) continue;
    for(Eigen::Index i = 0; i < j; ++i){
      if(!keep[i]) continue;
      double const cij = sigma(i, j);
      if(cij * cij < (1 - 1e-10) * sigma(i, i) * sigma(j, j))
        continue;
      // X_j = r X_i
      double const r = cij / sigma(i, i);
      double lo = lower[j] / r, hi = upper[j] / r;
      if(r < 0) std::swap(lo, hi);
      lower[i] = std::max(lower[i], lo);
      upper[i] = std::min(upper[i], hi);
      if(!(lower[i] < upper[i]))
        return false;
      keep[j] = false;
      break;
    }
  }

  std::vector<Eigen::Index> idx;
  for(Eigen::Index j = 0; j < k; ++j)
    if(keep[j]) idx.push_back(j);
  Eigen::Index const n = idx.size();
  vec lo(n), up(n);
  mat s(n, n);
  for(Eigen::Index a = 0; a < n; ++a){
    lo[a] = lower[idx[a]];
    up[a] = upper[idx[a]];
    for(Eigen::Index b = 0; b < n; ++b)
      s(a, b) = sigma(idx[a], idx[b]);
  }
  lower = lo;
  upper = up;
  sigma = s;
  return true;
}

/**
 * Evaluates one sample of the separation-of-variables integrand and,
 * optionally, accumulates its gradient wrt the centered bounds and the
 * Cholesky factor.
 */
class sov_evaluator {
  sov_problem const &prob;
  Eigen::Index k;
  // values for the first variable which does not depend on the point
  double at0, bt0, d0, e0;
  // work memory
  std::vector<double> at, bt, dd, ee, y, ww, ybar;

public:
  vec a_bar, b_bar;
  mat l_bar;

  explicit sov_evaluator(sov_problem const &prob)
    : prob{prob}, k{prob.chol.rows()}, at(k), bt(k), dd(k), ee(k), y(k),
      ww(k), ybar(k), a_bar(vec::Zero(k)), b_bar(vec::Zero(k)),
      l_bar(mat::Zero(k, k)) {
    double const l00 = prob.chol(0, 0);
    at0 = prob.lower[0] / l00;
    bt0 = prob.upper[0] / l00;
    d0 = pnorm(at0);
    e0 = pnorm(bt0);
  }

  void reset_gradient(){
    a_bar.setZero();
    b_bar.setZero();
    l_bar.setZero();
  }

  /// w has k - 1 entries in [0, 1]
  template<bool with_grad>
  double operator()(double const *w){
    mat const &l = prob.chol;
    at[0] = at0;
    bt[0] = bt0;
    dd[0] = d0;
    ee[0] = e0;
    double f = e0 - d0;
    if(!(f > 0)) return 0;

    constexpr double q_min = 1e-300, q_max = 1 - 0x1p-53;
    for(Eigen::Index i = 1; i < k; ++i){
      double const wi = w[i - 1];
      ww[i - 1] = wi;
      double q = dd[i - 1] + wi * (ee[i - 1] - dd[i - 1]);
      q = std::min(std::max(q, q_min), q_max);
      y[i - 1] = qnorm(q);

      double s{};
      for(Eigen::Index m = 0; m < i; ++m)
        s += l(i, m) * y[m];
      double const lii = l(i, i);
      at[i] = (prob.lower[i] - s) / lii;
      bt[i] = (prob.upper[i] - s) / lii;
      dd[i] = prob.lower[i] == -inf ? 0 : pnorm(at[i]);
      ee[i] = prob.upper[i] == inf ? 1 : pnorm(bt[i]);
      double const delta = ee[i] - dd[i];
      if(!(delta > 0)) return 0;
      f *= delta;
    }

    if constexpr (with_grad){
      if(!(f > 0)) return f;
      std::fill(ybar.begin(), ybar.end(), 0.);
      for(Eigen::Index i = k - 1; i >= 0; --i){
        double dbar{}, ebar{};
        if(i < k - 1){
          double const qbar = ybar[i] / dnorm(y[i]);
          dbar = qbar * (1 - ww[i]);
          ebar = qbar * ww[i];
        }
        double const seed = f / (ee[i] - dd[i]);
        ebar += seed;
        dbar -= seed;

        double const lii = l(i, i);
        bool const lo_fin = prob.lower[i] != -inf,
                   up_fin = prob.upper[i] != inf;
        double const atbar = lo_fin ? dbar * dnorm(at[i]) : 0,
                     btbar = up_fin ? ebar * dnorm(bt[i]) : 0;
        a_bar[i] += atbar / lii;
        b_bar[i] += btbar / lii;
        double const sbar = -(atbar + btbar) / lii;
        l_bar(i, i) -= ((lo_fin ? atbar * at[i] : 0) +
          (up_fin ? btbar * bt[i] : 0)) / lii;
        for(Eigen::Index m = 0; m < i; ++m){
          l_bar(i, m) += sbar * y[m];
          ybar[m] += sbar * l(i, m);
        }
      }
    }

    return f;
  }
};

/**
 * P(X > h, Y > k) for a standard bivariate normal with correlation r using
 * the Drezner and Wesolowsky approach as refined by Genz. Accurate to about
 * 1e-15.
 */
inline double bvn_upper(double h, double k, double r){
  if(h == inf || k == inf) return 0;
  if(h == -inf) return k == -inf ? 1 : pnorm(-k);
  if(k == -inf) return pnorm(-h);
  if(r == 0) return pnorm(-h) * pnorm(-k);

  using boost::math::quadrature::gauss;
  double const ar = std::abs(r);
  auto run = [&](auto const &xs, auto const &ws){
    constexpr double two_pi = 2 * std::numbers::pi;
    double hk = h * k, kk = k, bvn{};
    if(ar < .925){
      double const hs = (h * h + kk * kk) / 2, asr = std::asin(r) / 2;
      for(std::size_t i = 0; i < xs.size(); ++i)
        for(double t : {1 - xs[i], 1 + xs[i]}){
          double const sn = std::sin(asr * t);
          bvn += ws[i] * std::exp((sn * hk - hs) / (1 - sn * sn));
        }
      return bvn * asr / two_pi + pnorm(-h) * pnorm(-kk);
    }

    if(r < 0){
      kk = -kk;
      hk = -hk;
    }
    if(ar < 1){
      double const as = 1 - r * r, bs = (h - kk) * (h - kk),
                   c = (4 - hk) / 8, d = (12 - hk) / 80;
      double a = std::sqrt(as), asr = -(bs / as + hk) / 2;
      if(asr > -100)
        bvn = a * std::exp(asr) *
          (1 - c * (bs - as) * (1 - d * bs) / 3 + c * d * as * as);
      if(hk > -100){
        double const b = std::sqrt(bs),
                     sp = std::sqrt(two_pi) * pnorm(-b / a);
        bvn -= std::exp(-hk / 2) * sp * b * (1 - c * bs * (1 - d * bs) / 3);
      }
      a /= 2;
      double sum{};
      for(std::size_t i = 0; i < xs.size(); ++i)
        for(double t : {1 - xs[i], 1 + xs[i]}){
          double const x2 = (a * t) * (a * t),
                       e = -(bs / x2 + hk) / 2;
          if(!(e > -100)) continue;
          double const sp = 1 + c * x2 * (1 + 5 * d * x2),
                       rs = std::sqrt(1 - x2),
                       ep = std::exp(-(hk / 2) * x2 / ((1 + rs) * (1 + rs))) / rs;
          sum += ws[i] * std::exp(e) * (sp - ep);
        }
      bvn = (a * sum - bvn) / two_pi;
    }
    if(r > 0)
      return bvn + pnorm(-std::max(h, kk));
    if(h >= kk)
      return -bvn;
    double const l = h < 0 ? pnorm(kk) - pnorm(h) : pnorm(-h) - pnorm(-kk);
    return l - bvn;
  };

  double out;
  if(ar < .3)
    out = run(gauss<double, 6>::abscissa(), gauss<double, 6>::weights());
  else if(ar < .75)
    out = run(gauss<double, 12>::abscissa(), gauss<double, 12>::weights());
  else
    out = run(gauss<double, 20>::abscissa(), gauss<double, 20>::weights());
  return std::clamp(out, 0., 1.);
}

/// P(X <= h, Y <= k) for a standard bivariate normal with correlation r
inline double bvn_cdf(double h, double k, double r){
  return bvn_upper(-h, -k, r);
}

/// maps the gradient wrt a Cholesky factor to a gradient wrt the matrix
inline mat chol_backprop(mat const &l, mat const &l_bar){
  mat const a = l.transpose() * l_bar.triangularView<Eigen::Lower>().toDenseMatrix();
  mat b = a.triangularView<Eigen::Lower>();
  b += a.triangularView<Eigen::StrictlyLower>().transpose().toDenseMatrix();
  auto const lt = l.triangularView<Eigen::Lower>();
  // G = 1/2 L^-T B L^-1
  mat tmp = lt.transpose().solve(b);
  mat g = lt.transpose().solve(tmp.transpose()).transpose();
  g *= .5;
  symmetrize(g);
  return g;
}

struct rect_output {
  approx_result prob;
  vec a_bar, b_bar; // gradients wrt centered bounds in original order
  mat sigma_bar;
};

template<bool with_grad>
rect_output mvn_rect_impl(vec const &lower, vec const &upper, vec const &mu,
                          mat const &sigma, cdf_options const &opts){
  auto const start = clock::now();
  Eigen::Index const k0 = mu.size();
  if(lower.size() != k0 || upper.size() != k0 || sigma.rows() != k0 ||
       sigma.cols() != k0)
    throw bad_dimension("mvn_cdf: dimension mismatch");
  if(k0 < 1 || k0 > 1000)
    throw bad_dimension("mvn_cdf: dimension must be between 1 and 1000");
  if(opts.n_replicates < 2)
    throw error("mvn_cdf: n_replicates must be at least 2");
  if(!(opts.abs_tol > 0 || opts.rel_tol > 0))
    throw error("mvn_cdf: one of the tolerances must be positive");

  rect_output out;
  out.a_bar = vec::Zero(k0);
  out.b_bar = vec::Zero(k0);
  out.sigma_bar = mat::Zero(k0, k0);

  for(Eigen::Index i = 0; i < k0; ++i)
    if(!(lower[i] < upper[i])){
      out.prob.status = approx_status::exact;
      out.prob.elapsed = seconds_since(start);
      return out;
    }

  vec lo = lower - mu, up = upper - mu;
  mat sig = sigma;

  sov_problem prob;
  try {
    prob = reorder_and_factor(lo, up, sig, opts.reorder);
  } catch(not_positive_definite const&) {
    if constexpr (with_grad)
      throw;
    if(!reduce_singular(lo, up, sig)){
      out.prob.status = approx_status::exact;
      out.prob.elapsed = seconds_since(start);
      return out;
    }
    if(sig.rows() == 0){
      out.prob.estimate = 1;
      out.prob.status = approx_status::exact;
      out.prob.elapsed = seconds_since(start);
      return out;
    }
    prob = reorder_and_factor(lo, up, sig, opts.reorder);
  }

  Eigen::Index const k = prob.chol.rows();
  auto finalize_grad = [&](vec const &a_bar, vec const &b_bar,
                           mat const &l_bar){
    mat const g = chol_backprop(prob.chol, l_bar);
    for(Eigen::Index i = 0; i < k; ++i){
      out.a_bar[prob.perm[i]] = a_bar[i];
      out.b_bar[prob.perm[i]] = b_bar[i];
      for(Eigen::Index j = 0; j < k; ++j)
        out.sigma_bar(prob.perm[i], prob.perm[j]) = g(i, j);
    }
  };

  if(k == 1){
    double const s = prob.chol(0, 0),
                 at = prob.lower[0] / s, bt = prob.upper[0] / s;
    out.prob.estimate = std::max(pnorm(bt) - pnorm(at), 0.);
    out.prob.status = approx_status::exact;
    out.prob.n_evals = 1;
    if constexpr (with_grad){
      double const da = std::isfinite(at) ? dnorm(at) : 0,
                   db = std::isfinite(bt) ? dnorm(bt) : 0;
      vec a_bar(1), b_bar(1);
      a_bar[0] = -da / s;
      b_bar[0] = db / s;
      mat l_bar(1, 1);
      l_bar(0, 0) = -((std::isfinite(bt) ? db * bt : 0) -
        (std::isfinite(at) ? da * at : 0)) / s;
      finalize_grad(a_bar, b_bar, l_bar);
    }
    out.prob.elapsed = seconds_since(start);
    return out;
  }

  if(k == 2){
    // standardized rectangle probability by inclusion-exclusion
    double const s1 = prob.chol(0, 0),
                 s2 = std::hypot(prob.chol(1, 0), prob.chol(1, 1)),
                 r = prob.chol(1, 0) / s2;
    double const x[2][2] = {{prob.lower[0] / s1, prob.upper[0] / s1},
                            {prob.lower[1] / s2, prob.upper[1] / s2}};
    auto corner = [&](int i, int j){
      double const h = x[0][i], kk = x[1][j];
      if(h == -inf || kk == -inf) return 0.;
      if(h == inf) return pnorm(kk);
      if(kk == inf) return pnorm(h);
      return bvn_cdf(h, kk, r);
    };
    out.prob.estimate = std::max(
      corner(1, 1) - corner(0, 1) - corner(1, 0) + corner(0, 0), 0.);
    out.prob.status = approx_status::exact;
    out.prob.n_evals = 1;

    if constexpr (with_grad){
      double const sr = std::sqrt(1 - r * r);
      // derivative of the CDF wrt its first argument
      auto d_first = [&](double h, double kk){
        if(!std::isfinite(h) || kk == -inf) return 0.;
        if(kk == inf) return dnorm(h);
        return dnorm(h) * pnorm((kk - r * h) / sr);
      };
      auto dens = [&](double h, double kk){
        if(!std::isfinite(h) || !std::isfinite(kk)) return 0.;
        return std::exp(-(h * h - 2 * r * h * kk + kk * kk) / (2 * sr * sr)) /
          (2 * std::numbers::pi * sr);
      };
      double g[2][2]{}, g_r{};
      for(int i = 0; i < 2; ++i)
        for(int j = 0; j < 2; ++j){
          double const sgn = i == j ? 1 : -1;
          g[0][i] += sgn * d_first(x[0][i], x[1][j]);
          g[1][j] += sgn * d_first(x[1][j], x[0][i]);
          g_r += sgn * dens(x[0][i], x[1][j]);
        }

      double const s[2] = {s1, s2};
      double d_var[2];
      for(int v = 0; v < 2; ++v){
        double acc = -r * g_r;
        for(int e = 0; e < 2; ++e)
          if(std::isfinite(x[v][e])) acc -= g[v][e] * x[v][e];
        d_var[v] = acc / (2 * s[v] * s[v]);
      }
      for(int v = 0; v < 2; ++v){
        Eigen::Index const p = prob.perm[v];
        out.a_bar[p] = g[v][0] / s[v];
        out.b_bar[p] = g[v][1] / s[v];
        out.sigma_bar(p, p) = d_var[v];
      }
      double const d_cov = g_r / (2 * s1 * s2);
      out.sigma_bar(prob.perm[0], prob.perm[1]) = d_cov;
      out.sigma_bar(prob.perm[1], prob.perm[0]) = d_cov;
    }
    out.prob.elapsed = seconds_since(start);
    return out;
  }

  sov_evaluator eval(prob);
  int const n_rep = opts.n_replicates;
  int const qdim = static_cast<int>(k - 1);
  int ladder = korobov_ladder_index(8 * (k + 1));
  std::vector<double> w(qdim), rep_means(n_rep);
  long long n_evals{};

  for(int stage = 0; ; ++stage){
    std::uint64_t const n = korobov_ladder(ladder);
    auto const z = korobov_generator(ladder, qdim);
    if constexpr (with_grad)
      eval.reset_gradient();

    for(int r = 0; r < n_rep; ++r){
      rng gen(derive_seed(opts.seed, static_cast<std::uint64_t>(stage) * 1024 + r));
      std::vector<double> shift(qdim);
      for(auto &s : shift) s = gen.uniform();

      double sum{};
      for(std::uint64_t i = 0; i < n; ++i){
        for(int j = 0; j < qdim; ++j){
          double v = static_cast<double>((i * z[j]) % n) /
            static_cast<double>(n) + shift[j];
          v -= std::floor(v);
          // baker's transform
          w[j] = 1 - std::abs(2 * v - 1);
        }
        sum += eval.template operator()<with_grad>(w.data());
      }
      rep_means[r] = sum / static_cast<double>(n);
    }
    n_evals += static_cast<long long>(n) * n_rep;

    double mean{};
    for(double x : rep_means) mean += x;
    mean /= n_rep;
    double var{};
    for(double x : rep_means) var += (x - mean) * (x - mean);
    var /= (n_rep - 1) * static_cast<double>(n_rep);
    double const se = std::sqrt(var);

    out.prob.estimate = mean;
    out.prob.std_error = se;

    double const tol = std::max(opts.abs_tol, opts.rel_tol * std::abs(mean));
    bool done = false;
    if(opts.error_multiplier * se <= tol){
      out.prob.status = approx_status::converged;
      done = true;
    } else if(ladder + 1 >= korobov_ladder_size ||
                n_evals + static_cast<long long>(korobov_ladder(ladder + 1)) * n_rep
                > opts.max_samples){
      out.prob.status = approx_status::max_samples;
      done = true;
    }

    if(done){
      if constexpr (with_grad){
        double const denom = static_cast<double>(n) * n_rep;
        finalize_grad(eval.a_bar / denom, eval.b_bar / denom,
                      eval.l_bar / denom);
      }
      break;
    }
    ++ladder;
  }

  out.prob.n_evals = n_evals;
  out.prob.elapsed = seconds_since(start);
  return out;
}

} // namespace detail

/**
 * Evaluates the separation-of-variables integrand at w in [0, 1)^(k - 1)
 * for the given Cholesky factor without any reordering.
 */
inline double sov_integrand(hyper_rect const &rect, vec const &mu,
                            mat const &chol, vec const &w){
  Eigen::Index const k = mu.size();
  if(chol.rows() != k || w.size() < k - 1)
    throw bad_dimension("sov_integrand: dimension mismatch");
  detail::sov_problem prob{std::vector<int>(k), rect.lower - mu,
                           rect.upper - mu, chol};
  std::iota(prob.perm.begin(), prob.perm.end(), 0);
  detail::sov_evaluator eval(prob);
  return eval.operator()<false>(w.data());
}

/// greedy variance reducing variable order
inline std::vector<int> reorder_variables
  (hyper_rect const &rect, vec const &mu, mat const &sigma){
  return detail::reorder_and_factor
    (rect.lower - mu, rect.upper - mu, sigma, true).perm;
}

/**
 * Probability that X ~ N(mu, sigma) is in the rectangle using randomized
 * Korobov rules. Handles both one and two-sided bounds.
 */
inline approx_result mvn_interval(hyper_rect const &rect, vec const &mu,
                                  mat const &sigma, cdf_options const &opts = {}){
  return detail::mvn_rect_impl<false>
    (rect.lower, rect.upper, mu, sigma, opts).prob;
}

/// P(X <= upper) for X ~ N(mu, sigma)
inline approx_result mvn_cdf(vec const &upper, vec const &mu, mat const &sigma,
                             cdf_options const &opts = {}){
  return mvn_interval(hyper_rect::lower_orthant(upper), mu, sigma, opts);
}

inline approx_result mvn_cdf(hyper_rect const &rect, vec const &mu,
                             mat const &sigma, cdf_options const &opts = {}){
  return mvn_interval(rect, mu, sigma, opts);
}

/**
 * Probability and its gradient wrt the bounds, the mean, and the covariance
 * matrix. The gradient is the exact derivative of the estimator for the
 * fixed set of random shifts so finite differences with the same seed agree
 * with it up to rounding and the step size.
 */
inline cdf_grad_result mvn_rect_grad(hyper_rect const &rect, vec const &mu,
                                     mat const &sigma,
                                     cdf_options const &opts = {}){
  auto res = detail::mvn_rect_impl<true>
    (rect.lower, rect.upper, mu, sigma, opts);
  cdf_grad_result out;
  out.prob = res.prob;
  out.d_lower = res.a_bar;
  out.d_upper = res.b_bar;
  out.d_mu = -(res.a_bar + res.b_bar);
  out.d_sigma = res.sigma_bar;
  return out;
}

/// gradient of P(X <= upper)
inline cdf_grad_result mvn_cdf_grad(vec const &upper, vec const &mu,
                                    mat const &sigma,
                                    cdf_options const &opts = {}){
  return mvn_rect_grad(hyper_rect::lower_orthant(upper), mu, sigma, opts);
}

} // namespace pmlm
