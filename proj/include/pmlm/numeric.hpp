#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmlm {

using vec = Eigen::VectorXd;
using mat = Eigen::MatrixXd;

/// base class for all errors thrown by the library
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct not_positive_definite : error {
  not_positive_definite() : error("matrix is not positive definite") { }
};
struct no_convergence : error {
  using error::error;
};
struct dimension_mismatch : error {
  using error::error;
};

inline constexpr double inf = std::numeric_limits<double>::infinity();
inline constexpr double log_sqrt_2pi = 0.91893853320467274178;
inline constexpr double log_2pi = 1.83787706640934548356;

// ---------------------------------------------------------------------------
// scalar normal functions

/// standard normal density
inline double dnorm(double x) noexcept {
  return std::exp(-.5 * x * x - log_sqrt_2pi);
}
inline double log_dnorm(double x) noexcept {
  return -.5 * x * x - log_sqrt_2pi;
}

/// standard normal CDF
inline double pnorm(double x) noexcept {
  return .5 * std::erfc(-x * std::numbers::sqrt2 / 2);
}

namespace detail {
/**
 * Mills ratio Phi(-t) / phi(t) for t >= 10 with a Lentz continued fraction.
 * Converges in a handful of terms for such large t.
 */
inline double mills_ratio_tail(double t) noexcept {
  constexpr double tiny = 1e-300;
  double f = t, c = t, d = 0;
  for(int k = 1; k < 200; ++k){
    d = t + k * d;
    c = t + k / c;
    if(std::abs(d) < tiny) d = tiny;
    if(std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    double const delta = c * d;
    f *= delta;
    if(std::abs(delta - 1) < 1e-16) break;
  }
  return 1 / f;
}
} // namespace detail

/// log of the standard normal CDF which stays accurate far in the tails
inline double log_pnorm(double x) noexcept {
  if(x == -inf) return -inf;
  if(x > 0) return std::log1p(-pnorm(-x));
  if(x > -10) return std::log(pnorm(x));
  return log_dnorm(x) + std::log(detail::mills_ratio_tail(-x));
}

/// phi(x) / Phi(x), the derivative of log Phi(x)
inline double inv_mills(double x) noexcept {
  if(x == -inf) return inf;
  if(x == inf) return 0;
  if(x > -10) return dnorm(x) / pnorm(x);
  return 1 / detail::mills_ratio_tail(-x);
}

/**
 * Inverse of the standard normal CDF using Wichura's AS241 rational
 * approximations (about 1e-16 relative accuracy).
 */
inline double qnorm(double p) noexcept {
  if(p <= 0) return -inf;
  if(p >= 1) return inf;
  double const q = p - .5;
  if(std::abs(q) <= .425){
    double const r = .180625 - q * q;
    return q * (((((((r * 2509.0809287301226727 +
      33430.575583588128105) * r + 67265.770927008700853) * r +
      45921.953931549871457) * r + 13731.693765509461125) * r +
      1971.5909503065514427) * r + 133.14166789178437745) * r +
      3.387132872796366608) /
      (((((((r * 5226.495278852545925 +
      28729.085735721942674) * r + 39307.89580009271061) * r +
      21213.794301586595867) * r + 5394.1960214247511077) * r +
      687.1870074920579083) * r + 42.313330701600911252) * r + 1.);
  }

  double r = q < 0 ? p : 1 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if(r <= 5){
    r -= 1.6;
    val = (((((((r * 7.7454501427834140764e-4 +
      .0227238449892691845833) * r + .24178072517745061177) * r +
      1.27045825245236838258) * r + 3.64784832476320460504) * r +
      5.7694972214606914055) * r + 4.6303378461565452959) * r +
      1.42343711074968357734) /
      (((((((r * 1.05075007164441684324e-9 +
      5.475938084995344946e-4) * r + .0151986665636164571966) * r +
      .14810397642748007459) * r + .68976733498510000455) * r +
      1.6763848301838038494) * r + 2.05319162663775882187) * r + 1.);
  } else {
    r -= 5;
    val = (((((((r * 2.01033439929228813265e-7 +
      2.71155556874348757815e-5) * r + .0012426609473880784386) * r +
      .026532189526576123093) * r + .29656057182850489123) * r +
      1.7848265399172913358) * r + 5.4637849111641143699) * r +
      6.6579046435011037772) /
      (((((((r * 2.04426310338993978564e-15 +
      1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
      7.868691311456132591e-4) * r + .0148753612908506148525) * r +
      .13692988092273580531) * r + .59983220655588793769) * r + 1.);
  }
  return q < 0 ? -val : val;
}

/**
 * log(Phi(b) - Phi(a)) for a < b computed without cancellation in either
 * tail.
 */
inline double log_pnorm_interval(double a, double b) noexcept {
  if(a >= b) return -inf;
  if(a == -inf) return log_pnorm(b);
  if(b == inf) return log_pnorm(-a);
  if(a > 0){
    // use the upper tail
    double const la = log_pnorm(-a), lb = log_pnorm(-b);
    return la + std::log1p(-std::exp(lb - la));
  }
  if(b < 0){
    double const la = log_pnorm(a), lb = log_pnorm(b);
    return lb + std::log1p(-std::exp(la - lb));
  }
  return std::log(1 - pnorm(a) - pnorm(-b));
}

// ---------------------------------------------------------------------------
// dense symmetric linear algebra

/// symmetrises a matrix in place
inline void symmetrize(mat &x){
  x = (.5 * (x + x.transpose())).eval();
}

/**
 * Cholesky factorization a = S S^T. Throws not_positive_definite if a pivot
 * is at or below dim * eps * max(diag(a)).
 */
inline mat cholesky(mat const &a){
  Eigen::Index const n = a.rows();
  if(n != a.cols())
    throw dimension_mismatch("cholesky: matrix is not square");
  double const max_diag = n > 0 ? a.diagonal().maxCoeff() : 0;
  double const eps_pivot =
    static_cast<double>(n) * std::numeric_limits<double>::epsilon() * max_diag;

  mat s = mat::Zero(n, n);
  for(Eigen::Index j = 0; j < n; ++j){
    double d = a(j, j);
    for(Eigen::Index k = 0; k < j; ++k)
      d -= s(j, k) * s(j, k);
    if(!(d > eps_pivot) || !(d > 0))
      throw not_positive_definite();
    double const sjj = std::sqrt(d);
    s(j, j) = sjj;
    for(Eigen::Index i = j + 1; i < n; ++i){
      double v = a(i, j);
      for(Eigen::Index k = 0; k < j; ++k)
        v -= s(i, k) * s(j, k);
      s(i, j) = v / sjj;
    }
  }
  return s;
}

/**
 * As cholesky but adds 1e-10 * trace / dim to the diagonal once if the
 * first attempt fails.
 */
inline mat cholesky_jitter(mat const &a){
  try {
    return cholesky(a);
  } catch(not_positive_definite const&) {
    mat b = a;
    double const jitter = 1e-10 * a.trace() / static_cast<double>(a.rows());
    b.diagonal().array() += jitter;
    return cholesky(b);
  }
}

/// log determinant from a Cholesky factor
inline double log_det_chol(mat const &s){
  return 2 * s.diagonal().array().log().sum();
}

/// inverse of a PD matrix from its Cholesky factor
inline mat chol_inverse(mat const &s){
  mat const s_inv =
    s.triangularView<Eigen::Lower>().solve(mat::Identity(s.rows(), s.cols()));
  return s_inv.transpose() * s_inv;
}

struct eigen_decomp {
  mat q;
  vec lambda; ///< descending
};

/**
 * Symmetric eigendecomposition with eigenvalues in descending order. Eigen's
 * tridiagonal QR uses an iteration cap of 30 * dim sweeps and the
 * no_convergence error is thrown when it is hit.
 */
inline eigen_decomp sym_eigen(mat const &a){
  Eigen::SelfAdjointEigenSolver<mat> solver(a);
  if(solver.info() != Eigen::Success)
    throw no_convergence("sym_eigen: no convergence");

  Eigen::Index const n = a.rows();
  eigen_decomp out{mat(n, n), vec(n)};
  // Eigen returns ascending order
  for(Eigen::Index i = 0; i < n; ++i){
    out.lambda[i] = solver.eigenvalues()[n - 1 - i];
    out.q.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// quasi-Newton minimizer

enum class minimize_status { converged, max_iterations, line_search_failure };

struct minimize_options {
  double tol{1e-8};
  int max_iterations{1000};
  /// optional initial inverse Hessian approximation
  mat inv_hess0{};
  /// Wolfe constants
  double c1{1e-4}, c2{.9};
  /**
   * Use Armijo backtracking instead of the strong Wolfe search. Better
   * suited for objectives whose gradient is only approximately consistent
   * with the function values, e.g. Monte Carlo estimates.
   */
  bool backtracking{false};
  /**
   * Also stop once the relative decrease of f is below f_tol in f_stall
   * consecutive iterations. Disabled when zero. Useful when the gradient is
   * too noisy for the gradient norm test.
   */
  double f_tol{0};
  int f_stall{3};
};

struct minimize_result {
  vec x;
  double f;
  vec grad;
  int iterations;
  int n_evals;
  minimize_status status;
};

/// objective: returns f(x) and writes the gradient into the second argument
using objective_fn = std::function<double(vec const&, vec&)>;

namespace detail {
inline double cubic_min(double a, double fa, double ga, double b, double fb,
                        double gb){
  // minimiser of the cubic interpolating (a, fa, ga) and (b, fb, gb)
  double const d1 = ga + gb - 3 * (fa - fb) / (a - b);
  double const disc = d1 * d1 - ga * gb;
  if(disc < 0) return (a + b) / 2;
  double const d2 = std::copysign(std::sqrt(disc), b - a);
  double const t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2 * d2);
  double const lo = std::min(a, b), hi = std::max(a, b);
  double const margin = .1 * (hi - lo);
  if(!std::isfinite(t) || t < lo + margin || t > hi - margin)
    return (a + b) / 2;
  return t;
}
} // namespace detail

/**
 * BFGS with a strong Wolfe line search (bracketing and zoom with cubic
 * interpolation). Stops once ||grad|| <= tol * max(1, |f|). On a line search
 * failure the best iterate is returned and flagged.
 */
inline minimize_result quasi_newton_minimize
  (objective_fn const &fn, vec const &x0, minimize_options const &opts = {}){
  Eigen::Index const n = x0.size();
  minimize_result res{x0, 0, vec(n), 0, 0, minimize_status::max_iterations};

  auto eval = [&](vec const &x, vec &g){
    ++res.n_evals;
    return fn(x, g);
  };

  vec x = x0, g(n);
  double f = eval(x, g);
  mat h_inv = opts.inv_hess0.size() == n * n
    ? opts.inv_hess0 : mat(mat::Identity(n, n));
  bool scaled_first = opts.inv_hess0.size() == n * n;

  auto converged = [&](double fv, vec const &gv){
    return gv.norm() <= opts.tol * std::max(1., std::abs(fv));
  };

  vec x_new(n), g_new(n);
  int n_small{};
  for(; res.iterations < opts.max_iterations; ++res.iterations){
    if(converged(f, g)){
      res.status = minimize_status::converged;
      break;
    }

    vec dir = -h_inv * g;
    double dg0 = dir.dot(g);
    if(!(dg0 < 0)){
      // not a descent direction; restart from steepest descent
      h_inv.setIdentity();
      dir = -g;
      dg0 = dir.dot(g);
    }

    // strong Wolfe line search
    double step = 1;
    if(!scaled_first && res.iterations == 0)
      step = std::min(1., 1 / std::max(g.lpNorm<Eigen::Infinity>(), 1e-300));

    double a_prev = 0, f_prev = f, dg_prev = dg0;
    double f_new = 0, dg_new = 0;
    bool found = false;
    auto zoom = [&](double lo, double f_lo, double dg_lo,
                    double hi, double f_hi, double dg_hi){
      for(int it = 0; it < 40; ++it){
        double const a = detail::cubic_min(lo, f_lo, dg_lo, hi, f_hi, dg_hi);
        x_new = x + a * dir;
        f_new = eval(x_new, g_new);
        dg_new = g_new.dot(dir);
        if(!std::isfinite(f_new) || f_new > f + opts.c1 * a * dg0 ||
             f_new >= f_lo){
          hi = a;
          f_hi = std::isfinite(f_new) ? f_new : f_lo + 1e10;
          dg_hi = std::isfinite(dg_new) ? dg_new : 0;
        } else {
          if(std::abs(dg_new) <= -opts.c2 * dg0){
            step = a;
            return true;
          }
          if(dg_new * (hi - lo) >= 0){
            hi = lo;
            f_hi = f_lo;
            dg_hi = dg_lo;
          }
          lo = a;
          f_lo = f_new;
          dg_lo = dg_new;
        }
        if(std::abs(hi - lo) < 1e-16 * std::max(1., std::abs(lo)))
          break;
      }
      // accept the best point if it decreased f
      if(f_lo < f && lo > 0){
        step = lo;
        x_new = x + lo * dir;
        f_new = eval(x_new, g_new);
        dg_new = g_new.dot(dir);
        return true;
      }
      return false;
    };

    if(opts.backtracking){
      for(int it = 0; it < 40 && !found; ++it){
        x_new = x + step * dir;
        f_new = eval(x_new, g_new);
        if(std::isfinite(f_new) && f_new <= f + opts.c1 * step * dg0)
          found = true;
        else
          step /= 2;
      }
    }

    for(int it = 0; it < 60 && !opts.backtracking; ++it){
      x_new = x + step * dir;
      f_new = eval(x_new, g_new);
      dg_new = g_new.dot(dir);

      if(!std::isfinite(f_new) ||
           f_new > f + opts.c1 * step * dg0 || (it > 0 && f_new >= f_prev)){
        if(!std::isfinite(f_new)){
          // shrink until finite and then zoom
          step /= 4;
          continue;
        }
        found = zoom(a_prev, f_prev, dg_prev, step, f_new, dg_new);
        break;
      }
      if(std::abs(dg_new) <= -opts.c2 * dg0){
        found = true;
        break;
      }
      if(dg_new >= 0){
        found = zoom(step, f_new, dg_new, a_prev, f_prev, dg_prev);
        break;
      }
      a_prev = step;
      f_prev = f_new;
      dg_prev = dg_new;
      step *= 2;
    }

    if(!found){
      res.status = minimize_status::line_search_failure;
      break;
    }

    vec const s = x_new - x, y = g_new - g;
    double const sy = s.dot(y);
    bool const small_step = f - f_new <= opts.f_tol * std::max(1., std::abs(f));
    x = x_new;
    f = f_new;
    g = g_new;
    if(opts.f_tol > 0){
      n_small = small_step ? n_small + 1 : 0;
      if(n_small >= opts.f_stall){
        ++res.iterations;
        res.status = minimize_status::converged;
        break;
      }
    }

    if(sy > 1e-14 * s.norm() * y.norm()){
      if(!scaled_first){
        // initial scaling of the identity as in Nocedal and Wright
        h_inv *= sy / y.squaredNorm();
        scaled_first = true;
      }
      double const rho = 1 / sy;
      vec const hy = h_inv * y;
      double const yhy = y.dot(hy);
      h_inv += ((1 + rho * yhy) * rho) * (s * s.transpose())
        - rho * (hy * s.transpose() + s * hy.transpose());
    }
  }

  if(res.status == minimize_status::max_iterations && converged(f, g))
    res.status = minimize_status::converged;
  res.x = x;
  res.f = f;
  res.grad = g;
  return res;
}

/// log binomial coefficient
inline double log_choose(int m, int y){
  return std::lgamma(m + 1.) - std::lgamma(y + 1.) - std::lgamma(m - y + 1.);
}

} // namespace pmlm
