#pragma once

#include "mvn_cdf.hpp"
#include "numeric.hpp"
#include "random.hpp"
#include "sequences.hpp"

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

namespace pmlm {

struct not_applicable : error {
  using error::error;
};
struct node_budget_exceeded : error {
  node_budget_exceeded() : error("quadrature: node budget exceeded") { }
};

// ---------------------------------------------------------------------------
// integrands

/// the non-Gaussian part h(u) of a Gaussian weighted integral
class integrand {
public:
  virtual ~integrand() = default;
  virtual int dim() const = 0;
  virtual double log_value(vec const &u) const = 0;
  virtual bool has_derivatives() const { return false; }
  /**
   * Returns log h(u) and sets the gradient of log h and, if hess is not
   * null, the Hessian.
   */
  virtual double log_derivs(vec const &u, vec &grad, mat *hess) const {
    throw not_applicable("integrand: no derivatives");
  }
};

/// log(Phi(t) - Phi(t - w)) and its first two derivatives in t
struct probit_term {
  double value, d1, d2;
};

inline probit_term probit_interval_term(double t, double width){
  if(width == inf){
    double const lam = inv_mills(t);
    return {log_pnorm(t), lam, -lam * (t + lam)};
  }
  double const lo = t - width;
  double const lp = log_pnorm_interval(lo, t);
  double const r_hi = std::exp(log_dnorm(t) - lp),
               r_lo = lo == -inf ? 0 : std::exp(log_dnorm(lo) - lp);
  double const d1 = r_hi - r_lo;
  double const d2 = -t * r_hi + (lo == -inf ? 0 : lo * r_lo) - d1 * d1;
  return {lp, d1, d2};
}

/**
 * A log kernel of a linear predictor t with a block diagonal Hessian. The
 * Hessian blocks are written consecutively in column major order.
 */
class lp_kernel {
public:
  virtual ~lp_kernel() = default;
  virtual int dim() const = 0;
  virtual int block_size() const { return 1; }
  virtual double value(vec const &t) const = 0;
  virtual double derivs(vec const &t, vec &d1, std::vector<double> *d2) const = 0;
};

/// sum_i log(Phi(t_i) - Phi(t_i - w_i)) with w_i = inf for one-sided terms
class probit_interval_kernel final : public lp_kernel {
  vec width;

public:
  explicit probit_interval_kernel(vec width) : width{std::move(width)} { }
  static std::shared_ptr<probit_interval_kernel> one_sided(int n){
    return std::make_shared<probit_interval_kernel>(vec::Constant(n, inf));
  }

  int dim() const override { return static_cast<int>(width.size()); }

  double value(vec const &t) const override {
    double out{};
    for(Eigen::Index i = 0; i < t.size(); ++i)
      out += width[i] == inf ? log_pnorm(t[i])
                             : log_pnorm_interval(t[i] - width[i], t[i]);
    return out;
  }

  double derivs(vec const &t, vec &d1, std::vector<double> *d2) const override {
    double out{};
    d1.resize(t.size());
    if(d2) d2->resize(t.size());
    for(Eigen::Index i = 0; i < t.size(); ++i){
      auto const term = probit_interval_term(t[i], width[i]);
      out += term.value;
      d1[i] = term.d1;
      if(d2) (*d2)[i] = term.d2;
    }
    return out;
  }
};

/**
 * sum_i y_i log Phi(t_i) + (m_i - y_i) log Phi(-t_i); the binomial kernel
 * without materializing the augmented design.
 */
class probit_count_kernel final : public lp_kernel {
  std::vector<int> y, m;

public:
  probit_count_kernel(std::vector<int> y, std::vector<int> m)
    : y{std::move(y)}, m{std::move(m)} { }

  int dim() const override { return static_cast<int>(y.size()); }

  double value(vec const &t) const override {
    double out{};
    for(Eigen::Index i = 0; i < t.size(); ++i){
      if(y[i] > 0) out += y[i] * log_pnorm(t[i]);
      if(m[i] > y[i]) out += (m[i] - y[i]) * log_pnorm(-t[i]);
    }
    return out;
  }

  double derivs(vec const &t, vec &d1, std::vector<double> *d2) const override {
    double out{};
    d1.resize(t.size());
    if(d2) d2->resize(t.size());
    for(Eigen::Index i = 0; i < t.size(); ++i){
      double v{}, g{}, h{};
      if(y[i] > 0){
        double const lam = inv_mills(t[i]);
        v += y[i] * log_pnorm(t[i]);
        g += y[i] * lam;
        h -= y[i] * lam * (t[i] + lam);
      }
      if(m[i] > y[i]){
        double const lam = inv_mills(-t[i]);
        v += (m[i] - y[i]) * log_pnorm(-t[i]);
        g -= (m[i] - y[i]) * lam;
        h -= (m[i] - y[i]) * lam * (-t[i] + lam);
      }
      out += v;
      d1[i] = g;
      if(d2) (*d2)[i] = h;
    }
    return out;
  }
};

/// h(u) = exp(kernel(eta + Z u))
class linear_predictor_integrand final : public integrand {
  vec eta_;
  mat z_;
  std::shared_ptr<lp_kernel const> kernel_;

public:
  linear_predictor_integrand(vec eta, mat z,
                             std::shared_ptr<lp_kernel const> kernel)
    : eta_{std::move(eta)}, z_{std::move(z)}, kernel_{std::move(kernel)} {
    if(eta_.size() != z_.rows() || kernel_->dim() != eta_.size())
      throw dimension_mismatch("linear_predictor_integrand: dimension mismatch");
    if(kernel_->dim() % kernel_->block_size() != 0)
      throw dimension_mismatch("linear_predictor_integrand: bad block size");
  }

  vec const & eta() const { return eta_; }
  mat const & z() const { return z_; }
  std::shared_ptr<lp_kernel const> const & kernel() const { return kernel_; }

  int dim() const override { return static_cast<int>(z_.cols()); }
  bool has_derivatives() const override { return true; }

  double log_value(vec const &u) const override {
    return kernel_->value(eta_ + z_ * u);
  }

  double log_derivs(vec const &u, vec &grad, mat *hess) const override {
    vec const t = eta_ + z_ * u;
    vec d1;
    std::vector<double> d2;
    double const out = kernel_->derivs(t, d1, hess ? &d2 : nullptr);
    grad = z_.transpose() * d1;
    if(hess){
      int const bs = kernel_->block_size();
      Eigen::Index const k = z_.cols();
      hess->setZero(k, k);
      if(bs == 1){
        *hess = z_.transpose() *
          Eigen::Map<vec const>(d2.data(), d2.size()).asDiagonal() * z_;
      } else {
        Eigen::Index const n_blocks = t.size() / bs;
        for(Eigen::Index b = 0; b < n_blocks; ++b){
          Eigen::Map<mat const> blk(d2.data() + b * bs * bs, bs, bs);
          auto const zb = z_.middleRows(b * bs, bs);
          hess->noalias() += zb.transpose() * blk * zb;
        }
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// problems and modes

/**
 * The integral of phi(u; mean, cov) h(u). The Cholesky factor and inverse of
 * the covariance matrix are cached.
 */
class gwi_problem {
  vec mean_;
  mat cov_, cov_chol_, cov_inv_;
  double log_det_cov_;
  std::shared_ptr<integrand const> h_;

public:
  gwi_problem(vec mean, mat cov, std::shared_ptr<integrand const> h)
    : mean_{std::move(mean)}, cov_{std::move(cov)},
      cov_chol_{cholesky_jitter(cov_)}, cov_inv_{chol_inverse(cov_chol_)},
      log_det_cov_{log_det_chol(cov_chol_)}, h_{std::move(h)} {
    if(mean_.size() != cov_.rows() || h_->dim() != mean_.size())
      throw dimension_mismatch("gwi_problem: dimension mismatch");
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  vec const & mean() const { return mean_; }
  mat const & cov() const { return cov_; }
  mat const & cov_chol() const { return cov_chol_; }
  mat const & cov_inv() const { return cov_inv_; }
  integrand const & h() const { return *h_; }
  std::shared_ptr<integrand const> const & h_ptr() const { return h_; }

  double log_weight(vec const &u) const {
    vec const r = cov_chol_.triangularView<Eigen::Lower>().solve(u - mean_);
    return -.5 * (dim() * log_2pi + log_det_cov_ + r.squaredNorm());
  }

  /// log of the full integrand g(u) = phi(u; mean, cov) h(u)
  double log_g(vec const &u) const { return log_weight(u) + h_->log_value(u); }
};

struct mode_result {
  vec u_hat;
  mat neg_hessian;
  /// lower Cholesky factor of neg_hessian
  mat neg_hessian_chol;
  double log_g_at_mode;
  int iterations;
  bool converged;
};

/**
 * Maximizes log g with damped Newton steps using the analytic Hessian of log
 * h. Falls back to BFGS started with the inverse Hessian when the Hessian is
 * not negative definite.
 */
inline mode_result find_mode(gwi_problem const &p, double tol = 1e-8,
                             int max_iterations = 200){
  if(!p.h().has_derivatives())
    throw not_applicable("find_mode: integrand without derivatives");
  Eigen::Index const k = p.dim();

  auto eval = [&](vec const &u, vec &grad, mat *hess){
    double const lh = p.h().log_derivs(u, grad, hess);
    vec const dev = u - p.mean();
    vec const sinv_dev = p.cov_inv() * dev;
    grad = -sinv_dev + grad;
    if(hess)
      *hess = p.cov_inv() - *hess; // negative Hessian of log g
    return lh + p.log_weight(u);
  };

  mode_result res{p.mean(), mat(k, k), mat(k, k), 0, 0, false};
  vec grad(k);
  mat neg_hess(k, k);
  double f = eval(res.u_hat, grad, &neg_hess);

  bool use_bfgs = false;
  for(; res.iterations < max_iterations; ++res.iterations){
    if(grad.norm() <= tol){
      res.converged = true;
      break;
    }
    Eigen::LLT<mat> llt(neg_hess);
    if(llt.info() != Eigen::Success){
      use_bfgs = true;
      break;
    }
    vec const step = llt.solve(grad);
    double const decrement = grad.dot(step);
    // backtracking on -log g
    double alpha = 1;
    vec u_new(k), grad_new(k);
    mat hess_new(k, k);
    double f_new{};
    bool accepted = false;
    for(int it = 0; it < 50; ++it){
      u_new = res.u_hat + alpha * step;
      f_new = eval(u_new, grad_new, &hess_new);
      if(std::isfinite(f_new) && f_new >= f + 1e-4 * alpha * decrement){
        accepted = true;
        break;
      }
      alpha /= 2;
    }
    if(!accepted){
      // no progress possible at machine precision
      res.converged = decrement < 1e-12 * std::max(1., std::abs(f));
      break;
    }
    bool const tiny = std::abs(f_new - f) <= 1e-15 * std::max(1., std::abs(f));
    res.u_hat = u_new;
    f = f_new;
    grad = grad_new;
    neg_hess = hess_new;
    if(tiny && grad.norm() <= 1e3 * tol){
      res.converged = true;
      break;
    }
  }

  if(use_bfgs){
    minimize_options opts;
    opts.tol = tol;
    opts.max_iterations = 10 * max_iterations;
    vec g0(k);
    mat h0(k, k);
    eval(res.u_hat, g0, &h0);
    Eigen::SelfAdjointEigenSolver<mat> es(h0);
    vec lam = es.eigenvalues().cwiseAbs().cwiseMax(1e-8);
    opts.inv_hess0 = es.eigenvectors() * lam.cwiseInverse().asDiagonal() *
      es.eigenvectors().transpose();
    auto const opt = quasi_newton_minimize(
      [&](vec const &u, vec &g){
        double const v = eval(u, g, nullptr);
        g = -g;
        return -v;
      }, res.u_hat, opts);
    res.u_hat = opt.x;
    res.iterations += opt.iterations;
    res.converged = opt.status == minimize_status::converged;
    f = eval(res.u_hat, grad, &neg_hess);
  }

  res.log_g_at_mode = f;
  symmetrize(neg_hess);
  res.neg_hessian = neg_hess;
  res.neg_hessian_chol = cholesky_jitter(neg_hess);
  return res;
}

/// Laplace approximation of log L
inline double laplace(gwi_problem const &p, mode_result const &mode){
  return .5 * p.dim() * log_2pi - .5 * log_det_chol(mode.neg_hessian_chol)
    + mode.log_g_at_mode;
}
inline double laplace(gwi_problem const &p){
  return laplace(p, find_mode(p));
}

// ---------------------------------------------------------------------------
// stochastic engines

struct mc_options {
  double rel_tol{1e-4};
  double abs_tol{0};
  long long max_samples{1000000};
  std::uint64_t seed{1};
  bool adaptive{true};
  double error_multiplier{3.5};
  /// random rotations per spherical-radial replicate
  int rotations{1};
  /// scrambled sequences used by rqmc
  int n_replicates{10};
};

/**
 * Called for every evaluated point with the log absolute value and sign of
 * its contribution to the (unnormalized) estimator. Used for posterior
 * expectations.
 */
using point_observer =
  std::function<void(vec const &u, double log_abs_w, double sign)>;

namespace detail {

/// streaming mean and variance of values v * exp(lref) with rescaling
class scaled_mean {
  double ref{-inf}, s1{}, s2{};
  long long n{};

public:
  void add(double v, double lref){
    ++n;
    if(v == 0 || lref == -inf) return;
    if(ref == -inf) ref = lref;
    else if(lref > ref + 20){
      double const f = std::exp(ref - lref);
      s1 *= f;
      s2 *= f * f;
      ref = lref;
    }
    double const x = v * std::exp(lref - ref);
    s1 += x;
    s2 += x * x;
  }
  void add_log(double logv){ add(1, logv); }

  long long count() const { return n; }
  double log_scale() const { return ref == -inf ? 0 : ref; }
  double mean() const { return n > 0 ? s1 / static_cast<double>(n) : 0; }
  double std_error() const {
    if(n < 2) return inf;
    double const nd = static_cast<double>(n), m = s1 / nd;
    double const var = std::max(s2 / nd - m * m, 0.) * nd / (nd - 1);
    return std::sqrt(var / nd);
  }
};

inline bool reached(double mean, double se, mc_options const &opts){
  return opts.error_multiplier * se <=
    std::max(opts.abs_tol, opts.rel_tol * std::abs(mean));
}

/**
 * The change of variables u = center + S z shared by the adaptive and
 * non-adaptive engines. log f(z) is the log integrand wrt the standard
 * normal density.
 */
struct gaussian_transform {
  gwi_problem const &p;
  bool adaptive;
  vec center;
  mat s; // u = center + s z
  double log_det_s{};

  gaussian_transform(gwi_problem const &p, mode_result const *mode)
    : p{p}, adaptive{mode != nullptr} {
    if(mode){
      center = mode->u_hat;
      // S = L^-T with L L^T = -H
      s = mode->neg_hessian_chol.transpose().triangularView<Eigen::Upper>()
        .solve(mat::Identity(p.dim(), p.dim()));
      log_det_s = -mode->neg_hessian_chol.diagonal().array().log().sum();
    } else {
      center = p.mean();
      s = p.cov_chol();
    }
  }

  gaussian_transform(gwi_problem const &p, mode_result const *mode,
                     vec center, mat s, double log_det_s)
    : p{p}, adaptive{mode != nullptr}, center{std::move(center)},
      s{std::move(s)}, log_det_s{log_det_s} { }

  /// log f(z) where E[f(Z)] = L for Z ~ N(0, I); u is set to the point
  double log_f(vec const &z, vec &u) const {
    u = center + s * z;
    if(adaptive)
      return p.log_g(u) + log_det_s + .5 * z.squaredNorm()
        + .5 * p.dim() * log_2pi;
    return p.h().log_value(u);
  }
};

inline void notify(point_observer const *obs, vec const &u, double log_w,
                   double sign){
  if(obs && *obs) (*obs)(u, log_w, sign);
}

} // namespace detail

/**
 * Importance sampler with location and scale balanced antithetic variables.
 * The adaptive version samples from N(u_hat, (-H)^-1).
 */
inline approx_result importance_sample
  (gwi_problem const &p, mc_options const &opts = {},
   mode_result const *mode = nullptr, point_observer const *obs = nullptr){
  auto const start = detail::clock::now();
  mode_result mode_own;
  if(opts.adaptive && !mode){
    mode_own = find_mode(p);
    mode = &mode_own;
  }
  detail::gaussian_transform const tr(p, opts.adaptive ? mode : nullptr);

  rng gen(opts.seed);
  detail::scaled_mean acc;
  approx_result out;
  Eigen::Index const k = p.dim();
  long long const batch = 1000;
  vec u(k), z(k);
  std::array<double, 4> logs;

  while(true){
    for(long long i = 0; i < batch / 4; ++i){
      do {
        for(auto &zi : z) zi = gen.normal();
      } while(z.squaredNorm() == 0);
      auto const set = antithetic_expand(z);
      double mx = -inf;
      for(int j = 0; j < 4; ++j){
        logs[j] = tr.log_f(set[j], u);
        detail::notify(obs, u, logs[j], 1);
        mx = std::max(mx, logs[j]);
      }
      double v{};
      if(mx > -inf)
        for(double l : logs) v += std::exp(l - mx);
      acc.add(v / 4, mx);
    }
    out.n_evals += batch;

    double const m = acc.mean(), se = acc.std_error();
    if(detail::reached(m, se, opts)){
      out.status = approx_status::converged;
      break;
    }
    if(out.n_evals + batch > opts.max_samples){
      out.status = approx_status::max_samples;
      break;
    }
  }

  out.estimate = acc.mean();
  out.std_error = acc.std_error();
  out.log_scale = acc.log_scale();
  out.elapsed = detail::seconds_since(start);
  return out;
}

/**
 * One draw of the stochastic spherical-radial rule of degree 5 for
 * E[f(Z)], Z ~ N(0, I_K). Each draw uses uniform random rotations Q and a
 * random radial pair. With t = r^2 and T ~ chi-square(K) the rule is
 *
 *   f(0) [1 - K (w1 / t1 + w2 / t2)] + K w1 / t1 S(t1) + K w2 / t2 S(t2)
 *
 * where S(t) is the spherical rule at radius sqrt(t). The radial nodes are
 * t1 = s (1 + v) / 2 and t2 = s (1 - v) / 2 with s ~ Gamma(K + 4, scale 2)
 * and v = +/- sqrt(b), b ~ Beta(3 / 2, (K + 2) / 2), and the weights
 * w1 = (K + 2 - t2) / (t1 - t2) and w2 = (t1 - K - 2) / (t1 - t2). This
 * makes the radial rule unbiased for any function and exact for quadratic
 * polynomials in t.
 *
 * The spherical rule uses the points +/- Q e_i with weight
 * (4 - K) / (2 K (K + 2)) and (+/- Q e_i +/- Q e_j) / sqrt(2), i < j, with
 * weight 1 / (K (K + 2)). Together this integrates polynomials of total
 * degree 5 exactly for every draw. With several rotations the spherical
 * parts are averaged. The first point is the origin.
 */
struct sr_draw {
  std::vector<vec> points;
  std::vector<double> weights;
};

inline std::size_t sr_draw_size(Eigen::Index k, int rotations){
  return static_cast<std::size_t>(1 + 2 * rotations * (2 * k + 2 * k * (k - 1)));
}

inline sr_draw spherical_radial_draw(Eigen::Index k, rng &gen, int rotations = 1){
  double const kd = static_cast<double>(k);
  int const n_rot = std::max(rotations, 1);
  double const w_axis = (4 - kd) / (2 * kd * (kd + 2)),
               w_pair = 1 / (kd * (kd + 2));

  double const s_val = 2 * gen.gamma(kd + 4);
  double const b_val = gen.beta(1.5, (kd + 2) / 2);
  double const v_val = (gen.uniform() < .5 ? -1 : 1) * std::sqrt(b_val);
  double const t1 = s_val * (1 + v_val) / 2, t2 = s_val * (1 - v_val) / 2;
  double const mu = kd + 2;
  double const w1 = (mu - t2) / (t1 - t2), w2 = (t1 - mu) / (t1 - t2);
  double const c0 = 1 - kd * (w1 / t1 + w2 / t2),
               c1 = kd * w1 / t1 / n_rot, c2 = kd * w2 / t2 / n_rot;

  sr_draw out;
  out.points.reserve(sr_draw_size(k, n_rot));
  out.weights.reserve(sr_draw_size(k, n_rot));
  out.points.push_back(vec::Zero(k));
  out.weights.push_back(c0);
  for(int rot = 0; rot < n_rot; ++rot){
    mat const q = k > 1 ? gen.random_orthogonal(k) : mat(mat::Identity(1, 1));
    for(int ri = 0; ri < 2; ++ri){
      double const r = std::sqrt(ri == 0 ? t1 : t2),
                   c = ri == 0 ? c1 : c2;
      for(Eigen::Index i = 0; i < k; ++i)
        for(double sgn : {1., -1.}){
          out.points.push_back(sgn * r * q.col(i));
          out.weights.push_back(c * w_axis);
        }
      double const rs = r / std::numbers::sqrt2;
      for(Eigen::Index i = 0; i < k; ++i)
        for(Eigen::Index j = i + 1; j < k; ++j)
          for(double si : {1., -1.})
            for(double sj : {1., -1.}){
              out.points.push_back(rs * (si * q.col(i) + sj * q.col(j)));
              out.weights.push_back(c * w_pair);
            }
    }
  }
  return out;
}

/**
 * Averages independent draws of the degree 5 stochastic spherical-radial
 * rule (see spherical_radial_draw). The adaptive version applies the rule
 * after the change of variables at the mode.
 */
inline approx_result spherical_radial
  (gwi_problem const &p, mc_options const &opts = {},
   mode_result const *mode = nullptr, point_observer const *obs = nullptr){
  auto const start = detail::clock::now();
  mode_result mode_own;
  if(opts.adaptive && !mode){
    mode_own = find_mode(p);
    mode = &mode_own;
  }
  detail::gaussian_transform const tr(p, opts.adaptive ? mode : nullptr);

  Eigen::Index const k = p.dim();
  int const n_rot = std::max(opts.rotations, 1);
  long long const per_rep = static_cast<long long>(sr_draw_size(k, n_rot));

  rng gen(opts.seed);
  detail::scaled_mean acc;
  approx_result out;
  vec u(k);
  std::vector<double> logs;
  std::vector<vec> us;
  double const log_f0 = tr.log_f(vec::Zero(k), u);
  vec const u0 = u;

  long long const min_reps = 10;
  while(true){
    long long const n_reps = out.n_evals == 0
      ? min_reps : std::max<long long>(min_reps, acc.count() / 2);
    for(long long rep = 0; rep < n_reps; ++rep){
      auto const draw = spherical_radial_draw(k, gen, n_rot);
      std::size_t const n_pts = draw.points.size();
      logs.resize(n_pts);
      us.resize(obs ? n_pts : 0);
      logs[0] = log_f0;
      if(obs) us[0] = u0;
      for(std::size_t i = 1; i < n_pts; ++i){
        logs[i] = tr.log_f(draw.points[i], u);
        if(obs) us[i] = u;
      }

      double mx = -inf;
      for(double l : logs) mx = std::max(mx, l);
      double v{};
      if(mx > -inf)
        for(std::size_t i = 0; i < n_pts; ++i)
          v += draw.weights[i] * std::exp(logs[i] - mx);
      acc.add(v, mx);
      if(obs)
        for(std::size_t i = 0; i < n_pts; ++i)
          if(draw.weights[i] != 0)
            (*obs)(us[i], logs[i] + std::log(std::abs(draw.weights[i])),
                   draw.weights[i] > 0 ? 1 : -1);
    }
    out.n_evals += n_reps * per_rep;

    double const m = acc.mean(), se = acc.std_error();
    if(detail::reached(m, se, opts)){
      out.status = approx_status::converged;
      break;
    }
    long long const next = std::max<long long>(min_reps, acc.count() / 2);
    if(out.n_evals + next * per_rep > opts.max_samples){
      out.status = approx_status::max_samples;
      break;
    }
  }

  out.estimate = acc.mean();
  out.std_error = acc.std_error();
  out.log_scale = acc.log_scale();
  out.elapsed = detail::seconds_since(start);
  return out;
}

/**
 * Randomized quasi-Monte Carlo with independently scrambled Sobol sequences.
 * The standard normal points are mapped with Q Lambda^(1/2) from the
 * eigendecomposition of the proposal covariance so the directions with the
 * largest variance use the leading coordinates.
 */
inline approx_result rqmc
  (gwi_problem const &p, mc_options const &opts = {},
   mode_result const *mode = nullptr, point_observer const *obs = nullptr){
  auto const start = detail::clock::now();
  mode_result mode_own;
  if(opts.adaptive && !mode){
    mode_own = find_mode(p);
    mode = &mode_own;
  }

  Eigen::Index const k = p.dim();
  mat const cov = opts.adaptive
    ? chol_inverse(mode->neg_hessian_chol) : p.cov();
  auto const eig = sym_eigen(cov);
  vec const sqrt_lambda = eig.lambda.cwiseMax(0).cwiseSqrt();
  mat const s = eig.q * sqrt_lambda.asDiagonal();
  double const log_det_s = sqrt_lambda.array().log().sum();
  detail::gaussian_transform const tr
    (p, opts.adaptive ? mode : nullptr,
     opts.adaptive ? mode->u_hat : p.mean(), s, log_det_s);

  int const n_rep = std::max(opts.n_replicates, 2);
  std::vector<sobol_sequence> seqs;
  seqs.reserve(n_rep);
  for(int r = 0; r < n_rep; ++r)
    seqs.emplace_back(static_cast<int>(k), derive_seed(opts.seed, r));
  std::vector<detail::scaled_mean> accs(n_rep);

  approx_result out;
  vec u(k), z(k);
  std::vector<double> pt(k);
  long long n_per_rep = 64, done_per_rep = 0;

  double est{}, se{}, log_scale{};
  while(true){
    for(int r = 0; r < n_rep; ++r)
      for(long long i = done_per_rep; i < n_per_rep; ++i){
        seqs[r].next(pt.data());
        for(Eigen::Index j = 0; j < k; ++j)
          z[j] = qnorm(pt[j]);
        double const lf = tr.log_f(z, u);
        detail::notify(obs, u, lf, 1);
        accs[r].add_log(lf);
      }
    out.n_evals += (n_per_rep - done_per_rep) * n_rep;
    done_per_rep = n_per_rep;

    // combine the replicate means on a common scale
    log_scale = -inf;
    for(auto const &a : accs)
      if(a.mean() > 0) log_scale = std::max(log_scale, a.log_scale());
    if(log_scale == -inf) log_scale = 0;
    std::vector<double> means(n_rep);
    for(int r = 0; r < n_rep; ++r)
      means[r] = accs[r].mean() * std::exp(accs[r].log_scale() - log_scale);
    est = 0;
    for(double m : means) est += m;
    est /= n_rep;
    double var{};
    for(double m : means) var += (m - est) * (m - est);
    se = std::sqrt(var / ((n_rep - 1.) * n_rep));

    if(detail::reached(est, se, opts)){
      out.status = approx_status::converged;
      break;
    }
    if(out.n_evals + n_per_rep * n_rep > opts.max_samples){
      out.status = approx_status::max_samples;
      break;
    }
    n_per_rep *= 2;
  }

  out.estimate = est;
  out.std_error = se;
  out.log_scale = log_scale;
  out.elapsed = detail::seconds_since(start);
  return out;
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature

/// nodes and weights for the integral of phi(x) f(x)
struct quadrature_rule {
  vec nodes, weights;
};

namespace detail {
inline quadrature_rule compute_ghq_rule(int b){
  quadrature_rule out{vec(b), vec(b)};
  if(b == 1){
    out.nodes[0] = 0;
    out.weights[0] = 1;
    return out;
  }

  // Golub-Welsch: Jacobi matrix of the probabilists' Hermite polynomials
  mat jac = mat::Zero(b, b);
  for(int i = 1; i < b; ++i)
    jac(i, i - 1) = jac(i - 1, i) = std::sqrt(static_cast<double>(i));
  auto const eig = sym_eigen(jac);

  // normalized polynomials psi_k = He_k / sqrt(k!)
  auto psi = [b](double x, double &psi_b, double &psi_bm1){
    double p0 = 1, p1 = x;
    for(int k = 1; k < b; ++k){
      double const p2 = (x * p1 - std::sqrt(static_cast<double>(k)) * p0) /
        std::sqrt(k + 1.);
      p0 = p1;
      p1 = p2;
    }
    psi_b = p1;
    psi_bm1 = p0;
  };

  for(int i = 0; i < b; ++i){
    double x = eig.lambda[b - 1 - i]; // ascending
    // Newton refinement of the root of psi_b with psi_b' = sqrt(b) psi_(b-1)
    for(int it = 0; it < 10; ++it){
      double pb, pbm1;
      psi(x, pb, pbm1);
      double const dx = pb / (std::sqrt(static_cast<double>(b)) * pbm1);
      x -= dx;
      if(std::abs(dx) < 1e-16 * std::max(1., std::abs(x))) break;
    }
    double pb, pbm1;
    psi(x, pb, pbm1);
    out.nodes[i] = x;
    out.weights[i] = 1 / (b * pbm1 * pbm1);
  }

  // exact symmetry
  for(int i = 0; i < b / 2; ++i){
    double const x = (out.nodes[b - 1 - i] - out.nodes[i]) / 2,
                 w = (out.weights[b - 1 - i] + out.weights[i]) / 2;
    out.nodes[i] = -x;
    out.nodes[b - 1 - i] = x;
    out.weights[i] = out.weights[b - 1 - i] = w;
  }
  if(b % 2 == 1)
    out.nodes[b / 2] = 0;
  out.weights /= out.weights.sum();
  return out;
}
} // namespace detail

/// Gauss-Hermite rule with b nodes (cached)
inline quadrature_rule const & ghq_rule(int b){
  if(b < 1 || b > 60)
    throw error("ghq_rule: b must be between 1 and 60");
  static std::mutex mtx;
  static std::map<int, quadrature_rule> cache;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(b);
  if(it == cache.end())
    it = cache.emplace(b, detail::compute_ghq_rule(b)).first;
  return it->second;
}

inline constexpr double default_node_budget = 1e7;

namespace detail {
/**
 * Tensor product rule in odometer order (the first coordinate moves fastest).
 * Returns log L.
 */
inline double tensor_ghq(gaussian_transform const &tr, int b,
                         double node_budget, point_observer const *obs){
  Eigen::Index const k = tr.p.dim();
  if(std::pow(static_cast<double>(b), static_cast<double>(k)) > node_budget)
    throw node_budget_exceeded();
  auto const &rule = ghq_rule(b);
  vec const log_w = rule.weights.array().log();

  std::vector<int> idx(k, 0);
  vec z(k), u(k);
  double ref = -inf, sum{};
  for(;;){
    double lw{};
    for(Eigen::Index j = 0; j < k; ++j){
      z[j] = rule.nodes[idx[j]];
      lw += log_w[idx[j]];
    }
    double const lv = tr.log_f(z, u) + lw;
    notify(obs, u, lv, 1);
    if(lv > -inf){
      if(ref == -inf) ref = lv;
      else if(lv > ref + 20){
        sum *= std::exp(ref - lv);
        ref = lv;
      }
      sum += std::exp(lv - ref);
    }

    Eigen::Index j = 0;
    for(; j < k; ++j){
      if(++idx[j] < b) break;
      idx[j] = 0;
    }
    if(j == k) break;
  }
  return ref == -inf ? -inf : ref + std::log(sum);
}
} // namespace detail

/// non-adaptive Gauss-Hermite quadrature centered at the prior mean
inline double ghq(gwi_problem const &p, int b,
                  double node_budget = default_node_budget,
                  point_observer const *obs = nullptr){
  detail::gaussian_transform const tr(p, nullptr);
  return detail::tensor_ghq(tr, b, node_budget, obs);
}

/// adaptive Gauss-Hermite quadrature centered and scaled at the mode
inline double aghq(gwi_problem const &p, int b, mode_result const *mode = nullptr,
                   double node_budget = default_node_budget,
                   point_observer const *obs = nullptr){
  if(std::pow(static_cast<double>(b), static_cast<double>(p.dim())) > node_budget)
    throw node_budget_exceeded();
  mode_result mode_own;
  if(!mode){
    mode_own = find_mode(p);
    mode = &mode_own;
  }
  detail::gaussian_transform const tr(p, mode);
  return detail::tensor_ghq(tr, b, node_budget, obs);
}

/**
 * Reduces h(u) = exp(kernel(eta + Z u)) with Z of dimension k x K, k < K,
 * to a k dimensional problem in v = Z u ~ N(Z mean, Z cov Z^T).
 */
inline gwi_problem reduce_gwi_dimension(gwi_problem const &p){
  auto const *lp = dynamic_cast<linear_predictor_integrand const*>(&p.h());
  if(!lp)
    throw not_applicable("reduce_gwi_dimension: integrand is not affine");
  Eigen::Index const k = lp->z().rows();
  if(k >= p.dim())
    throw not_applicable("reduce_gwi_dimension: no reduction possible");
  mat const &z = lp->z();
  mat cov = z * p.cov() * z.transpose();
  symmetrize(cov);
  try {
    cholesky(cov);
  } catch(not_positive_definite const&) {
    throw not_applicable("reduce_gwi_dimension: Z has linearly dependent rows");
  }
  return gwi_problem(z * p.mean(), cov,
                     std::make_shared<linear_predictor_integrand>
                       (lp->eta(), mat::Identity(k, k), lp->kernel()));
}

} // namespace pmlm
