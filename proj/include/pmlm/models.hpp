#pragma once

#include "gwi.hpp"
#include "mvn_cdf.hpp"
#include "numeric.hpp"
#include "skewlink.hpp"

#include <memory>
#include <string>
#include <vector>

namespace pmlm {

struct monotonicity_violation : error {
  using error::error;
};

enum class family { binomial, multinomial, ordered, gsm };

inline char const * to_string(family f){
  switch(f){
  case family::binomial: return "binomial";
  case family::multinomial: return "multinomial";
  case family::ordered: return "ordered";
  case family::gsm: return "gsm";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// cluster data

/// y_i successes out of m_i trials with success probability Phi(x_i^T beta + z_i^T u)
struct binomial_cluster {
  std::vector<int> y, m;
  mat x, z;
};

/**
 * y_i in 1..c is the category with the largest latent utility
 * A_ij = beta_j^T x_i + z_ij^T u + e_ij. z[i] is the c x K matrix with rows
 * z_ij.
 */
struct multinomial_cluster {
  std::vector<int> y;
  int c{2};
  mat x;
  std::vector<mat> z;
};

/// y_i in 1..c from the latent x_i^T beta + z_i^T u + e_i and cutpoints
struct ordered_cluster {
  std::vector<int> y;
  int c{2};
  mat x, z;
};

/**
 * Cutpoints gamma_1 < ... < gamma_(c - 1) with gamma_1 = 0. Only the free
 * values gamma_2, ..., gamma_(c - 1) are stored.
 */
class cutpoints {
  vec free_;

public:
  cutpoints() = default;
  explicit cutpoints(vec free) : free_{std::move(free)} {
    double prev = 0;
    for(double g : free_){
      if(!(g > prev))
        throw error("cutpoints: cutpoints must be strictly increasing and above 0");
      prev = g;
    }
  }

  int categories() const { return static_cast<int>(free_.size()) + 2; }
  vec const & free() const { return free_; }

  /// gamma_k with gamma_0 = -inf and gamma_c = inf
  double operator()(int k) const {
    if(k <= 0) return -inf;
    if(k >= categories()) return inf;
    return k == 1 ? 0 : free_[k - 2];
  }
};

/**
 * Survival times with S(t | u) = Phi(-x(t)^T beta - z^T u). x and dx hold the
 * design and its time derivative evaluated at t.
 */
struct gsm_cluster {
  vec t;
  std::vector<int> event;
  mat x, dx, z;
};

/**
 * I-spline basis on [lower, upper]. The functions are non-decreasing from 0
 * to 1 so non-negative coefficients give a monotone function. The
 * derivatives are the corresponding M-splines.
 */
class ispline_basis {
  std::vector<double> knots_;
  int order_; // order of the B-splines whose tail sums are the I-splines
  double lower_, upper_;

  /// all B-splines of order k at x (Cox-de Boor)
  std::vector<double> bsplines(double x, int k) const {
    std::size_t const n_knots = knots_.size();
    std::vector<double> b(n_knots - 1, 0);
    for(std::size_t i = 0; i + 1 < n_knots; ++i)
      if(knots_[i] <= x && x < knots_[i + 1]) b[i] = 1;
    if(x >= upper_){
      // right continuous at the upper boundary
      for(std::size_t i = n_knots - 1; i-- > 0;)
        if(knots_[i] < knots_[i + 1]){
          b[i] = 1;
          break;
        }
    }
    for(int kk = 2; kk <= k; ++kk)
      for(std::size_t i = 0; i + kk < n_knots; ++i){
        double v{};
        double const d1 = knots_[i + kk - 1] - knots_[i],
                     d2 = knots_[i + kk] - knots_[i + 1];
        if(d1 > 0) v += (x - knots_[i]) / d1 * b[i];
        if(d2 > 0) v += (knots_[i + kk] - x) / d2 * b[i + 1];
        b[i] = v;
      }
    b.resize(n_knots - k);
    return b;
  }

public:
  ispline_basis(std::vector<double> interior, double lower, double upper,
                int degree = 2)
    : order_{degree + 2}, lower_{lower}, upper_{upper} {
    if(!(lower < upper) || degree < 0)
      throw error("ispline_basis: invalid boundary knots or degree");
    for(std::size_t i = 0; i < interior.size(); ++i)
      if(!(interior[i] > lower && interior[i] < upper) ||
           (i > 0 && !(interior[i] > interior[i - 1])))
        throw error("ispline_basis: interior knots must be increasing and inside the boundary");
    knots_.assign(order_, lower);
    knots_.insert(knots_.end(), interior.begin(), interior.end());
    knots_.insert(knots_.end(), order_, upper);
  }

  /// number of basis functions
  int size() const {
    return static_cast<int>(knots_.size()) - order_ - 1;
  }

  /// I-spline values and their derivatives at x
  void eval(double x, double *value, double *deriv) const {
    int const n = size();
    if(x < lower_ || x > upper_){
      for(int i = 0; i < n; ++i){
        value[i] = x > upper_;
        deriv[i] = 0;
      }
      return;
    }
    auto const b = bsplines(x, order_);
    auto const bm = bsplines(x, order_ - 1);
    // I_i = sum_(m > i) B_m and I_i' = (k - 1) B_(i + 1, k - 1) / (knot diff)
    double tail{};
    for(int i = n; i >= 1; --i){
      tail += b[i];
      value[i - 1] = tail;
      double const d = knots_[i + order_ - 1] - knots_[i];
      deriv[i - 1] = d > 0 ? (order_ - 1) * bm[i] / d : 0;
    }
  }
};

/**
 * Design for a probit survival model with x(t) = (1, I(log t), w) where I
 * is an I-spline basis in log time and w are the covariates.
 */
inline void gsm_design(vec const &t, mat const &covariates,
                       ispline_basis const &basis, mat &x, mat &dx){
  Eigen::Index const n = t.size(), q = basis.size(), l = covariates.cols();
  if(covariates.rows() != n)
    throw dimension_mismatch("gsm_design: dimension mismatch");
  x.setZero(n, 1 + q + l);
  dx.setZero(n, 1 + q + l);
  std::vector<double> val(q), der(q);
  for(Eigen::Index i = 0; i < n; ++i){
    if(!(t[i] > 0))
      throw error("gsm_design: times must be positive");
    basis.eval(std::log(t[i]), val.data(), der.data());
    x(i, 0) = 1;
    for(Eigen::Index j = 0; j < q; ++j){
      x(i, 1 + j) = val[j];
      dx(i, 1 + j) = der[j] / t[i];
    }
    x.row(i).tail(l) = covariates.row(i);
  }
}

// ---------------------------------------------------------------------------
// the multinomial integrand

/// log P(Y = k | t) with its gradient and Hessian wrt t
struct multinomial_term {
  double log_value;
  vec grad;
  mat hess;
};

/**
 * log of the integral of phi(a) prod_j Phi(a + t_j) approximated with
 * Gauss-Hermite quadrature with b nodes centered and scaled at the mode of
 * the log integrand. The derivatives are those of the quadrature
 * approximation with the centering held fixed.
 */
inline double multinomial_log_prob(vec const &t, int b, vec *d1 = nullptr,
                                   mat *d2 = nullptr){
  Eigen::Index const m = t.size();
  if(d1) d1->setZero(m);
  if(d2) d2->setZero(m, m);
  if(m == 0) return 0;

  auto q_derivs = [&](double a, double &g, double &h){
    g = -a;
    h = -1;
    for(Eigen::Index j = 0; j < m; ++j){
      double const lam = inv_mills(a + t[j]);
      g += lam;
      h -= lam * (a + t[j] + lam);
    }
  };

  // Newton with a bracket; the log integrand is strictly concave with
  // second derivative in [-m - 1, -1]
  double a = 0, g, h;
  q_derivs(a, g, h);
  double lo = -inf, hi = inf;
  for(int it = 0; it < 100 && std::abs(g) > 1e-12; ++it){
    if(g > 0) lo = a;
    else hi = a;
    double a_new = a - g / h;
    if(!(a_new > lo && a_new < hi) && lo > -inf && hi < inf)
      a_new = (lo + hi) / 2;
    if(std::abs(a_new - a) < 1e-14 * std::max(1., std::abs(a))){
      a = a_new;
      break;
    }
    a = a_new;
    q_derivs(a, g, h);
  }
  q_derivs(a, g, h);
  double const scale = 1 / std::sqrt(-h);

  auto const &rule = ghq_rule(b);
  std::vector<double> log_terms(b);
  double mx = -inf;
  for(int l = 0; l < b; ++l){
    double const al = a + scale * rule.nodes[l];
    double v = std::log(rule.weights[l]) + std::log(scale) + log_dnorm(al)
      - log_dnorm(rule.nodes[l]);
    for(Eigen::Index j = 0; j < m; ++j)
      v += log_pnorm(al + t[j]);
    log_terms[l] = v;
    mx = std::max(mx, v);
  }
  double sum{};
  for(double v : log_terms) sum += std::exp(v - mx);
  double const out = mx + std::log(sum);

  if(d1 || d2){
    vec g1 = vec::Zero(m);
    mat g2 = mat::Zero(m, m);
    vec lam(m);
    for(int l = 0; l < b; ++l){
      double const pi_l = std::exp(log_terms[l] - out),
                   al = a + scale * rule.nodes[l];
      for(Eigen::Index j = 0; j < m; ++j)
        lam[j] = inv_mills(al + t[j]);
      g1 += pi_l * lam;
      if(d2){
        g2.noalias() += pi_l * lam * lam.transpose();
        for(Eigen::Index j = 0; j < m; ++j)
          g2(j, j) -= pi_l * lam[j] * (al + t[j] + lam[j]);
      }
    }
    if(d1) *d1 = g1;
    if(d2){
      g2.noalias() -= g1 * g1.transpose();
      *d2 = g2;
    }
  }
  return out;
}

/**
 * The conditional probability of one multinomial outcome given u,
 * t = eta + kmat u, with derivatives wrt u.
 */
inline multinomial_term multinomial_integrand(vec const &eta, mat const &kmat,
                                              vec const &u, int b = 8){
  if(b < 4)
    throw error("multinomial_integrand: b must be at least 4");
  if(kmat.rows() != eta.size() || kmat.cols() != u.size())
    throw dimension_mismatch("multinomial_integrand: dimension mismatch");
  vec d1;
  mat d2;
  double const lv = multinomial_log_prob(eta + kmat * u, b, &d1, &d2);
  return {lv, kmat.transpose() * d1, kmat.transpose() * d2 * kmat};
}

/// sum of n multinomial log probabilities with blocks of size c - 1
class multinomial_kernel final : public lp_kernel {
  int n_, c_, b_;

public:
  multinomial_kernel(int n, int c, int b = 8) : n_{n}, c_{c}, b_{b} {
    if(c < 2) throw error("multinomial_kernel: c must be at least 2");
    if(b < 4) throw error("multinomial_kernel: b must be at least 4");
  }

  int dim() const override { return n_ * (c_ - 1); }
  int block_size() const override { return c_ - 1; }
  int nodes() const { return b_; }

  double value(vec const &t) const override {
    double out{};
    int const m = c_ - 1;
    for(int i = 0; i < n_; ++i)
      out += multinomial_log_prob(t.segment(i * m, m), b_);
    return out;
  }

  double derivs(vec const &t, vec &d1, std::vector<double> *d2) const override {
    int const m = c_ - 1;
    d1.resize(t.size());
    if(d2) d2->assign(static_cast<std::size_t>(n_) * m * m, 0);
    double out{};
    vec g;
    mat h;
    for(int i = 0; i < n_; ++i){
      out += multinomial_log_prob(t.segment(i * m, m), b_, &g, d2 ? &h : nullptr);
      d1.segment(i * m, m) = g;
      if(d2)
        std::copy(h.data(), h.data() + m * m, d2->data() + i * m * m);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// built likelihoods

/// model parameters; see the builders for the layout of beta and extra
struct model_params {
  vec beta;
  mat sigma;
  vec extra;
};

/// derivatives of log P wrt the quantities of the CDF representation
struct skew_gradient {
  vec d_v2, d_lower;
  mat d_xi22;
};

namespace detail {

/**
 * Family specific chain rules. fixed parameters are beta followed by extra.
 */
class family_terms {
public:
  virtual ~family_terms() = default;
  virtual Eigen::Index n_fixed() const = 0;
  /**
   * Gradient of log c + log P wrt the fixed parameters and Sigma given the
   * derivatives of log P. g is null when there is no CDF factor.
   */
  virtual void cdf_chain(skew_gradient const *g, vec &d_fixed,
                         mat &d_sigma) const = 0;
  /**
   * Gradient wrt the fixed parameters of the log complete data likelihood
   * given the random effect u.
   */
  virtual vec fixed_score(vec const &u) const = 0;
};

} // namespace detail

struct built_likelihood {
  family fam;
  double log_c;
  skew_params skew;
  gwi_problem gwi;
  mat sigma;
  std::shared_ptr<detail::family_terms const> terms;
};

namespace detail {

inline void check_sigma(mat const &sigma, Eigen::Index k){
  if(sigma.rows() != k || sigma.cols() != k)
    throw dimension_mismatch("sigma has the wrong dimension");
  cholesky(sigma); // throws if not positive definite
}

class binomial_terms final : public family_terms {
  mat x_aug, z_aug, x, z;
  std::vector<int> y, m;
  vec beta;

public:
  binomial_terms(mat x_aug, mat z_aug, mat x, mat z, std::vector<int> y,
                 std::vector<int> m, vec beta)
    : x_aug{std::move(x_aug)}, z_aug{std::move(z_aug)}, x{std::move(x)},
      z{std::move(z)}, y{std::move(y)}, m{std::move(m)},
      beta{std::move(beta)} { }

  Eigen::Index n_fixed() const override { return beta.size(); }

  void cdf_chain(skew_gradient const *g, vec &d_fixed,
                 mat &d_sigma) const override {
    d_fixed = x_aug.transpose() * g->d_v2;
    d_sigma = z_aug.transpose() * g->d_xi22 * z_aug;
  }

  vec fixed_score(vec const &u) const override {
    vec const t = x * beta + z * u;
    vec d(t.size());
    for(Eigen::Index i = 0; i < t.size(); ++i){
      d[i] = 0;
      if(y[i] > 0) d[i] += y[i] * inv_mills(t[i]);
      if(m[i] > y[i]) d[i] -= (m[i] - y[i]) * inv_mills(-t[i]);
    }
    return x.transpose() * d;
  }
};

} // namespace detail

/**
 * Binomial cluster. beta has one entry per column of x. The CDF
 * representation repeats each row once per trial with the sign flipped for
 * failures; the GWI integrand uses the counts directly.
 */
inline built_likelihood build_binomial(binomial_cluster const &cl,
                                       vec const &beta, mat const &sigma){
  Eigen::Index const n = cl.x.rows(), k = cl.z.cols();
  if(static_cast<Eigen::Index>(cl.y.size()) != n ||
       static_cast<Eigen::Index>(cl.m.size()) != n || cl.z.rows() != n ||
       beta.size() != cl.x.cols())
    throw dimension_mismatch("build_binomial: dimension mismatch");
  detail::check_sigma(sigma, k);

  double log_c{};
  Eigen::Index k2{};
  for(Eigen::Index i = 0; i < n; ++i){
    if(cl.m[i] < 1 || cl.y[i] < 0 || cl.y[i] > cl.m[i])
      throw error("build_binomial: invalid counts");
    log_c += log_choose(cl.m[i], cl.y[i]);
    k2 += cl.m[i];
  }

  mat x_aug(k2, cl.x.cols()), z_aug(k2, k);
  Eigen::Index r{};
  for(Eigen::Index i = 0; i < n; ++i)
    for(int j = 0; j < cl.m[i]; ++j, ++r){
      double const sgn = j < cl.y[i] ? 1 : -1;
      x_aug.row(r) = sgn * cl.x.row(i);
      z_aug.row(r) = sgn * cl.z.row(i);
    }

  mat const zs = z_aug * sigma;
  mat xi22 = mat::Identity(k2, k2) + zs * z_aug.transpose();
  symmetrize(xi22);
  skew_params skew(vec::Zero(k), vec::Zero(k2), sigma, -zs, xi22,
                   x_aug * beta);
  gwi_problem gwi(vec::Zero(k), sigma,
                  std::make_shared<linear_predictor_integrand>
                    (cl.x * beta, cl.z,
                     std::make_shared<probit_count_kernel>(cl.y, cl.m)));
  auto terms = std::make_shared<detail::binomial_terms>
    (x_aug, z_aug, cl.x, cl.z, cl.y, cl.m, beta);
  return {family::binomial, log_c, std::move(skew), std::move(gwi), sigma,
          std::move(terms)};
}

namespace detail {

class ordered_terms final : public family_terms {
  mat x, z;
  std::vector<int> y;
  vec beta;
  cutpoints gamma;

public:
  ordered_terms(mat x, mat z, std::vector<int> y, vec beta, cutpoints gamma)
    : x{std::move(x)}, z{std::move(z)}, y{std::move(y)}, beta{std::move(beta)},
      gamma{std::move(gamma)} { }

  Eigen::Index n_fixed() const override {
    return beta.size() + gamma.free().size();
  }

  void add_cutpoint_grad(vec &d_fixed, int k, double v) const {
    // gamma_k for k = 2, ..., c - 1 is free parameter k - 2
    if(k >= 2 && k <= gamma.categories() - 1)
      d_fixed[beta.size() + k - 2] += v;
  }

  void cdf_chain(skew_gradient const *g, vec &d_fixed,
                 mat &d_sigma) const override {
    d_fixed = vec::Zero(n_fixed());
    d_fixed.head(beta.size()) = -x.transpose() * (g->d_v2 + g->d_lower);
    for(std::size_t i = 0; i < y.size(); ++i){
      add_cutpoint_grad(d_fixed, y[i], g->d_v2[i]);
      add_cutpoint_grad(d_fixed, y[i] - 1, g->d_lower[i]);
    }
    d_sigma = z.transpose() * g->d_xi22 * z;
  }

  vec fixed_score(vec const &u) const override {
    vec out = vec::Zero(n_fixed());
    vec const t = x * beta + z * u;
    vec d_t(t.size());
    for(Eigen::Index i = 0; i < t.size(); ++i){
      double const hi = gamma(y[i]) - t[i], lo = gamma(y[i] - 1) - t[i];
      double const lp = log_pnorm_interval(lo, hi);
      double const r_hi = hi == inf ? 0 : std::exp(log_dnorm(hi) - lp),
                   r_lo = lo == -inf ? 0 : std::exp(log_dnorm(lo) - lp);
      d_t[i] = r_lo - r_hi;
      add_cutpoint_grad(out, y[i], r_hi);
      add_cutpoint_grad(out, y[i] - 1, -r_lo);
    }
    out.head(beta.size()) = x.transpose() * d_t;
    return out;
  }
};

} // namespace detail

/**
 * Ordinal cluster. The fixed parameters are beta followed by the free
 * cutpoints gamma_2, ..., gamma_(c - 1).
 */
inline built_likelihood build_ordered(ordered_cluster const &cl,
                                      vec const &beta, cutpoints const &gamma,
                                      mat const &sigma){
  Eigen::Index const n = cl.x.rows(), k = cl.z.cols();
  if(static_cast<Eigen::Index>(cl.y.size()) != n || cl.z.rows() != n ||
       beta.size() != cl.x.cols())
    throw dimension_mismatch("build_ordered: dimension mismatch");
  if(gamma.categories() != cl.c)
    throw dimension_mismatch("build_ordered: wrong number of cutpoints");
  detail::check_sigma(sigma, k);
  for(int yi : cl.y)
    if(yi < 1 || yi > cl.c)
      throw error("build_ordered: outcome out of range");

  vec const xb = cl.x * beta;
  vec lower(n), upper(n), eta(n), width(n);
  mat zg(n, k);
  for(Eigen::Index i = 0; i < n; ++i){
    lower[i] = gamma(cl.y[i] - 1) - xb[i];
    upper[i] = gamma(cl.y[i]) - xb[i];
    if(cl.y[i] == cl.c){
      // P(latent > gamma_(c - 1)) = Phi(x beta + z u - gamma_(c - 1))
      eta[i] = -lower[i];
      zg.row(i) = cl.z.row(i);
      width[i] = inf;
    } else {
      eta[i] = upper[i];
      zg.row(i) = -cl.z.row(i);
      width[i] = upper[i] - lower[i];
    }
  }

  mat const zs = cl.z * sigma;
  mat xi22 = mat::Identity(n, n) + zs * cl.z.transpose();
  symmetrize(xi22);
  skew_params skew(vec::Zero(k), vec::Zero(n), sigma, zs, xi22, upper, lower);
  gwi_problem gwi(vec::Zero(k), sigma,
                  std::make_shared<linear_predictor_integrand>
                    (eta, zg, std::make_shared<probit_interval_kernel>(width)));
  auto terms = std::make_shared<detail::ordered_terms>
    (cl.x, cl.z, cl.y, beta, gamma);
  return {family::ordered, 0, std::move(skew), std::move(gwi), sigma,
          std::move(terms)};
}

namespace detail {

class multinomial_terms final : public family_terms {
  mat x, kmat;
  std::vector<int> y;
  int c;
  vec eta_fixed;
  std::shared_ptr<multinomial_kernel const> kernel;

  /// maps a gradient wrt the stacked eta to the coefficients
  vec map_eta(vec const &d_eta) const {
    Eigen::Index const p = x.cols();
    vec out = vec::Zero(c * p);
    Eigen::Index r{};
    for(std::size_t i = 0; i < y.size(); ++i){
      int const k = y[i] - 1;
      for(int j = 0; j < c; ++j){
        if(j == k) continue;
        out.segment(k * p, p) += d_eta[r] * x.row(i).transpose();
        out.segment(j * p, p) -= d_eta[r] * x.row(i).transpose();
        ++r;
      }
    }
    return out;
  }

public:
  multinomial_terms(mat x, mat kmat, std::vector<int> y, int c, vec eta_fixed,
                    std::shared_ptr<multinomial_kernel const> kernel)
    : x{std::move(x)}, kmat{std::move(kmat)}, y{std::move(y)}, c{c},
      eta_fixed{std::move(eta_fixed)}, kernel{std::move(kernel)} { }

  Eigen::Index n_fixed() const override { return c * x.cols(); }

  void cdf_chain(skew_gradient const *g, vec &d_fixed,
                 mat &d_sigma) const override {
    d_fixed = map_eta(g->d_v2);
    d_sigma = kmat.transpose() * g->d_xi22 * kmat;
  }

  vec fixed_score(vec const &u) const override {
    vec d1;
    kernel->derivs(eta_fixed + kmat * u, d1, nullptr);
    return map_eta(d1);
  }
};

} // namespace detail

/**
 * Multinomial cluster. beta stacks the c coefficient vectors beta_1, ...,
 * beta_c each of length p (category major). Individual i with y_i = k
 * contributes the c - 1 contrasts (beta_k - beta_j)^T x_i and
 * (z_ik - z_ij)^T u, j != k, whose errors have covariance I + 1 1^T.
 */
inline built_likelihood build_multinomial(multinomial_cluster const &cl,
                                          vec const &beta, mat const &sigma,
                                          int inner_nodes = 8){
  Eigen::Index const n = cl.x.rows(), p = cl.x.cols();
  int const c = cl.c;
  if(c < 2)
    throw error("build_multinomial: c must be at least 2");
  if(static_cast<Eigen::Index>(cl.y.size()) != n ||
       static_cast<Eigen::Index>(cl.z.size()) != n || beta.size() != c * p)
    throw dimension_mismatch("build_multinomial: dimension mismatch");
  Eigen::Index const k = n > 0 ? cl.z[0].cols() : sigma.rows();
  detail::check_sigma(sigma, k);

  Eigen::Index const k2 = n * (c - 1);
  vec eta(k2);
  mat kmat(k2, k);
  Eigen::Index r{};
  for(Eigen::Index i = 0; i < n; ++i){
    int const yi = cl.y[i];
    if(yi < 1 || yi > c)
      throw error("build_multinomial: outcome out of range");
    if(cl.z[i].rows() != c || cl.z[i].cols() != k)
      throw dimension_mismatch("build_multinomial: z has the wrong dimension");
    int const kk = yi - 1;
    for(int j = 0; j < c; ++j){
      if(j == kk) continue;
      eta[r] = (beta.segment(kk * p, p) - beta.segment(j * p, p))
        .dot(cl.x.row(i));
      kmat.row(r) = cl.z[i].row(kk) - cl.z[i].row(j);
      ++r;
    }
  }

  mat omega = mat::Zero(k2, k2);
  for(Eigen::Index i = 0; i < n; ++i){
    omega.block(i * (c - 1), i * (c - 1), c - 1, c - 1).setOnes();
    omega.block(i * (c - 1), i * (c - 1), c - 1, c - 1).diagonal()
      .array() += 1;
  }
  mat const ks = kmat * sigma;
  mat xi22 = omega + ks * kmat.transpose();
  symmetrize(xi22);
  skew_params skew(vec::Zero(k), vec::Zero(k2), sigma, -ks, xi22, eta);
  auto kernel = std::make_shared<multinomial_kernel>
    (static_cast<int>(n), c, inner_nodes);
  gwi_problem gwi(vec::Zero(k), sigma,
                  std::make_shared<linear_predictor_integrand>(eta, kmat, kernel));
  auto terms = std::make_shared<detail::multinomial_terms>
    (cl.x, kmat, cl.y, c, eta, kernel);
  return {family::multinomial, 0, std::move(skew), std::move(gwi), sigma,
          std::move(terms)};
}

namespace detail {

class gsm_terms final : public family_terms {
  mat x_obs, dx_obs, x_cens, m, nc, sigma, w_inv, p_mat;
  vec beta, alpha;

public:
  gsm_terms(mat x_obs, mat dx_obs, mat x_cens, mat m, mat nc, mat sigma,
            mat w_inv, vec beta, vec alpha)
    : x_obs{std::move(x_obs)}, dx_obs{std::move(dx_obs)},
      x_cens{std::move(x_cens)}, m{std::move(m)}, nc{std::move(nc)},
      sigma{std::move(sigma)}, w_inv{std::move(w_inv)}, beta{std::move(beta)},
      alpha{std::move(alpha)} {
    // P = I - Sigma M^T W^-1 M = H^-1 Sigma^-1
    p_mat = mat::Identity(this->sigma.rows(), this->sigma.rows())
      - this->sigma * this->m.transpose() * this->w_inv * this->m;
  }

  Eigen::Index n_fixed() const override { return beta.size(); }

  void cdf_chain(skew_gradient const *g, vec &d_fixed,
                 mat &d_sigma) const override {
    // log k terms
    d_fixed = x_obs.transpose() * alpha;
    for(Eigen::Index i = 0; i < dx_obs.rows(); ++i)
      d_fixed += dx_obs.row(i).transpose() / dx_obs.row(i).dot(beta);
    d_sigma = .5 * m.transpose() * (alpha * alpha.transpose() - w_inv) * m;
    if(!g) return;

    // v2 = -X^c beta - N Sigma M^T W^-1 r0 and Xi22 = I + N H^-1 N^T
    vec const nb = nc.transpose() * g->d_v2;
    d_fixed += -x_cens.transpose() * g->d_v2
      + x_obs.transpose() * (w_inv * (m * (sigma * nb)));
    mat const xm = m.transpose() * alpha * nb.transpose() * p_mat;
    d_sigma += -.5 * (xm + xm.transpose())
      + p_mat.transpose() * nc.transpose() * g->d_xi22 * nc * p_mat;
  }

  vec fixed_score(vec const &u) const override {
    vec out = vec::Zero(beta.size());
    for(Eigen::Index i = 0; i < dx_obs.rows(); ++i)
      out += dx_obs.row(i).transpose() / dx_obs.row(i).dot(beta);
    vec const r = -x_obs * beta - m * u;
    out += x_obs.transpose() * r;
    vec const tc = -x_cens * beta - nc * u;
    vec lam(tc.size());
    for(Eigen::Index i = 0; i < tc.size(); ++i)
      lam[i] = inv_mills(tc[i]);
    out -= x_cens.transpose() * lam;
    return out;
  }
};

} // namespace detail

/**
 * Probit survival cluster. The observed events are integrated out
 * analytically which leaves a Gaussian weight N(h, H^-1) with
 * H = Z_o^T Z_o + Sigma^-1 and the censored terms
 * Phi^(n_c)(-X_c beta - Z_c u). log_c is the log of the remaining factor
 * prod_j x_j'(t_j)^T beta phi^(n_o)(-X_o beta; 0, I + Z_o Sigma Z_o^T).
 */
inline built_likelihood build_gsm(gsm_cluster const &cl, vec const &beta,
                                  mat const &sigma){
  Eigen::Index const n = cl.t.size(), k = cl.z.cols(), p = beta.size();
  if(static_cast<Eigen::Index>(cl.event.size()) != n || cl.x.rows() != n ||
       cl.dx.rows() != n || cl.z.rows() != n || cl.x.cols() != p ||
       cl.dx.cols() != p)
    throw dimension_mismatch("build_gsm: dimension mismatch");
  detail::check_sigma(sigma, k);

  std::vector<Eigen::Index> obs, cens;
  for(Eigen::Index i = 0; i < n; ++i)
    (cl.event[i] ? obs : cens).push_back(i);
  Eigen::Index const n_o = obs.size(), n_c = cens.size();
  mat x_o(n_o, p), dx_o(n_o, p), m(n_o, k), x_c(n_c, p), nc(n_c, k);
  for(Eigen::Index j = 0; j < n_o; ++j){
    x_o.row(j) = cl.x.row(obs[j]);
    dx_o.row(j) = cl.dx.row(obs[j]);
    m.row(j) = cl.z.row(obs[j]);
  }
  for(Eigen::Index j = 0; j < n_c; ++j){
    x_c.row(j) = cl.x.row(cens[j]);
    nc.row(j) = cl.z.row(cens[j]);
  }

  double log_c{};
  for(Eigen::Index j = 0; j < n_o; ++j){
    double const d = dx_o.row(j).dot(beta);
    if(!(d > 0))
      throw monotonicity_violation
        ("build_gsm: the survival function is not decreasing at an event time");
    log_c += std::log(d);
  }

  vec const r0 = -x_o * beta;
  mat w = mat::Identity(n_o, n_o) + m * sigma * m.transpose();
  symmetrize(w);
  mat w_inv(n_o, n_o);
  vec alpha(n_o);
  if(n_o > 0){
    mat const w_chol = cholesky(w);
    w_inv = chol_inverse(w_chol);
    alpha = w_inv * r0;
    log_c += -.5 * (n_o * log_2pi + log_det_chol(w_chol) + r0.dot(alpha));
  }

  // H^-1 = Sigma - Sigma M^T W^-1 M Sigma and h = Sigma M^T W^-1 r0
  mat h_inv = sigma;
  vec h_mean = vec::Zero(k);
  if(n_o > 0){
    mat const sm = sigma * m.transpose();
    h_inv -= sm * w_inv * sm.transpose();
    h_mean = sm * alpha;
  }
  symmetrize(h_inv);

  mat const nh = nc * h_inv;
  mat xi22 = mat::Identity(n_c, n_c) + nh * nc.transpose();
  symmetrize(xi22);
  vec const v2 = -x_c * beta - nc * h_mean;
  skew_params skew(h_mean, vec::Zero(n_c), h_inv, nh, xi22, v2);
  gwi_problem gwi(h_mean, h_inv,
                  std::make_shared<linear_predictor_integrand>
                    (-x_c * beta, -nc,
                     probit_interval_kernel::one_sided(static_cast<int>(n_c))));
  auto terms = std::make_shared<detail::gsm_terms>
    (x_o, dx_o, x_c, m, nc, sigma, w_inv, beta, alpha);
  return {family::gsm, log_c, std::move(skew), std::move(gwi), sigma,
          std::move(terms)};
}

// ---------------------------------------------------------------------------
// evaluation

enum class engine { laplace, cdf, spherical_radial, importance, rqmc, ghq, aghq };

inline char const * to_string(engine e){
  switch(e){
  case engine::laplace: return "laplace";
  case engine::cdf: return "cdf";
  case engine::spherical_radial: return "spherical_radial";
  case engine::importance: return "importance";
  case engine::rqmc: return "rqmc";
  case engine::ghq: return "ghq";
  case engine::aghq: return "aghq";
  }
  return "unknown";
}

inline engine parse_engine(std::string const &s){
  for(engine e : {engine::laplace, engine::cdf, engine::spherical_radial,
                  engine::importance, engine::rqmc, engine::ghq, engine::aghq})
    if(s == to_string(e)) return e;
  if(s == "sr" || s == "adaptive_sr") return engine::spherical_radial;
  if(s == "is") return engine::importance;
  throw error("unknown engine '" + s + "'");
}

inline bool is_stochastic(engine e){
  return e == engine::cdf || e == engine::spherical_radial ||
    e == engine::importance || e == engine::rqmc;
}

struct engine_options {
  cdf_options cdf;
  mc_options mc;
  /// nodes per dimension for ghq and aghq
  int nodes{15};
  double node_budget{default_node_budget};
  /// integrate over the linear predictor when it has fewer entries than u
  bool reduce_dimension{true};
};

/// log marginal likelihood estimate; std_error is on the log scale
struct loglik_result {
  double value{};
  double std_error{};
  long long n_evals{};
  double elapsed{};
  approx_status status{approx_status::converged};
  bool reduced{false};
};

inline gwi_problem const & maybe_reduce(built_likelihood const &b,
                                        engine_options const &opts,
                                        std::optional<gwi_problem> &store){
  if(opts.reduce_dimension){
    auto const *lp =
      dynamic_cast<linear_predictor_integrand const*>(&b.gwi.h());
    if(lp && lp->z().rows() < b.gwi.dim() && lp->z().rows() > 0){
      try {
        store.emplace(reduce_gwi_dimension(b.gwi));
        return *store;
      } catch(not_applicable const&) { }
    }
  }
  return b.gwi;
}

/**
 * log marginal likelihood of one cluster with the given engine. The CDF
 * engine uses the skew-normal representation; the others the Gaussian
 * weighted integral.
 */
inline loglik_result log_marginal(built_likelihood const &b, engine e,
                                  engine_options const &opts = {}){
  auto const start = detail::clock::now();
  loglik_result out;
  if(b.skew.k2() == 0){
    out.value = b.log_c;
    out.status = approx_status::exact;
    return out;
  }

  auto from_approx = [&](approx_result const &r){
    out.value = b.log_c + r.log_estimate();
    out.std_error = r.log_std_error();
    out.n_evals = r.n_evals;
    out.status = r.status;
  };

  if(e == engine::cdf){
    auto const form = marginal_as_cdf(b.skew);
    from_approx(mvn_interval(form.rect, form.mean, form.cov, opts.cdf));
    out.elapsed = detail::seconds_since(start);
    return out;
  }

  std::optional<gwi_problem> store;
  gwi_problem const &p = maybe_reduce(b, opts, store);
  out.reduced = store.has_value();
  switch(e){
  case engine::laplace: {
    auto const mode = find_mode(p);
    out.value = b.log_c + laplace(p, mode);
    out.n_evals = mode.iterations;
    break;
  }
  case engine::ghq:
  case engine::aghq:
    out.value = b.log_c + (e == engine::ghq
      ? ghq(p, opts.nodes, opts.node_budget)
      : aghq(p, opts.nodes, nullptr, opts.node_budget));
    out.n_evals = static_cast<long long>
      (std::pow(static_cast<double>(opts.nodes), p.dim()));
    break;
  case engine::spherical_radial:
    from_approx(spherical_radial(p, opts.mc));
    break;
  case engine::importance:
    from_approx(importance_sample(p, opts.mc));
    break;
  case engine::rqmc:
    from_approx(rqmc(p, opts.mc));
    break;
  case engine::cdf:
    break;
  }
  out.elapsed = detail::seconds_since(start);
  return out;
}

struct loglik_gradient_result {
  loglik_result loglik;
  /// beta followed by the family specific extra parameters
  vec d_fixed;
  /// symmetric; d loglik = sum_ij d_sigma_ij d Sigma_ij
  mat d_sigma;
};

namespace detail {

/// self-normalized weighted means of posterior quantities in the log domain
class posterior_moments {
  double ref{-inf}, s0{};
  vec s1, sf;
  mat s2;
  family_terms const &terms;

public:
  posterior_moments(Eigen::Index k, family_terms const &terms)
    : s1{vec::Zero(k)}, sf{vec::Zero(terms.n_fixed())}, s2{mat::Zero(k, k)},
      terms{terms} { }

  void add(vec const &u, double log_w, double sign){
    if(log_w == -inf || !std::isfinite(log_w)) return;
    if(ref == -inf) ref = log_w;
    else if(log_w > ref + 20){
      double const f = std::exp(ref - log_w);
      s0 *= f;
      s1 *= f;
      s2 *= f;
      sf *= f;
      ref = log_w;
    }
    double const w = sign * std::exp(log_w - ref);
    s0 += w;
    s1 += w * u;
    s2.noalias() += w * u * u.transpose();
    sf += w * terms.fixed_score(u);
  }

  vec mean() const { return s1 / s0; }
  mat second_moment() const { return s2 / s0; }
  vec fixed() const { return sf / s0; }
};

} // namespace detail

/**
 * Gradient of the log marginal likelihood wrt the fixed parameters and
 * Sigma. The CDF engine differentiates the estimator itself through the
 * skew-normal mapping, so it is exact for the random numbers in use. The
 * other engines estimate the expectations in the identity
 * d log L = E[d log p(y, u) | y] from the points they evaluate.
 */
inline loglik_gradient_result loglik_gradient(built_likelihood const &b,
                                              engine e,
                                              engine_options const &opts = {}){
  auto const start = detail::clock::now();
  loglik_gradient_result out;
  auto &ll = out.loglik;
  auto const &terms = *b.terms;

  if(b.skew.k2() == 0){
    ll.value = b.log_c;
    ll.status = approx_status::exact;
    terms.cdf_chain(nullptr, out.d_fixed, out.d_sigma);
    return out;
  }

  if(e == engine::cdf){
    auto const form = marginal_as_cdf(b.skew);
    auto const res = mvn_rect_grad(form.rect, form.mean, form.cov, opts.cdf);
    double const prob = res.prob.estimate;
    ll.value = b.log_c + std::log(prob);
    ll.std_error = res.prob.log_std_error();
    ll.n_evals = res.prob.n_evals;
    ll.status = res.prob.status;
    skew_gradient g;
    if(b.skew.lower()){
      g.d_v2 = res.d_upper / prob;
      g.d_lower = res.d_lower / prob;
    } else {
      g.d_v2 = -res.d_mu / prob;
      g.d_lower = vec::Zero(b.skew.k2());
    }
    g.d_xi22 = res.d_sigma / prob;
    terms.cdf_chain(&g, out.d_fixed, out.d_sigma);
    ll.elapsed = detail::seconds_since(start);
    return out;
  }

  if(e == engine::laplace)
    throw not_applicable("loglik_gradient: not available for the Laplace approximation");

  gwi_problem const &p = b.gwi;
  Eigen::Index const k = p.dim();
  // GSM clusters integrate u ~ N(h, H^-1) with the same posterior
  detail::posterior_moments mom(k, terms);
  point_observer const obs = [&](vec const &u, double lw, double sign){
    mom.add(u, lw, sign);
  };

  auto from_approx = [&](approx_result const &r){
    ll.value = b.log_c + r.log_estimate();
    ll.std_error = r.log_std_error();
    ll.n_evals = r.n_evals;
    ll.status = r.status;
  };
  switch(e){
  case engine::spherical_radial:
    from_approx(spherical_radial(p, opts.mc, nullptr, &obs));
    break;
  case engine::importance:
    from_approx(importance_sample(p, opts.mc, nullptr, &obs));
    break;
  case engine::rqmc:
    from_approx(rqmc(p, opts.mc, nullptr, &obs));
    break;
  case engine::ghq:
    ll.value = b.log_c + ghq(p, opts.nodes, opts.node_budget, &obs);
    break;
  case engine::aghq:
    ll.value = b.log_c + aghq(p, opts.nodes, nullptr, opts.node_budget, &obs);
    break;
  default:
    break;
  }

  mat const s_inv = chol_inverse(cholesky(b.sigma));
  out.d_sigma = .5 * (s_inv * mom.second_moment() * s_inv - s_inv);
  symmetrize(out.d_sigma);
  out.d_fixed = mom.fixed();
  ll.elapsed = detail::seconds_since(start);
  return out;
}

} // namespace pmlm
