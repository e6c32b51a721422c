#pragma once

#include "gwi.hpp"
#include "mvn_cdf.hpp"
#include "numeric.hpp"

#include <optional>

namespace pmlm {

/**
 * Parameters of the joint normal vector (V1, V2) with V1 ~ N(xi1, Xi11),
 * V2 ~ N(xi2, Xi22), Cov(V2, V1) = Xi21 together with the upper bound v2
 * and an optional lower bound for V2. The marginal probability
 * P(lower < V2 <= v2) is either a CDF or a Gaussian weighted integral over
 * V1 of the conditional probability.
 */
class skew_params {
  vec xi1_, xi2_;
  mat xi11_, xi21_, xi22_;
  vec v2_;
  std::optional<vec> lower_;
  // cached: A = Xi21 Xi11^-1 and the conditional covariance
  mat a_, cond_cov_;
  bool cond_diagonal_;

public:
  skew_params(vec xi1, vec xi2, mat xi11, mat xi21, mat xi22, vec v2,
              std::optional<vec> lower = std::nullopt)
    : xi1_{std::move(xi1)}, xi2_{std::move(xi2)}, xi11_{std::move(xi11)},
      xi21_{std::move(xi21)}, xi22_{std::move(xi22)}, v2_{std::move(v2)},
      lower_{std::move(lower)} {
    Eigen::Index const k1 = xi1_.size(), k2 = xi2_.size();
    if(xi11_.rows() != k1 || xi11_.cols() != k1 || xi21_.rows() != k2 ||
         xi21_.cols() != k1 || xi22_.rows() != k2 || xi22_.cols() != k2 ||
         v2_.size() != k2 || (lower_ && lower_->size() != k2))
      throw dimension_mismatch("skew_params: dimension mismatch");

    mat const s11 = cholesky_jitter(xi11_);
    a_ = chol_inverse(s11) * xi21_.transpose();
    a_.transposeInPlace();
    cond_cov_ = xi22_ - a_ * xi21_.transpose();
    symmetrize(cond_cov_);
    if(k2 > 0)
      cholesky(cond_cov_); // throws if not positive definite

    double const scale = k2 > 0 ? cond_cov_.diagonal().maxCoeff() : 1;
    cond_diagonal_ = true;
    for(Eigen::Index j = 0; j < k2 && cond_diagonal_; ++j)
      for(Eigen::Index i = 0; i < j; ++i)
        if(std::abs(cond_cov_(i, j)) > 1e-10 * scale){
          cond_diagonal_ = false;
          break;
        }
  }

  Eigen::Index k1() const { return xi1_.size(); }
  Eigen::Index k2() const { return xi2_.size(); }
  vec const & xi1() const { return xi1_; }
  vec const & xi2() const { return xi2_; }
  mat const & xi11() const { return xi11_; }
  mat const & xi21() const { return xi21_; }
  mat const & xi22() const { return xi22_; }
  vec const & v2() const { return v2_; }
  std::optional<vec> const & lower() const { return lower_; }
  mat const & a() const { return a_; }
  mat const & cond_cov() const { return cond_cov_; }
  bool cond_diagonal() const { return cond_diagonal_; }

  /// lower bounds with -inf when there is no lower bound
  vec lower_or_inf() const {
    return lower_ ? *lower_ : vec(vec::Constant(k2(), -inf));
  }
};

/**
 * log P(lower < V2 <= v2 | V1 = v1). Closed form when the conditional
 * covariance is diagonal and mvn_cdf otherwise.
 */
inline double conditional_log_cdf(skew_params const &sp, vec const &v1,
                                  cdf_options const &opts = {}){
  if(v1.size() != sp.k1())
    throw dimension_mismatch("conditional_cdf: dimension mismatch");
  if(sp.k2() == 0) return 0;
  vec const shift = sp.xi2() + sp.a() * (v1 - sp.xi1());
  vec const up = sp.v2() - shift, lo = sp.lower_or_inf() - shift;
  if(sp.cond_diagonal()){
    double out{};
    for(Eigen::Index j = 0; j < sp.k2(); ++j){
      double const sd = std::sqrt(sp.cond_cov()(j, j));
      out += log_pnorm_interval(lo[j] / sd, up[j] / sd);
    }
    return out;
  }
  return std::log(mvn_interval({lo, up}, vec::Zero(sp.k2()), sp.cond_cov(),
                               opts).estimate);
}

inline double conditional_cdf(skew_params const &sp, vec const &v1,
                              cdf_options const &opts = {}){
  return std::exp(conditional_log_cdf(sp, v1, opts));
}

/// rectangle, mean, and covariance of the CDF representation
struct cdf_form {
  hyper_rect rect;
  vec mean;
  mat cov;
};

/**
 * One-sided case: P(V2 <= v2) = P(W <= 0) with W ~ N(xi2 - v2, Xi22).
 * Interval case: P(lower < W <= v2) with W ~ N(xi2, Xi22), which keeps
 * infinite bounds out of the mean.
 */
inline cdf_form marginal_as_cdf(skew_params const &sp){
  Eigen::Index const k2 = sp.k2();
  if(!sp.lower())
    return {hyper_rect::lower_orthant(vec::Zero(k2)), sp.xi2() - sp.v2(),
            sp.xi22()};
  return {{*sp.lower(), sp.v2()}, sp.xi2(), sp.xi22()};
}

/// value only integrand for a non-diagonal conditional covariance
class conditional_cdf_integrand final : public integrand {
  skew_params sp;
  cdf_options opts;

public:
  conditional_cdf_integrand(skew_params sp, cdf_options opts)
    : sp{std::move(sp)}, opts{opts} { }
  int dim() const override { return static_cast<int>(sp.k1()); }
  double log_value(vec const &u) const override {
    return conditional_log_cdf(sp, u, opts);
  }
};

/**
 * The Gaussian weighted integral with weight N(xi1, Xi11) and integrand
 * P(lower < V2 <= v2 | V1 = u). With a diagonal conditional covariance the
 * integrand is a product of univariate probit terms with analytic
 * derivatives. Otherwise each evaluation calls mvn_cdf with the seed in opts.
 */
inline gwi_problem marginal_as_gwi(skew_params const &sp,
                                   cdf_options const &opts = {}){
  Eigen::Index const k2 = sp.k2();
  if(!sp.cond_diagonal())
    return gwi_problem(sp.xi1(), sp.xi11(),
                       std::make_shared<conditional_cdf_integrand>(sp, opts));

  vec eta(k2), width(k2);
  mat z(k2, sp.k1());
  vec const lo = sp.lower_or_inf();
  for(Eigen::Index j = 0; j < k2; ++j){
    double const sd = std::sqrt(sp.cond_cov()(j, j)),
                 centre = sp.xi2()[j] - sp.a().row(j).dot(sp.xi1());
    if(sp.v2()[j] == inf){
      // P(lower < V) written as an upper tail probability of -V
      eta[j] = (centre - lo[j]) / sd;
      z.row(j) = sp.a().row(j) / sd;
      width[j] = inf;
      continue;
    }
    eta[j] = (sp.v2()[j] - centre) / sd;
    z.row(j) = -sp.a().row(j) / sd;
    width[j] = lo[j] == -inf ? inf : (sp.v2()[j] - lo[j]) / sd;
  }
  return gwi_problem(sp.xi1(), sp.xi11(),
                     std::make_shared<linear_predictor_integrand>
                       (eta, z, std::make_shared<probit_interval_kernel>(width)));
}

/**
 * Density of V1 given lower < V2 <= v2: the weight times the conditional
 * probability divided by the marginal probability.
 */
inline double posterior_density(skew_params const &sp, vec const &v1,
                                cdf_options const &opts = {}){
  mat const s11 = cholesky_jitter(sp.xi11());
  vec const r = s11.triangularView<Eigen::Lower>().solve(v1 - sp.xi1());
  double const log_w = -.5 * (static_cast<double>(sp.k1()) * log_2pi +
    log_det_chol(s11) + r.squaredNorm());
  double log_den = 0;
  if(sp.k2() > 0){
    auto const form = marginal_as_cdf(sp);
    log_den = std::log(mvn_interval(form.rect, form.mean, form.cov, opts)
                         .estimate);
  }
  return std::exp(log_w + conditional_log_cdf(sp, v1, opts) - log_den);
}

} // namespace pmlm
