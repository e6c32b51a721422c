#include <gtest/gtest.h>
#include <pmlm/skewlink.hpp>
#include <pmlm/random.hpp>

using namespace pmlm;

namespace {

/// parameters from a random joint covariance of (V1, V2)
skew_params random_skew(rng &gen, int k1, int k2, bool zero_cross = false,
                        std::optional<vec> lower = std::nullopt){
  int const k = k1 + k2;
  mat const joint = gen.wishart(mat::Identity(k, k) / k, k + 3);
  mat xi21 = joint.bottomLeftCorner(k2, k1);
  if(zero_cross) xi21.setZero();
  return skew_params(gen.normal(k1) * .3, gen.normal(k2) * .3,
                     joint.topLeftCorner(k1, k1), xi21,
                     joint.bottomRightCorner(k2, k2), gen.normal(k2) * .5 + vec::Constant(k2, .3),
                     std::move(lower));
}

cdf_options tight(){
  cdf_options out;
  out.rel_tol = 1e-6;
  return out;
}

} // namespace

TEST(conditional_cdf, no_dependence){
  rng gen(1);
  auto const sp = random_skew(gen, 2, 3, true);
  double const expect = mvn_cdf(sp.v2(), sp.xi2(), sp.xi22(), tight()).estimate;
  for(int rep = 0; rep < 3; ++rep){
    vec const v1 = gen.normal(2);
    EXPECT_NEAR(conditional_cdf(sp, v1, tight()), expect, 1e-5 * expect);
  }
}

TEST(conditional_cdf, univariate_conditional){
  rng gen(2);
  auto const sp = random_skew(gen, 3, 1);
  vec const v1 = gen.normal(3);
  // the conditional moments from the joint covariance
  mat const s11_inv = sp.xi11().inverse();
  double const m = sp.xi2()[0] + (sp.xi21() * s11_inv * (v1 - sp.xi1()))(0),
               v = sp.xi22()(0, 0) -
                 (sp.xi21() * s11_inv * sp.xi21().transpose())(0, 0);
  EXPECT_NEAR(conditional_cdf(sp, v1), pnorm((sp.v2()[0] - m) / std::sqrt(v)),
              1e-13);
}

TEST(conditional_cdf, matches_mc){
  rng gen(3);
  auto const sp = random_skew(gen, 2, 2);
  vec const v1 = gen.normal(2);
  double const est = conditional_cdf(sp, v1, tight());

  // draw (V1, V2) jointly and keep V2 - A V1 which is independent of V1
  mat joint(4, 4);
  joint << sp.xi11(), sp.xi21().transpose(), sp.xi21(), sp.xi22();
  mat const l = cholesky(joint);
  vec mean(4);
  mean << sp.xi1(), sp.xi2();
  long long const n = 2000000;
  long long hits{};
  for(long long i = 0; i < n; ++i){
    vec const x = mean + l * gen.normal(4);
    vec const v2 = x.tail(2) + sp.a() * (v1 - x.head(2));
    hits += (v2.array() <= sp.v2().array()).all();
  }
  double const p = static_cast<double>(hits) / n;
  EXPECT_NEAR(est, p, 4 * std::sqrt(p * (1 - p) / n));
}

TEST(marginal_as_cdf, matches_gwi_form){
  rng gen(4);
  auto const sp = random_skew(gen, 3, 4);
  auto const form = marginal_as_cdf(sp);
  auto const c = mvn_interval(form.rect, form.mean, form.cov, tight());

  cdf_options inner;
  inner.rel_tol = 1e-4;
  auto const p = marginal_as_gwi(sp, inner);
  mc_options mc;
  mc.adaptive = false;
  mc.rel_tol = 2e-3;
  auto const g = spherical_radial(p, mc);
  EXPECT_NEAR(c.log_estimate(), g.log_estimate(),
              4 * std::hypot(c.log_std_error(), g.log_std_error()) + 1e-4);
}

TEST(marginal_as_gwi, constant_when_independent){
  rng gen(5);
  auto const sp = random_skew(gen, 2, 2, true);
  double const expect =
    std::log(mvn_cdf(sp.v2(), sp.xi2(), sp.xi22(), tight()).estimate);
  // the conditional covariance is not diagonal so only engines which do not
  // need derivatives apply
  auto const p = marginal_as_gwi(sp, tight());
  EXPECT_FALSE(p.h().has_derivatives());
  EXPECT_THROW(laplace(p), error);
  EXPECT_NEAR(ghq(p, 3), expect, 1e-5);
  mc_options mc;
  mc.adaptive = false;
  EXPECT_NEAR(spherical_radial(p, mc).log_estimate(), expect, 1e-5);
}

TEST(marginal_as_gwi, univariate_convolution){
  // E Phi(a + b U), U ~ N(0, s^2)
  double const a = .4, b = -1.3, s2 = .8;
  skew_params const sp(vec::Zero(1), vec::Zero(1), mat::Constant(1, 1, s2),
                       mat::Constant(1, 1, -b * s2),
                       mat::Constant(1, 1, 1 + b * b * s2), vec{{a}});
  double const expect = std::log(pnorm(a / std::sqrt(1 + b * b * s2)));
  EXPECT_NEAR(aghq(marginal_as_gwi(sp), 30), expect, 1e-10);
  auto const form = marginal_as_cdf(sp);
  EXPECT_NEAR(std::log(mvn_interval(form.rect, form.mean, form.cov).estimate),
              expect, 1e-12);
}

TEST(marginal_as_gwi, interval_bounds){
  rng gen(6);
  auto const base = random_skew(gen, 2, 3);
  vec const lower = base.v2() - vec{{1, inf, .7}};
  skew_params const sp(base.xi1(), base.xi2(), base.xi11(), base.xi21(),
                       base.xi22(), base.v2(), lower);
  auto const form = marginal_as_cdf(sp);
  auto const c = mvn_interval(form.rect, form.mean, form.cov, tight());
  mc_options mc;
  mc.adaptive = false;
  mc.rel_tol = 1e-3;
  auto const g = rqmc(marginal_as_gwi(sp, tight()), mc);
  EXPECT_NEAR(c.log_estimate(), g.log_estimate(),
              4 * std::hypot(c.log_std_error(), g.log_std_error()) + 1e-5);
}

TEST(marginal_as_gwi, derivatives_match_finite_differences){
  rng gen(7);
  // diagonal conditional covariance through a single V2 per row
  mat const xi11 = gen.wishart(mat::Identity(2, 2) / 2, 4);
  mat const a = gen.normal(6).reshaped(3, 2);
  mat const xi21 = a * xi11, cond = vec{{1, .5, 2}}.asDiagonal();
  mat const xi22 = a * xi11 * a.transpose() + cond;
  skew_params const sp(gen.normal(2), gen.normal(3), xi11, xi21, xi22,
                       gen.normal(3), vec{{-1, -inf, -2}});
  ASSERT_TRUE(sp.cond_diagonal());
  auto const p = marginal_as_gwi(sp);
  ASSERT_TRUE(p.h().has_derivatives());

  vec const u = gen.normal(2);
  vec grad;
  mat hess;
  p.h().log_derivs(u, grad, &hess);
  double const h = 1e-5;
  for(int i = 0; i < 2; ++i){
    vec up = u, um = u;
    up[i] += h;
    um[i] -= h;
    double const fd = (p.h().log_value(up) - p.h().log_value(um)) / (2 * h);
    EXPECT_NEAR(grad[i], fd, 1e-5 * std::max(1., std::abs(fd)));
    vec gp, gm;
    p.h().log_derivs(up, gp, nullptr);
    p.h().log_derivs(um, gm, nullptr);
    vec const fd2 = (gp - gm) / (2 * h);
    for(int j = 0; j < 2; ++j)
      EXPECT_NEAR(hess(j, i), fd2[j], 1e-5 * std::max(1., std::abs(fd2[j])));
  }
}

TEST(posterior_density, no_dependence_is_prior){
  rng gen(8);
  auto const sp = random_skew(gen, 2, 2, true);
  vec const v1 = gen.normal(2);
  mat const s = cholesky(sp.xi11());
  vec const r = s.triangularView<Eigen::Lower>().solve(v1 - sp.xi1());
  double const prior = std::exp(-.5 * (2 * log_2pi + log_det_chol(s) +
                                       r.squaredNorm()));
  EXPECT_NEAR(posterior_density(sp, v1, tight()), prior, 1e-5 * prior);
}

TEST(posterior_density, integrates_to_one){
  rng gen(9);
  auto const sp = random_skew(gen, 1, 3);
  int const n = 400;
  double const h = 20. / n;
  double sum{};
  for(int i = 0; i <= n; ++i){
    double const x = -10 + i * h;
    double const f = posterior_density(sp, vec{{x}});
    sum += (i == 0 || i == n ? .5 : 1) * f;
  }
  EXPECT_NEAR(sum * h, 1, 1e-3);
}

TEST(posterior_density, reflection){
  skew_params const a(vec::Zero(1), vec::Zero(1), mat::Constant(1, 1, 1),
                      mat::Constant(1, 1, .6), mat::Constant(1, 1, 1.5),
                      vec{{.7}});
  skew_params const b(vec::Zero(1), vec::Zero(1), mat::Constant(1, 1, 1),
                      mat::Constant(1, 1, -.6), mat::Constant(1, 1, 1.5),
                      vec{{.7}});
  for(double x : {-2., -.5, .3, 1.7})
    EXPECT_NEAR(posterior_density(a, vec{{x}}), posterior_density(b, vec{{-x}}),
                1e-14);
}

TEST(skew_params, dimension_checks){
  EXPECT_THROW(skew_params(vec::Zero(2), vec::Zero(1), mat::Identity(2, 2),
                           mat::Zero(2, 2), mat::Identity(1, 1), vec::Zero(1)),
               dimension_mismatch);
}
