#include <gtest/gtest.h>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <pmlm/models.hpp>
#include <pmlm/random.hpp>

using namespace pmlm;

namespace {

mat random_cov(rng &gen, int k, double scale = 1){
  return gen.wishart(mat::Identity(k, k) * scale / k, k + 2);
}

engine_options precise(std::uint64_t seed = 1){
  engine_options out;
  out.cdf.rel_tol = 1e-5;
  out.cdf.seed = seed;
  out.mc.rel_tol = 1e-4;
  out.mc.seed = seed;
  out.nodes = 20;
  return out;
}

/// fixed sample counts so finite differences use common random numbers
engine_options frozen(long long n, std::uint64_t seed = 1){
  engine_options out;
  out.cdf.rel_tol = 1e-14;
  out.cdf.max_samples = n;
  out.cdf.seed = seed;
  out.mc.rel_tol = 1e-14;
  out.mc.max_samples = n;
  out.mc.seed = seed;
  return out;
}

void expect_equivalent(built_likelihood const &b, engine e,
                       engine_options const &opts){
  auto const c = log_marginal(b, engine::cdf, opts), g = log_marginal(b, e, opts);
  EXPECT_NEAR(c.value, g.value, 4 * std::hypot(c.std_error, g.std_error) + 1e-9)
    << to_string(e);
}

binomial_cluster random_binomial_cluster(rng &gen, int n, int k, int m = 1){
  binomial_cluster cl;
  cl.x.resize(n, 2);
  cl.x.col(0).setOnes();
  for(int i = 0; i < n; ++i) cl.x(i, 1) = gen.normal();
  cl.z.resize(n, k);
  for(auto &v : cl.z.reshaped()) v = gen.normal() / std::sqrt(k);
  cl.m.assign(n, m);
  cl.y.resize(n);
  for(auto &y : cl.y) y = static_cast<int>(gen.uniform_int(m + 1));
  return cl;
}

} // namespace

TEST(build_binomial, single_observation_closed_form){
  for(double s2 : {.2, 1., 3.}){
    binomial_cluster cl;
    cl.x = mat::Constant(1, 1, .7);
    cl.z = mat::Ones(1, 1);
    cl.m = {1};
    cl.y = {1};
    auto const b = build_binomial(cl, vec{{.9}}, mat::Constant(1, 1, s2));
    double const expect = std::log(pnorm(.63 / std::sqrt(1 + s2)));
    EXPECT_NEAR(log_marginal(b, engine::cdf).value, expect, 1e-13);
    EXPECT_NEAR(log_marginal(b, engine::aghq, precise()).value, expect, 1e-9);
  }
}

TEST(build_binomial, log_c_and_mapping){
  rng gen(1);
  auto cl = random_binomial_cluster(gen, 3, 2, 2);
  cl.y = {1, 0, 2};
  vec const beta{{.3, -.4}};
  mat const sigma = random_cov(gen, 2);
  auto const b = build_binomial(cl, beta, sigma);
  EXPECT_NEAR(b.log_c, std::log(2.), 1e-14);

  // one CDF row per trial with the sign flipped for failures
  mat xt(6, 2), zt(6, 2);
  int const sgn[6] = {1, -1, -1, -1, 1, 1};
  int const row[6] = {0, 0, 1, 1, 2, 2};
  for(int r = 0; r < 6; ++r){
    xt.row(r) = sgn[r] * cl.x.row(row[r]);
    zt.row(r) = sgn[r] * cl.z.row(row[r]);
  }
  auto const form = marginal_as_cdf(b.skew);
  mat const cov = mat::Identity(6, 6) + zt * sigma * zt.transpose();
  vec const mean = -xt * beta;

  // compare as multisets of rows since the ordering is an implementation detail
  std::vector<std::pair<double, double>> got, want;
  for(int r = 0; r < 6; ++r){
    got.emplace_back(form.mean[r], form.cov.row(r).sum());
    want.emplace_back(mean[r], cov.row(r).sum());
  }
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  for(int r = 0; r < 6; ++r){
    EXPECT_NEAR(got[r].first, want[r].first, 1e-14);
    EXPECT_NEAR(got[r].second, want[r].second, 1e-14);
  }
  EXPECT_NEAR(form.cov.trace(), cov.trace(), 1e-13);
}

TEST(build_binomial, degenerate_random_effect){
  rng gen(2);
  auto const cl = random_binomial_cluster(gen, 4, 2, 3);
  vec const beta{{.2, .5}};
  auto const b = build_binomial(cl, beta, mat::Identity(2, 2) * 1e-10);
  double expect{};
  for(int i = 0; i < 4; ++i){
    double const eta = cl.x.row(i).dot(beta);
    expect += log_choose(3, cl.y[i]) + cl.y[i] * log_pnorm(eta) +
      (3 - cl.y[i]) * log_pnorm(-eta);
  }
  EXPECT_NEAR(log_marginal(b, engine::cdf, precise()).value, expect, 1e-6);
  EXPECT_NEAR(log_marginal(b, engine::aghq, precise()).value, expect, 1e-6);
}

TEST(build_binomial, representations_agree){
  rng gen(3);
  for(int rep = 0; rep < 3; ++rep){
    auto const b = build_binomial(random_binomial_cluster(gen, 4, 3, 2),
                                  vec{{.1, .4}}, random_cov(gen, 3));
    expect_equivalent(b, engine::spherical_radial, precise(rep + 1));
    expect_equivalent(b, engine::importance, precise(rep + 1));
    expect_equivalent(b, engine::rqmc, precise(rep + 1));
  }
}

TEST(build_binomial, reduced_dimension_when_k_exceeds_n){
  rng gen(4);
  auto const b = build_binomial(random_binomial_cluster(gen, 2, 5), vec{{0, .5}},
                                random_cov(gen, 5));
  auto const r = log_marginal(b, engine::aghq, precise());
  EXPECT_TRUE(r.reduced);
  expect_equivalent(b, engine::aghq, precise());
}

TEST(multinomial_integrand, symmetry_and_closed_form){
  for(int c = 2; c <= 6; ++c){
    vec const eta = vec::Zero(c - 1);
    auto const t = multinomial_integrand(eta, mat::Zero(c - 1, 1), vec::Zero(1));
    EXPECT_NEAR(std::exp(t.log_value), 1. / c, 1e-5) << c;
  }
  // with two categories the inner integral is Phi(t / sqrt 2). Eight nodes
  // leave an error of a few 1e-6 near t = 2 so the identity is checked with
  // more nodes
  rng gen(5);
  for(int rep = 0; rep < 10; ++rep){
    vec const eta{{gen.normal()}}, u = gen.normal(2);
    mat const kmat = gen.normal(2).transpose();
    double const expect = log_pnorm((eta[0] + kmat.row(0).dot(u)) / std::sqrt(2.));
    EXPECT_NEAR(multinomial_integrand(eta, kmat, u, 24).log_value, expect, 1e-10);
    EXPECT_NEAR(multinomial_integrand(eta, kmat, u, 8).log_value, expect, 1e-5);
  }
}

TEST(multinomial_integrand, node_truncation){
  rng gen(6);
  double worst{};
  for(int rep = 0; rep < 20; ++rep){
    vec const eta = gen.normal(3);
    mat const kmat = gen.normal(6).reshaped(3, 2);
    vec const u = gen.normal(2) * .5;
    double const p8 = std::exp(multinomial_integrand(eta, kmat, u, 8).log_value),
                 p16 = std::exp(multinomial_integrand(eta, kmat, u, 16).log_value);
    worst = std::max(worst, std::abs(p8 - p16) / p16);
  }
  EXPECT_LE(worst, 3e-5);
}

TEST(multinomial_integrand, derivatives){
  rng gen(7);
  vec const eta = gen.normal(3);
  mat const kmat = gen.normal(6).reshaped(3, 2);
  vec const u = gen.normal(2);
  auto const t = multinomial_integrand(eta, kmat, u, 10);
  double const h = 1e-5;
  for(int i = 0; i < 2; ++i){
    vec up = u, um = u;
    up[i] += h;
    um[i] -= h;
    auto const tp = multinomial_integrand(eta, kmat, up, 10),
               tm = multinomial_integrand(eta, kmat, um, 10);
    EXPECT_NEAR(t.grad[i], (tp.log_value - tm.log_value) / (2 * h), 1e-6);
    for(int j = 0; j < 2; ++j)
      EXPECT_NEAR(t.hess(j, i), (tp.grad[j] - tm.grad[j]) / (2 * h), 1e-4);
  }
}

TEST(build_multinomial, two_categories_is_binary_probit){
  rng gen(8);
  multinomial_cluster cl;
  cl.c = 2;
  int const n = 3, k = 2;
  cl.x = gen.normal(n * 2).reshaped(n, 2);
  cl.y = {1, 2, 2};
  for(int i = 0; i < n; ++i) cl.z.push_back(gen.normal(2 * k).reshaped(2, k));
  vec const beta = gen.normal(4);
  mat const sigma = random_cov(gen, k);
  auto const b = build_multinomial(cl, beta, sigma, 24);

  // binary probit with latent variance 2 on the difference of the utilities
  binomial_cluster bc;
  bc.x.resize(n, 2);
  bc.z.resize(n, k);
  bc.m.assign(n, 1);
  bc.y.resize(n);
  for(int i = 0; i < n; ++i){
    bc.x.row(i) = cl.x.row(i) / std::sqrt(2.);
    bc.z.row(i) = (cl.z[i].row(0) - cl.z[i].row(1)) / std::sqrt(2.);
    bc.y[i] = cl.y[i] == 1;
  }
  vec const beta_d = beta.head(2) - beta.tail(2);
  auto const bb = build_binomial(bc, beta_d, sigma);
  EXPECT_NEAR(log_marginal(b, engine::aghq, precise()).value,
              log_marginal(bb, engine::aghq, precise()).value, 1e-7);
  EXPECT_NEAR(log_marginal(b, engine::cdf, precise()).value,
              log_marginal(bb, engine::cdf, precise()).value, 1e-4);
}

TEST(build_multinomial, representations_agree){
  rng gen(9);
  multinomial_cluster cl;
  cl.c = 3;
  int const n = 2, k = 3;
  cl.x = gen.normal(n * 2).reshaped(n, 2);
  cl.y = {3, 1};
  for(int i = 0; i < n; ++i) cl.z.push_back(mat::Identity(3, k));
  auto const b = build_multinomial(cl, gen.normal(6) * .5, random_cov(gen, k));
  expect_equivalent(b, engine::spherical_radial, precise());
  expect_equivalent(b, engine::aghq, precise());
}

TEST(build_ordered, two_categories_is_binomial){
  rng gen(10);
  auto const bc = random_binomial_cluster(gen, 4, 2);
  ordered_cluster oc;
  oc.c = 2;
  oc.x = bc.x;
  oc.z = bc.z;
  for(int y : bc.y) oc.y.push_back(y + 1);
  vec const beta{{.3, -.6}};
  mat const sigma = random_cov(gen, 2);
  auto const bo = build_ordered(oc, beta, cutpoints{}, sigma);
  auto const bb = build_binomial(bc, beta, sigma);
  for(engine e : {engine::aghq, engine::laplace})
    EXPECT_NEAR(log_marginal(bo, e, precise()).value,
                log_marginal(bb, e, precise()).value, 1e-12);
  engine_options o = precise();
  EXPECT_NEAR(log_marginal(bo, engine::cdf, o).value,
              log_marginal(bb, engine::cdf, o).value, 1e-12);
}

TEST(build_ordered, boundary_categories){
  ordered_cluster oc;
  oc.c = 4;
  oc.x = mat::Constant(2, 1, 1.);
  oc.z = mat::Ones(2, 1);
  oc.y = {4, 4};
  cutpoints const gamma(vec{{.5, 1.2}});
  auto const b = build_ordered(oc, vec{{.8}}, gamma, mat::Constant(1, 1, 1e-12));
  // P(latent > gamma_3) = Phi(x beta - gamma_3) for each observation
  double const expect = 2 * log_pnorm(.8 - 1.2);
  EXPECT_NEAR(log_marginal(b, engine::aghq, precise()).value, expect, 1e-6);
  EXPECT_NEAR(log_marginal(b, engine::cdf, precise()).value, expect, 1e-6);
}

TEST(build_ordered, representations_agree){
  rng gen(11);
  ordered_cluster oc;
  oc.c = 4;
  int const n = 3, k = 2;
  oc.x = gen.normal(n).reshaped(n, 1);
  oc.z = gen.normal(n * k).reshaped(n, k);
  oc.y = {1, 3, 4};
  auto const b = build_ordered(oc, vec{{.4}}, cutpoints(vec{{.7, 1.5}}),
                               random_cov(gen, k));
  expect_equivalent(b, engine::spherical_radial, precise());
  expect_equivalent(b, engine::aghq, precise());
}

TEST(cutpoints, validation){
  EXPECT_THROW(cutpoints(vec{{.5, .3}}), error);
  EXPECT_THROW(cutpoints(vec{{-.1}}), error);
  cutpoints const g(vec{{1, 2}});
  EXPECT_EQ(g.categories(), 4);
  EXPECT_EQ(g(0), -inf);
  EXPECT_EQ(g(1), 0);
  EXPECT_EQ(g(3), 2);
  EXPECT_EQ(g(4), inf);
}

namespace {

/**
 * Censored normal regression with one random intercept: T = (e - b1 x - u) / bt,
 * written with x(t) = (t, x). The likelihood is integrated over u with
 * adaptive quadrature.
 */
double tobit_loglik(vec const &t, std::vector<int> const &event, vec const &x,
                    double bt, double b1, double s2){
  double const s = std::sqrt(s2);
  auto f = [&](double u){
    double out = dnorm(u / s) / s;
    for(Eigen::Index i = 0; i < t.size(); ++i){
      double const lp = bt * t[i] + b1 * x[i] + u;
      out *= event[i] ? bt * dnorm(lp) : pnorm(-lp);
    }
    return out;
  };
  return std::log(boost::math::quadrature::gauss_kronrod<double, 61>::integrate
    (f, -inf, inf, 15, 1e-13));
}

gsm_cluster tobit_cluster(vec const &t, std::vector<int> const &event,
                          vec const &x){
  gsm_cluster cl;
  Eigen::Index const n = t.size();
  cl.t = t;
  cl.event = event;
  cl.x.resize(n, 2);
  cl.dx.resize(n, 2);
  cl.x.col(0) = t;
  cl.x.col(1) = x;
  cl.dx.col(0).setOnes();
  cl.dx.col(1).setZero();
  cl.z = mat::Ones(n, 1);
  return cl;
}

} // namespace

TEST(build_gsm, tobit_likelihood){
  vec const t{{.3, -.4, 1.1}}, x{{1, -.5, .2}};
  std::vector<int> const event{1, 0, 1};
  double const bt = 1.3, b1 = .4, s2 = .6;
  auto const b = build_gsm(tobit_cluster(t, event, x), vec{{bt, b1}},
                           mat::Constant(1, 1, s2));
  double const expect = tobit_loglik(t, event, x, bt, b1, s2);
  EXPECT_NEAR(log_marginal(b, engine::cdf, precise()).value, expect, 1e-10);
  EXPECT_NEAR(log_marginal(b, engine::aghq, precise()).value, expect, 1e-9);
}

TEST(build_gsm, no_censoring_is_closed_form){
  vec const t{{.3, -.4, 1.1}}, x{{1, -.5, .2}};
  std::vector<int> const event{1, 1, 1};
  vec const beta{{1.3, .4}};
  auto const cl = tobit_cluster(t, event, x);
  auto const b = build_gsm(cl, beta, mat::Constant(1, 1, .6));
  double const expect = tobit_loglik(t, event, x, 1.3, .4, .6);
  EXPECT_EQ(b.skew.k2(), 0);
  for(engine e : {engine::cdf, engine::aghq, engine::spherical_radial}){
    auto const r = log_marginal(b, e, precise());
    EXPECT_EQ(r.status, approx_status::exact);
    EXPECT_NEAR(r.value, expect, 1e-10);
  }

  // gradient of log k: sum log(dx beta) + log phi(-X beta; 0, I + Z Sigma Z^T)
  mat const w = mat::Identity(3, 3) + cl.z * .6 * cl.z.transpose();
  vec const grad_expect = cl.dx.transpose() *
      (cl.dx * beta).cwiseInverse() -
    cl.x.transpose() * w.inverse() * cl.x * beta;
  auto const g = loglik_gradient(b, engine::cdf);
  EXPECT_LT((g.d_fixed - grad_expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(build_gsm, all_censored_is_probit_integral){
  vec const t{{.3, -.4}}, x{{1, -.5}};
  std::vector<int> const event{0, 0};
  auto const cl = tobit_cluster(t, event, x);
  mat const sigma = mat::Constant(1, 1, .8);
  auto const b = build_gsm(cl, vec{{1.3, .4}}, sigma);
  EXPECT_NEAR(b.log_c, 0, 1e-15);
  EXPECT_LT((b.gwi.cov() - sigma).norm(), 1e-15);
  EXPECT_LT(b.gwi.mean().norm(), 1e-15);
  EXPECT_NEAR(log_marginal(b, engine::aghq, precise()).value,
              tobit_loglik(t, event, x, 1.3, .4, .8), 1e-9);
}

TEST(build_gsm, monotonicity){
  auto cl = tobit_cluster(vec{{.3}}, {1}, vec{{1}});
  EXPECT_THROW(build_gsm(cl, vec{{-1, .4}}, mat::Constant(1, 1, .5)),
               monotonicity_violation);
}

namespace {

template<class Build>
void check_gradient(Build const &build, vec const &fixed, mat const &sigma,
                    engine_options const &opts, double rel){
  auto const g = loglik_gradient(build(fixed, sigma), engine::cdf, opts);
  EXPECT_LT((g.d_sigma - g.d_sigma.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  double const h = 1e-4;
  auto val = [&](vec const &f, mat const &s){
    return log_marginal(build(f, s), engine::cdf, opts).value;
  };
  double const scale = std::max(1., g.d_fixed.cwiseAbs().maxCoeff());
  for(Eigen::Index i = 0; i < fixed.size(); ++i){
    vec fp = fixed, fm = fixed;
    fp[i] += h;
    fm[i] -= h;
    double const fd = (val(fp, sigma) - val(fm, sigma)) / (2 * h);
    EXPECT_NEAR(g.d_fixed[i], fd, rel * std::max(std::abs(fd), 1e-2 * scale))
      << "fixed " << i;
  }
  for(Eigen::Index i = 0; i < sigma.rows(); ++i)
    for(Eigen::Index j = 0; j <= i; ++j){
      mat sp = sigma, sm = sigma;
      sp(i, j) += h;
      sm(i, j) -= h;
      if(i != j){
        sp(j, i) += h;
        sm(j, i) -= h;
      }
      double const fd = (val(fixed, sp) - val(fixed, sm)) / (2 * h);
      double const an = i == j ? g.d_sigma(i, i) : 2 * g.d_sigma(i, j);
      EXPECT_NEAR(an, fd, rel * std::max(std::abs(fd), 1e-2 * scale))
        << "sigma " << i << ' ' << j;
    }
}

} // namespace

TEST(loglik_gradient, binomial_finite_differences){
  rng gen(12);
  auto const cl = random_binomial_cluster(gen, 4, 2, 2);
  check_gradient([&](vec const &f, mat const &s){
    return build_binomial(cl, f, s);
  }, vec{{.2, -.3}}, random_cov(gen, 2), frozen(20000), 1e-3);
}

TEST(loglik_gradient, ordered_finite_differences){
  rng gen(13);
  ordered_cluster oc;
  oc.c = 3;
  oc.x = gen.normal(4).reshaped(4, 1);
  oc.z = gen.normal(8).reshaped(4, 2);
  oc.y = {1, 2, 3, 2};
  check_gradient([&](vec const &f, mat const &s){
    return build_ordered(oc, f.head(1), cutpoints(f.tail(1)), s);
  }, vec{{.3, .9}}, random_cov(gen, 2), frozen(20000), 1e-3);
}

TEST(loglik_gradient, gsm_finite_differences){
  vec const t{{.3, -.4, 1.1, .2}}, x{{1, -.5, .2, .7}};
  auto cl = tobit_cluster(t, {1, 0, 1, 0}, x);
  check_gradient([&](vec const &f, mat const &s){
    return build_gsm(cl, f, s);
  }, vec{{1.3, .4}}, mat::Constant(1, 1, .7), frozen(20000), 1e-3);
}

TEST(loglik_gradient, gwi_engines_agree_with_cdf){
  // two observations so the CDF side is the bivariate normal path
  rng gen(14);
  auto const b = build_binomial(random_binomial_cluster(gen, 2, 2), vec{{.2, .5}},
                                random_cov(gen, 2));
  auto const ref = loglik_gradient(b, engine::cdf, precise());
  auto const q = loglik_gradient(b, engine::aghq, precise());
  EXPECT_LT((ref.d_fixed - q.d_fixed).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((ref.d_sigma - q.d_sigma).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(loglik_gradient(b, engine::laplace), not_applicable);
}
