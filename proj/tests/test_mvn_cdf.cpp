#include <gtest/gtest.h>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <pmlm/mvn_cdf.hpp>
#include <pmlm/random.hpp>
#include <algorithm>

using namespace pmlm;

namespace {

boost::math::normal const std_normal;

mat random_cov(rng &gen, int k){
  return gen.wishart(mat::Identity(k, k) / k, k + 2);
}

/// P(X <= h, Y <= k) by one dimensional adaptive quadrature
double bvn_quadrature(double h, double k, double r){
  double const sr = std::sqrt(1 - r * r);
  auto f = [&](double x){
    return pdf(std_normal, x) * cdf(std_normal, (k - r * x) / sr);
  };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate
    (f, -inf, h, 15, 1e-14);
}

cdf_options fixed_samples(long long n, std::uint64_t seed = 1){
  cdf_options opts;
  opts.rel_tol = 1e-14;
  opts.abs_tol = 0;
  opts.max_samples = n;
  opts.seed = seed;
  return opts;
}

} // namespace

TEST(sov_integrand, one_dimension_and_independence){
  hyper_rect const rect{vec{{-.3}}, vec{{1.1}}};
  double const expect = pnorm(1.1) - pnorm(-.3);
  EXPECT_NEAR(sov_integrand(rect, vec::Zero(1), mat::Identity(1, 1), vec(0)),
              expect, 1e-15);

  rng gen(1);
  vec const sd{{.5, 1.5, 2, 1}};
  hyper_rect const r4{vec{{-1, -inf, 0, -2}}, vec{{.5, 1, inf, 0}}};
  double prod = 1;
  for(int i = 0; i < 4; ++i)
    prod *= pnorm(r4.upper[i] / sd[i]) - pnorm(r4.lower[i] / sd[i]);
  for(int rep = 0; rep < 5; ++rep){
    vec w(3);
    for(auto &x : w) x = gen.uniform();
    EXPECT_NEAR(sov_integrand(r4, vec::Zero(4), mat(sd.asDiagonal()), w),
                prod, 1e-14);
  }
}

TEST(sov_integrand, matches_hand_trace){
  mat l(3, 3);
  l << 1.2, 0, 0,
       .4, .9, 0,
       -.3, .5, .7;
  vec const mu{{.1, -.2, .3}}, lo{{-1, -.5, -inf}}, up{{.8, inf, 1}};
  vec const w{{.3, .65}};

  // explicit recursion with Boost's normal CDF and quantile
  vec const a = lo - mu, b = up - mu;
  auto phi = [](double x){
    return std::isfinite(x) ? cdf(std_normal, x) : x > 0 ? 1. : 0.;
  };
  double const d1 = phi(a[0] / l(0, 0)), e1 = phi(b[0] / l(0, 0));
  double const y1 = quantile(std_normal, d1 + w[0] * (e1 - d1));
  double const d2 = phi((a[1] - l(1, 0) * y1) / l(1, 1)),
               e2 = phi((b[1] - l(1, 0) * y1) / l(1, 1));
  double const y2 = quantile(std_normal, d2 + w[1] * (e2 - d2));
  double const s3 = l(2, 0) * y1 + l(2, 1) * y2;
  double const d3 = phi((a[2] - s3) / l(2, 2)), e3 = phi((b[2] - s3) / l(2, 2));
  double const expect = (e1 - d1) * (e2 - d2) * (e3 - d3);

  EXPECT_NEAR(sov_integrand({lo, up}, mu, l, w), expect, 1e-13);
}

TEST(reorder_variables, diagonal_and_exchangeable){
  vec const sd{{1, 2, .5, 1.5}};
  mat const sig = sd.cwiseAbs2().asDiagonal();
  vec const b = vec::Ones(4);
  auto const perm = reorder_variables({-b, b}, vec::Zero(4), sig);
  std::vector<double> probs;
  for(int j : perm)
    probs.push_back(pnorm(1 / sd[j]) - pnorm(-1 / sd[j]));
  EXPECT_TRUE(std::is_sorted(probs.begin(), probs.end()));
  EXPECT_EQ(perm, (std::vector<int>{1, 3, 0, 2}));

  mat ex = mat::Constant(4, 4, .3);
  ex.diagonal().setOnes();
  auto const id = reorder_variables({-b, b}, vec::Zero(4), ex);
  EXPECT_EQ(id, (std::vector<int>{0, 1, 2, 3}));
}

TEST(reorder_variables, reduces_variance){
  // a heuristic so compare the variance summed over random problems
  rng gen(17);
  double with{}, without{};
  for(int rep = 0; rep < 20; ++rep){
    int const k = 6;
    mat const sig = random_cov(gen, k);
    vec lo(k), up(k);
    for(int j = 0; j < k; ++j){
      lo[j] = gen.uniform() < .3 ? -inf : -2.5 * gen.uniform();
      up[j] = gen.uniform() < .3 ? inf : lo[j] + .2 + 3 * gen.uniform();
      if(!std::isfinite(lo[j]) && !std::isfinite(up[j])) up[j] = 0;
    }
    auto spread = [&](bool reorder){
      std::vector<double> est;
      for(std::uint64_t s = 1; s <= 50; ++s){
        auto opts = fixed_samples(800, s);
        opts.reorder = reorder;
        est.push_back(mvn_interval({lo, up}, vec::Zero(k), sig, opts).estimate);
      }
      double m{}, v{};
      for(double x : est) m += x;
      m /= est.size();
      for(double x : est) v += (x - m) * (x - m);
      return v / (m * m);
    };
    with += spread(true);
    without += spread(false);
  }
  EXPECT_LE(with, without);
}

TEST(mvn_cdf, univariate_and_orthant){
  auto const r1 = mvn_cdf(vec::Zero(1), vec::Zero(1), mat::Identity(1, 1));
  EXPECT_EQ(r1.estimate, .5);
  EXPECT_EQ(r1.status, approx_status::exact);

  mat s(2, 2);
  s << 1, .5, .5, 1;
  auto const r2 = mvn_cdf(vec::Zero(2), vec::Zero(2), s);
  EXPECT_NEAR(r2.estimate, .25 + std::asin(.5) / (2 * M_PI), 5e-4);
}

TEST(mvn_cdf, bivariate_matches_quadrature){
  rng gen(23);
  for(int rep = 0; rep < 50; ++rep){
    double const h = 3 * gen.normal(), k = 3 * gen.normal(),
                 r = 2 * gen.uniform() - 1;
    mat s(2, 2);
    s << 1, r, r, 1;
    double const expect = bvn_quadrature(h, k, r);
    double const got = mvn_cdf(vec{{h, k}}, vec::Zero(2), s).estimate;
    EXPECT_NEAR(got, expect, 1e-12) << h << ' ' << k << ' ' << r;
  }
  mat s(2, 2);
  s << 1, -.999, -.999, 1;
  EXPECT_NEAR(mvn_cdf(vec{{.2, .4}}, vec::Zero(2), s).estimate,
              bvn_quadrature(.2, .4, -.999), 1e-12);
}

TEST(mvn_cdf, whole_space_and_diagonal){
  rng gen(2);
  mat const sig = random_cov(gen, 4);
  vec const big = vec::Constant(4, inf);
  auto const all = mvn_interval({-big, big}, vec::Zero(4), sig);
  EXPECT_NEAR(all.estimate, 1, 1e-12);

  mat const d = vec{{2, .5}}.asDiagonal();
  vec const lo{{-1, .2}}, up{{.7, 1.5}};
  double const expect =
    (pnorm(.7 / std::sqrt(2.)) - pnorm(-1 / std::sqrt(2.))) *
    (pnorm(1.5 / std::sqrt(.5)) - pnorm(.2 / std::sqrt(.5)));
  EXPECT_NEAR(mvn_interval({lo, up}, vec::Zero(2), d).estimate, expect, 1e-14);
}

TEST(mvn_cdf, inclusion_exclusion){
  rng gen(31);
  mat const sig = random_cov(gen, 4);
  vec const mu = gen.normal(4) * .2;
  vec const lo{{-1, -.5, -1.5, -.2}}, up{{.8, 1.2, .4, 1}};
  cdf_options opts;
  opts.rel_tol = 1e-5;
  auto const direct = mvn_interval({lo, up}, mu, sig, opts);

  double sum{}, var = direct.std_error * direct.std_error;
  for(int mask = 0; mask < 16; ++mask){
    vec corner(4);
    int n_lo{};
    for(int j = 0; j < 4; ++j){
      bool const low = mask >> j & 1;
      corner[j] = low ? lo[j] : up[j];
      n_lo += low;
    }
    opts.seed = 100 + mask;
    auto const r = mvn_cdf(corner, mu, sig, opts);
    sum += (n_lo % 2 ? -1 : 1) * r.estimate;
    var += r.std_error * r.std_error;
  }
  EXPECT_NEAR(direct.estimate, sum, 4 * std::sqrt(var) + 1e-10);
}

TEST(mvn_cdf, matches_plain_mc){
  rng gen(41);
  int const k = 5;
  mat const sig = random_cov(gen, k);
  vec const lo{{-1.5, -1, -2, -.5, -1}}, up{{1, 1.5, .5, 2, .8}};
  auto const est = mvn_interval({lo, up}, vec::Zero(k), sig);

  mat const l = cholesky(sig);
  long long const n = 1000000, hits = [&]{
    long long h{};
    vec z(k);
    for(long long i = 0; i < n; ++i){
      for(auto &x : z) x = gen.normal();
      vec const x = l * z;
      h += ((x - lo).array() > 0).all() && ((up - x).array() >= 0).all();
    }
    return h;
  }();
  double const p = static_cast<double>(hits) / n;
  double const se = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(est.estimate, p, 4 * std::hypot(se, est.std_error));
}

TEST(mvn_cdf, deterministic_per_seed){
  rng gen(5);
  mat const sig = random_cov(gen, 4);
  vec const up{{.2, .5, 1, -.1}};
  auto const a = mvn_cdf(up, vec::Zero(4), sig), b = mvn_cdf(up, vec::Zero(4), sig);
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(mvn_cdf, errors){
  EXPECT_THROW(mvn_cdf(vec::Zero(2), vec::Zero(3), mat::Identity(3, 3)),
               bad_dimension);
  EXPECT_THROW(mvn_cdf(vec::Zero(0), vec::Zero(0), mat(0, 0)), bad_dimension);
}

TEST(mvn_cdf, singular_covariance){
  // X2 = X1 so the probability is P(X1 <= min(b1, b2))
  mat s = mat::Ones(3, 3);
  s(2, 2) = 2;
  s(0, 2) = s(2, 0) = s(1, 2) = s(2, 1) = .5;
  vec const up{{.3, -.2, .4}};
  mat s2(2, 2);
  s2 << 1, .5, .5, 2;
  double const expect = mvn_cdf(vec{{-.2, .4}}, vec::Zero(2), s2).estimate;
  EXPECT_NEAR(mvn_cdf(up, vec::Zero(3), s).estimate, expect, 1e-12);
}

TEST(mvn_cdf_grad, univariate){
  double const sd = 1.7, b = .4, mu = -.3;
  auto const g = mvn_cdf_grad(vec{{b}}, vec{{mu}}, mat::Constant(1, 1, sd * sd));
  double const z = (b - mu) / sd;
  EXPECT_NEAR(g.d_mu[0], -dnorm(z) / sd, 1e-14);
  EXPECT_NEAR(g.d_upper[0], dnorm(z) / sd, 1e-14);
  EXPECT_NEAR(g.d_sigma(0, 0), -dnorm(z) * z / (2 * sd * sd), 1e-14);
}

namespace {

void check_fd(hyper_rect const &rect, vec const &mu, mat const &sig,
              cdf_options const &opts, double rel){
  auto const g = mvn_rect_grad(rect, mu, sig, opts);
  double const h = 1e-4;
  auto prob = [&](hyper_rect const &r, vec const &m, mat const &s){
    return mvn_interval(r, m, s, opts).estimate;
  };
  auto close = [&](double an, double fd, char const *what){
    EXPECT_NEAR(an, fd, rel * std::max(std::abs(fd), 1e-3 * g.prob.estimate))
      << what;
  };
  Eigen::Index const k = mu.size();
  for(Eigen::Index i = 0; i < k; ++i){
    vec mp = mu, mm = mu;
    mp[i] += h;
    mm[i] -= h;
    close(g.d_mu[i], (prob(rect, mp, sig) - prob(rect, mm, sig)) / (2 * h), "mu");
    if(std::isfinite(rect.upper[i])){
      auto rp = rect, rm = rect;
      rp.upper[i] += h;
      rm.upper[i] -= h;
      close(g.d_upper[i], (prob(rp, mu, sig) - prob(rm, mu, sig)) / (2 * h),
            "upper");
    }
    if(std::isfinite(rect.lower[i])){
      auto rp = rect, rm = rect;
      rp.lower[i] += h;
      rm.lower[i] -= h;
      close(g.d_lower[i], (prob(rp, mu, sig) - prob(rm, mu, sig)) / (2 * h),
            "lower");
    }
    for(Eigen::Index j = 0; j <= i; ++j){
      mat sp = sig, sm = sig;
      sp(i, j) += h;
      sm(i, j) -= h;
      if(i != j){
        sp(j, i) += h;
        sm(j, i) -= h;
      }
      double const fd = (prob(rect, mu, sp) - prob(rect, mu, sm)) / (2 * h);
      close(i == j ? g.d_sigma(i, i) : g.d_sigma(i, j) + g.d_sigma(j, i), fd,
            "sigma");
    }
  }
  EXPECT_EQ(g.d_sigma, g.d_sigma.transpose());
}

} // namespace

TEST(mvn_cdf_grad, finite_differences){
  rng gen(8);
  for(int k : {2, 3, 4}){
    mat const sig = random_cov(gen, k);
    vec const mu = gen.normal(k) * .3;
    vec up = gen.normal(k), lo = up - vec::Constant(k, 2);
    lo[0] = -inf;
    check_fd({lo, up}, mu, sig, fixed_samples(20000, 3), 1e-3);
  }
}

TEST(mvn_cdf_grad, translation_invariance){
  rng gen(12);
  mat const sig = random_cov(gen, 3);
  vec const mu = gen.normal(3), up = gen.normal(3), shift = gen.normal(3);
  auto const opts = fixed_samples(5000);
  auto const a = mvn_cdf_grad(up, mu, sig, opts),
             b = mvn_cdf_grad(up + shift, mu + shift, sig, opts);
  EXPECT_NEAR(a.prob.estimate, b.prob.estimate, 1e-12);
  EXPECT_LT((a.d_mu - b.d_mu).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((a.d_sigma - b.d_sigma).cwiseAbs().maxCoeff(), 1e-10);
}
