#include <gtest/gtest.h>
#include <boost/math/distributions/chi_squared.hpp>
#include <pmlm/sequences.hpp>
#include <algorithm>
#include <cmath>

using namespace pmlm;

namespace {

/**
 * Star discrepancy of a 2-D point set evaluated at the boxes anchored at
 * the origin whose corners are made of point coordinates. Points are
 * inserted in x order while the y values are kept sorted.
 */
double star_discrepancy_2d(std::vector<std::array<double, 2>> pts){
  std::sort(pts.begin(), pts.end());
  double const n = pts.size();
  std::vector<double> ys;
  double out{};
  for(std::size_t i = 0; i < pts.size(); ++i){
    ys.insert(std::upper_bound(ys.begin(), ys.end(), pts[i][1]), pts[i][1]);
    double const x = pts[i][0],
                 x_next = i + 1 < pts.size() ? pts[i + 1][0] : 1;
    for(std::size_t j = 0; j < ys.size(); ++j){
      double const y_next = j + 1 < ys.size() ? ys[j + 1] : 1;
      out = std::max(out, (j + 1) / n - x * ys[j]);
      out = std::max(out, x_next * y_next - (j + 1) / n);
    }
    out = std::max(out, x_next * (ys.empty() ? 1 : ys[0]));
  }
  return out;
}

} // namespace

TEST(sobol, van_der_corput_first_coordinate){
  auto const pts = sobol_points(1, 4);
  std::vector<double> v(pts.values.begin(), pts.values.end());
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  // one point in each dyadic quarter
  for(int q = 0; q < 4; ++q){
    EXPECT_GE(sorted[q], q / 4.);
    EXPECT_LT(sorted[q], (q + 1) / 4.);
  }
  EXPECT_EQ(v[0], 0);
  EXPECT_EQ(v[1], .5);
}

TEST(sobol, dyadic_stratification_in_every_coordinate){
  int const dim = 20, count = 256;
  auto const pts = sobol_points(dim, count);
  for(int d = 0; d < dim; ++d){
    std::vector<int> bins(count, 0);
    for(int i = 0; i < count; ++i)
      ++bins[static_cast<int>(pts[i][d] * count)];
    EXPECT_TRUE(std::all_of(bins.begin(), bins.end(),
                            [](int b){ return b == 1; })) << d;
  }
}

TEST(sobol, lower_discrepancy_than_uniform){
  auto to_pairs = [](point_set const &ps){
    std::vector<std::array<double, 2>> out(ps.size());
    for(std::size_t i = 0; i < ps.size(); ++i)
      out[i] = {ps[i][0], ps[i][1]};
    return out;
  };
  std::vector<double> d_sobol, d_unif;
  for(std::uint64_t s = 1; s <= 50; ++s){
    d_sobol.push_back(star_discrepancy_2d(to_pairs(sobol_points(2, 512, s))));
    rng gen(s);
    std::vector<std::array<double, 2>> u(512);
    for(auto &p : u) p = {gen.uniform(), gen.uniform()};
    d_unif.push_back(star_discrepancy_2d(u));
  }
  std::nth_element(d_sobol.begin(), d_sobol.begin() + 25, d_sobol.end());
  std::nth_element(d_unif.begin(), d_unif.begin() + 25, d_unif.end());
  EXPECT_LT(d_sobol[25], d_unif[25]);
}

TEST(sobol, scrambled_marginals_are_uniform){
  auto const pts = sobol_points(8, 100000, 42);
  for(int d = 0; d < 8; ++d){
    double sum{};
    for(std::size_t i = 0; i < pts.size(); ++i){
      ASSERT_GT(pts[i][d], 0);
      ASSERT_LT(pts[i][d], 1);
      sum += pts[i][d];
    }
    EXPECT_NEAR(sum / pts.size(), .5, .005);
  }
}

TEST(sobol, scrambling_keeps_stratification){
  auto const pts = sobol_points(3, 64, 7);
  for(int d = 0; d < 3; ++d){
    std::vector<int> bins(64, 0);
    for(int i = 0; i < 64; ++i)
      ++bins[static_cast<int>(pts[i][d] * 64)];
    EXPECT_EQ(*std::max_element(bins.begin(), bins.end()), 1);
  }
}

TEST(sobol, dimension_limits){
  EXPECT_THROW(sobol_sequence{sobol_max_dim + 1}, dim_too_large);
  EXPECT_THROW(sobol_sequence{0}, dim_too_large);
  EXPECT_NO_THROW(sobol_sequence{sobol_max_dim});
}

TEST(korobov, constant_is_exact){
  for(std::uint64_t s = 1; s < 20; ++s){
    auto const rule = korobov_points(1000, 4, s);
    double sum{};
    std::vector<double> p(4);
    for(std::uint64_t i = 0; i < rule.n; ++i){
      rule.point(i, p.data());
      sum += 1;
    }
    EXPECT_EQ(sum / rule.n, 1);
  }
}

TEST(korobov, random_shift_is_unbiased){
  std::vector<double> means;
  std::vector<double> p(3);
  for(std::uint64_t s = 1; s <= 1000; ++s){
    auto const rule = korobov_points(100, 3, s);
    double sum{};
    for(std::uint64_t i = 0; i < rule.n; ++i){
      rule.point(i, p.data());
      sum += p[0];
    }
    means.push_back(sum / rule.n);
  }
  double m{}, v{};
  for(double x : means) m += x;
  m /= means.size();
  for(double x : means) v += (x - m) * (x - m);
  double const se = std::sqrt(v / (means.size() - 1) / means.size());
  EXPECT_NEAR(m, .5, 3 * se + 1e-12);
}

TEST(korobov, lower_variance_than_mc){
  int const dim = 4;
  auto f = [](double const *u){
    double out = 1;
    for(int j = 0; j < dim; ++j) out *= std::cos(2 * M_PI * u[j]);
    return out;
  };
  double v_lat{}, v_mc{};
  std::vector<double> p(dim);
  std::uint64_t n{};
  for(std::uint64_t s = 1; s <= 50; ++s){
    auto const rule = korobov_points(2000, dim, s);
    n = rule.n;
    double sum{};
    for(std::uint64_t i = 0; i < rule.n; ++i){
      rule.point(i, p.data());
      sum += f(p.data());
    }
    v_lat += std::pow(sum / rule.n, 2);

    rng gen(s);
    double sum_mc{};
    for(std::uint64_t i = 0; i < rule.n; ++i){
      for(auto &x : p) x = gen.uniform();
      sum_mc += f(p.data());
    }
    v_mc += std::pow(sum_mc / rule.n, 2);
  }
  EXPECT_GE(n, 2000u);
  EXPECT_LT(v_lat, v_mc / 100);
}

TEST(antithetic, fixed_point_at_median){
  for(int k : {1, 2, 5}){
    double const med = boost::math::median(boost::math::chi_squared(k));
    vec u = vec::Ones(k) * std::sqrt(med / k);
    auto const set = antithetic_expand(u);
    EXPECT_LT((set[2] - u).norm(), 1e-10);
    EXPECT_LT((set[3] + u).norm(), 1e-10);
  }
}

TEST(antithetic, scale_partner_quantile){
  boost::math::chi_squared chi1(1);
  vec const u{{qnorm(.8)}};
  auto const set = antithetic_expand(u);
  double const expect = quantile(chi1, 1 - cdf(chi1, u[0] * u[0]));
  EXPECT_NEAR(set[2].squaredNorm(), expect, 1e-10 * expect);
}

TEST(antithetic, mirror_structure){
  rng gen(5);
  for(int r = 0; r < 20; ++r){
    vec const u = gen.normal(3);
    auto const set = antithetic_expand(u);
    EXPECT_EQ(set[0], u);
    EXPECT_EQ(set[1], -set[0]);
    EXPECT_EQ(set[3], -set[2]);
  }
  EXPECT_THROW(antithetic_expand(vec::Zero(2)), zero_vector);
}
