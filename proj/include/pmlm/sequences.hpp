#pragma once

#include "korobov_table.hpp"
#include "numeric.hpp"
#include "random.hpp"
#include "sobol_table.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <vector>

namespace pmlm {

struct dim_too_large : error {
  using error::error;
};
struct zero_vector : error {
  zero_vector() : error("antithetic_expand: zero vector") { }
};

/// points in [0, 1)^dim stored row by row
struct point_set {
  int dim{};
  std::vector<double> values;

  std::size_t size() const { return dim > 0 ? values.size() / dim : 0; }
  double const * operator[](std::size_t i) const {
    return values.data() + i * dim;
  }
};

inline constexpr int sobol_max_dim = detail::sobol_table_dims;

/**
 * Sobol sequence in Gray code order with the Joe and Kuo direction numbers.
 * The first point is the origin so that any first 2^k points of every
 * coordinate are stratified over the dyadic intervals of length 2^-k.
 *
 * With a scramble seed, each coordinate is scrambled with a nested uniform
 * (Owen) digit scramble to a depth of 31 bits. The flip of digit l is a hash
 * of (seed, coordinate, l, first l - 1 digits). The remaining digits are
 * filled with a uniform draw from the same hash so the scrambled points are
 * uniform on (0, 1).
 */
class sobol_sequence {
  static constexpr int n_bits = 31;
  int dim_;
  std::vector<std::uint32_t> directions; // dim x n_bits
  std::vector<std::uint32_t> state;
  std::uint64_t index_{};
  std::optional<std::uint64_t> seed;

  std::uint64_t key(int coord) const {
    return splitmix64(*seed ^ splitmix64(0x5eed0000ULL + coord));
  }

public:
  explicit sobol_sequence
    (int dim, std::optional<std::uint64_t> scramble_seed = std::nullopt)
    : dim_{dim}, directions(static_cast<std::size_t>(dim) * n_bits),
      state(dim, 0), seed{scramble_seed} {
    if(dim < 1)
      throw dim_too_large("sobol_sequence: dim must be positive");
    if(dim > sobol_max_dim)
      throw dim_too_large("sobol_sequence: dim exceeds 1111");

    for(int k = 0; k < n_bits; ++k)
      directions[k] = std::uint32_t{1} << (n_bits - 1 - k);

    for(int d = 1; d < dim; ++d){
      auto const &e = detail::sobol_dirs[d - 1];
      std::uint32_t *v = directions.data() + static_cast<std::size_t>(d) * n_bits;
      int const s = e.s;
      for(int k = 0; k < s && k < n_bits; ++k)
        v[k] = e.m[k] << (n_bits - 1 - k);
      for(int k = s; k < n_bits; ++k){
        std::uint32_t x = v[k - s] ^ (v[k - s] >> s);
        for(int j = 1; j < s; ++j)
          if((e.a >> (s - 1 - j)) & 1u)
            x ^= v[k - j];
        v[k] = x;
      }
    }
  }

  int dim() const { return dim_; }
  std::uint64_t index() const { return index_; }

  /// writes the next point into out
  void next(double *out) {
    if(index_ > 0){
      // position of the lowest zero bit of index - 1
      int const c = std::countr_one(index_ - 1);
      for(int d = 0; d < dim_; ++d)
        state[d] ^= directions[static_cast<std::size_t>(d) * n_bits + c];
    }
    ++index_;

    if(!seed){
      for(int d = 0; d < dim_; ++d)
        out[d] = static_cast<double>(state[d]) * 0x1p-31;
      return;
    }

    for(int d = 0; d < dim_; ++d){
      std::uint64_t const k = key(d);
      std::uint32_t const x = state[d];
      std::uint32_t y{};
      for(int l = 0; l < n_bits; ++l){
        // prefix of the first l digits with a leading 1 marking the length
        std::uint64_t const prefix =
          (std::uint64_t{1} << l) | (l > 0 ? x >> (n_bits - l) : 0);
        std::uint32_t const flip = splitmix64(k ^ (prefix * 0x9e3779b97f4a7c15ULL))
          & 1u;
        y |= (((x >> (n_bits - 1 - l)) & 1u) ^ flip) << (n_bits - 1 - l);
      }
      std::uint64_t const tail = splitmix64(k ^ splitmix64(
        (std::uint64_t{y} << 1) | 1u));
      double const jitter = (static_cast<double>(tail >> 11) + .5) * 0x1p-53;
      out[d] = (static_cast<double>(y) + jitter) * 0x1p-31;
    }
  }
};

inline point_set sobol_points
  (int dim, std::size_t count,
   std::optional<std::uint64_t> scramble_seed = std::nullopt){
  sobol_sequence seq(dim, scramble_seed);
  point_set out{dim, std::vector<double>(count * dim)};
  for(std::size_t i = 0; i < count; ++i)
    seq.next(out.values.data() + i * dim);
  return out;
}

// ---------------------------------------------------------------------------
// Korobov rules

/// a shifted rank-1 lattice: point i is frac(i * z / n + shift)
struct korobov_rule {
  std::uint64_t n;
  std::vector<std::uint64_t> z;
  std::vector<double> shift;

  int dim() const { return static_cast<int>(z.size()); }

  void point(std::uint64_t i, double *out) const {
    for(std::size_t j = 0; j < z.size(); ++j){
      double const v = static_cast<double>((i * z[j]) % n) /
        static_cast<double>(n) + shift[j];
      out[j] = v - std::floor(v);
    }
  }
};

/// lattice sizes available in the generator table
inline std::uint64_t korobov_ladder(int i){
  return detail::korobov_table[i].n;
}
inline constexpr int korobov_ladder_size = detail::korobov_ladder_size;

/// index of the smallest tabulated size >= n (or the largest size)
inline int korobov_ladder_index(std::uint64_t n){
  for(int i = 0; i < korobov_ladder_size; ++i)
    if(korobov_ladder(i) >= n) return i;
  return korobov_ladder_size - 1;
}

/// generator vector z = (1, a, a^2, ...) mod n for a tabulated size
inline std::vector<std::uint64_t> korobov_generator(int ladder_index, int dim){
  auto const &e = detail::korobov_table[ladder_index];
  int const s = std::min(dim, detail::korobov_max_tuned_dim);
  std::uint64_t const a = e.generator[std::max(s, 1) - 1];
  std::vector<std::uint64_t> z(dim);
  std::uint64_t v{1};
  for(int j = 0; j < dim; ++j){
    z[j] = v;
    v = (v * a) % e.n;
  }
  return z;
}

/**
 * Randomly shifted Korobov rule with the smallest tabulated size that is at
 * least n.
 */
inline korobov_rule korobov_points(std::uint64_t n, int dim, std::uint64_t seed){
  if(n < 7)
    throw error("korobov_points: n must be at least 7");
  if(dim < 1)
    throw error("korobov_points: dim must be positive");
  int const idx = korobov_ladder_index(n);
  rng gen(seed);
  korobov_rule out{korobov_ladder(idx), korobov_generator(idx, dim), {}};
  out.shift.resize(dim);
  for(auto &s : out.shift) s = gen.uniform();
  return out;
}

// ---------------------------------------------------------------------------
// antithetic variables

/**
 * Location and scale balanced antithetic set {u, -u, s u, -s u} where s maps
 * the squared radius to the complementary chi-square quantile.
 */
inline std::array<vec, 4> antithetic_expand(vec const &u){
  double const r2 = u.squaredNorm();
  if(!(r2 > 0))
    throw zero_vector();
  double const half_k = .5 * static_cast<double>(u.size());
  // chi-square(K) CDF F(x) = P(K / 2, x / 2)
  double const p = boost::math::gamma_p(half_k, r2 / 2);
  double r2_new;
  if(p < .5)
    // 1 - F(r2) = F(new) with F(new) > 1/2 so use the upper quantile
    r2_new = 2 * boost::math::gamma_q_inv(half_k, p);
  else
    r2_new = 2 * boost::math::gamma_p_inv
      (half_k, boost::math::gamma_q(half_k, r2 / 2));
  double const s = std::sqrt(r2_new / r2);
  return {u, -u, s * u, -s * u};
}

} // namespace pmlm
