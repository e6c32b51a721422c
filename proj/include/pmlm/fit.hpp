#pragma once

#include "harness.hpp"
#include "models.hpp"

#include <functional>
#include <string>
#include <vector>

namespace pmlm {

// ---------------------------------------------------------------------------
// covariance parameterization

enum class sigma_structure { full, grouped };

/**
 * Unconstrained parameters for the random effect covariance matrix. The full
 * form uses log standard deviations followed by the strict lower triangle
 * (row major) of a unit diagonal lower triangular matrix whose normalized
 * rows are the Cholesky factor of the correlation matrix. The grouped form is
 * diagonal with one log standard deviation per group.
 */
class sigma_param {
  sigma_structure type_{sigma_structure::full};
  Eigen::Index k_{};
  std::vector<int> group_;
  int n_groups_{};

public:
  static sigma_param full(Eigen::Index k){
    sigma_param out;
    out.type_ = sigma_structure::full;
    out.k_ = k;
    return out;
  }

  /// group[j] in 0..(number of groups - 1) for random effect j
  static sigma_param grouped(std::vector<int> group){
    sigma_param out;
    out.type_ = sigma_structure::grouped;
    out.k_ = static_cast<Eigen::Index>(group.size());
    for(int g : group){
      if(g < 0) throw error("sigma_param: negative group index");
      out.n_groups_ = std::max(out.n_groups_, g + 1);
    }
    out.group_ = std::move(group);
    return out;
  }

  sigma_structure type() const { return type_; }
  Eigen::Index dim() const { return k_; }
  int n_groups() const { return n_groups_; }

  Eigen::Index size() const {
    return type_ == sigma_structure::full ? k_ + k_ * (k_ - 1) / 2 : n_groups_;
  }

  /// names of the parameters on the reported scale
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    if(type_ == sigma_structure::grouped){
      for(int g = 0; g < n_groups_; ++g)
        out.push_back("sd" + std::to_string(g + 1));
      return out;
    }
    for(Eigen::Index i = 0; i < k_; ++i)
      out.push_back("sd" + std::to_string(i + 1));
    for(Eigen::Index i = 1; i < k_; ++i)
      for(Eigen::Index j = 0; j < i; ++j)
        out.push_back("cor" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
    return out;
  }

  /// standard deviations and correlations
  vec reported(vec const &theta) const {
    vec out(size());
    mat const s = sigma(theta);
    Eigen::Index const n_sd = type_ == sigma_structure::full ? k_ : n_groups_;
    for(Eigen::Index i = 0; i < n_sd; ++i)
      out[i] = std::exp(theta[i]);
    Eigen::Index idx = n_sd;
    if(type_ == sigma_structure::full)
      for(Eigen::Index i = 1; i < k_; ++i)
        for(Eigen::Index j = 0; j < i; ++j)
          out[idx++] = s(i, j) / std::sqrt(s(i, i) * s(j, j));
    return out;
  }

  mat sigma(vec const &theta) const {
    if(theta.size() != size())
      throw dimension_mismatch("sigma_param: wrong number of parameters");
    if(type_ == sigma_structure::grouped){
      mat out = mat::Zero(k_, k_);
      for(Eigen::Index j = 0; j < k_; ++j)
        out(j, j) = std::exp(2 * theta[group_[j]]);
      return out;
    }
    mat const r = corr_chol(theta);
    vec const sd = theta.head(k_).array().exp();
    return sd.asDiagonal() * (r * r.transpose()) * sd.asDiagonal();
  }

  /// gradient wrt theta given the symmetric gradient wrt Sigma
  vec chain(vec const &theta, mat const &d_sigma) const {
    vec out = vec::Zero(size());
    mat const s = sigma(theta);
    if(type_ == sigma_structure::grouped){
      for(Eigen::Index j = 0; j < k_; ++j)
        out[group_[j]] += 2 * d_sigma(j, j) * s(j, j);
      return out;
    }

    for(Eigen::Index i = 0; i < k_; ++i)
      out[i] = 2 * d_sigma.row(i).dot(s.row(i));

    vec const sd = theta.head(k_).array().exp();
    mat const r = corr_chol(theta);
    mat const r_bar = 2 * sd.asDiagonal() * d_sigma * sd.asDiagonal() * r;
    Eigen::Index idx = k_;
    for(Eigen::Index i = 1; i < k_; ++i){
      double norm = 1;
      for(Eigen::Index j = 0; j < i; ++j)
        norm += theta[idx + j] * theta[idx + j];
      norm = std::sqrt(norm);
      // derivative of a normalized row
      vec const ri = r.row(i).head(i + 1).transpose(),
                gi = r_bar.row(i).head(i + 1).transpose();
      vec const d = (gi - ri * ri.dot(gi)) / norm;
      for(Eigen::Index j = 0; j < i; ++j)
        out[idx++] = d[j];
    }
    return out;
  }

  /// parameters reproducing a given covariance matrix (projected if grouped)
  vec from_sigma(mat const &s) const {
    if(s.rows() != k_ || s.cols() != k_)
      throw dimension_mismatch("sigma_param: wrong dimension");
    vec out(size());
    if(type_ == sigma_structure::grouped){
      vec sum = vec::Zero(n_groups_), cnt = vec::Zero(n_groups_);
      for(Eigen::Index j = 0; j < k_; ++j){
        sum[group_[j]] += s(j, j);
        cnt[group_[j]] += 1;
      }
      for(int g = 0; g < n_groups_; ++g)
        out[g] = .5 * std::log(cnt[g] > 0 ? sum[g] / cnt[g] : 1);
      return out;
    }
    vec const sd = s.diagonal().array().sqrt();
    mat const c = sd.cwiseInverse().asDiagonal() * s * sd.cwiseInverse().asDiagonal();
    mat const l = cholesky(c);
    out.head(k_) = sd.array().log();
    Eigen::Index idx = k_;
    for(Eigen::Index i = 1; i < k_; ++i)
      for(Eigen::Index j = 0; j < i; ++j)
        out[idx++] = l(i, j) / l(i, i);
    return out;
  }

private:
  mat corr_chol(vec const &theta) const {
    mat r = mat::Zero(k_, k_);
    r(0, 0) = 1;
    Eigen::Index idx = k_;
    for(Eigen::Index i = 1; i < k_; ++i){
      for(Eigen::Index j = 0; j < i; ++j)
        r(i, j) = theta[idx++];
      r(i, i) = 1;
      r.row(i) /= r.row(i).norm();
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// data sets

/**
 * Clusters of one family. For the multinomial model the coefficients of the
 * first category are fixed at zero and the free coefficients are stacked
 * category by category. For the ordered model the free cutpoints are
 * gamma_2 = exp(theta_1), gamma_k = gamma_(k - 1) + exp(theta_(k - 1)).
 */
struct dataset {
  family fam{family::binomial};
  std::vector<binomial_cluster> binomial;
  std::vector<multinomial_cluster> multinomial;
  std::vector<ordered_cluster> ordered;
  std::vector<gsm_cluster> gsm;
  /// number of categories for the multinomial and ordered models
  int categories{2};
  /// optional feasible start for the coefficients, e.g. for the GSM
  std::optional<vec> beta_start;
  /// optional grouping of the random effects for a diagonal covariance
  std::optional<std::vector<int>> effect_groups;

  std::size_t size() const {
    switch(fam){
    case family::binomial: return binomial.size();
    case family::multinomial: return multinomial.size();
    case family::ordered: return ordered.size();
    case family::gsm: return gsm.size();
    }
    return 0;
  }

  /// number of fixed effect covariates
  Eigen::Index n_x() const {
    if(size() == 0) throw error("dataset: no clusters");
    switch(fam){
    case family::binomial: return binomial[0].x.cols();
    case family::multinomial: return multinomial[0].x.cols();
    case family::ordered: return ordered[0].x.cols();
    case family::gsm: return gsm[0].x.cols();
    }
    return 0;
  }

  /// random effect dimension
  Eigen::Index k() const {
    if(size() == 0) throw error("dataset: no clusters");
    switch(fam){
    case family::binomial: return binomial[0].z.cols();
    case family::multinomial: return multinomial[0].z.at(0).cols();
    case family::ordered: return ordered[0].z.cols();
    case family::gsm: return gsm[0].z.cols();
    }
    return 0;
  }

  /// number of free coefficients
  Eigen::Index n_beta() const {
    return fam == family::multinomial ? (categories - 1) * n_x() : n_x();
  }

  Eigen::Index n_extra() const {
    return fam == family::ordered ? categories - 2 : 0;
  }

  Eigen::Index n_fixed() const { return n_beta() + n_extra(); }

  std::vector<std::string> fixed_names() const {
    std::vector<std::string> out;
    Eigen::Index const p = n_x();
    if(fam == family::multinomial){
      for(int j = 2; j <= categories; ++j)
        for(Eigen::Index l = 0; l < p; ++l)
          out.push_back("beta" + std::to_string(j) + "_" + std::to_string(l + 1));
    } else
      for(Eigen::Index l = 0; l < p; ++l)
        out.push_back("beta" + std::to_string(l + 1));
    for(Eigen::Index j = 0; j < n_extra(); ++j)
      out.push_back("gamma" + std::to_string(j + 2));
    return out;
  }

  /// cutpoints from the unconstrained parameters
  cutpoints gamma(vec const &extra) const {
    vec free(extra.size());
    double acc = 0;
    for(Eigen::Index j = 0; j < extra.size(); ++j)
      free[j] = acc += std::exp(extra[j]);
    return cutpoints(free);
  }

  /// unconstrained parameters from cutpoints
  vec gamma_inverse(vec const &free) const {
    vec out(free.size());
    double prev = 0;
    for(Eigen::Index j = 0; j < free.size(); ++j){
      out[j] = std::log(free[j] - prev);
      prev = free[j];
    }
    return out;
  }

  /// fixed parameters on the reported scale
  vec fixed_reported(vec const &fixed) const {
    vec out = fixed;
    if(n_extra() > 0)
      out.tail(n_extra()) = gamma(fixed.tail(n_extra())).free();
    return out;
  }

  built_likelihood build(std::size_t i, vec const &fixed, mat const &sigma) const {
    vec const beta = fixed.head(n_beta());
    switch(fam){
    case family::binomial:
      return build_binomial(binomial.at(i), beta, sigma);
    case family::multinomial: {
      vec full = vec::Zero(categories * n_x());
      full.tail(n_beta()) = beta;
      return build_multinomial(multinomial.at(i), full, sigma);
    }
    case family::ordered:
      return build_ordered(ordered.at(i), beta, gamma(fixed.tail(n_extra())),
                           sigma);
    case family::gsm:
      return build_gsm(gsm.at(i), beta, sigma);
    }
    throw error("dataset: unknown family");
  }

  /// maps a gradient from build() coordinates to the unconstrained ones
  vec chain_fixed(vec const &fixed, vec const &d_built) const {
    vec out(n_fixed());
    if(fam == family::multinomial){
      out = d_built.tail(n_beta());
      return out;
    }
    out.head(n_beta()) = d_built.head(n_beta());
    Eigen::Index const ne = n_extra();
    if(ne > 0){
      // gamma_k depends on theta_j for j <= k
      vec const th = fixed.tail(ne), dg = d_built.tail(ne);
      double acc = 0;
      for(Eigen::Index j = ne - 1; j >= 0; --j){
        acc += dg[j];
        out[n_beta() + j] = acc * std::exp(th[j]);
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// maximum likelihood

/**
 * One stage of the fit. Stochastic engines use max_samples per cluster
 * evaluation; a small rel_tol makes the cap bind so the objective is a
 * smooth function of the parameters under common random numbers. tol is the
 * gradient tolerance of the optimizer in this stage and f_tol the relative
 * change in the objective below which the stage stops; the latter matters
 * with Monte Carlo gradients whose noise exceeds tol.
 */
struct fit_stage {
  double rel_tol;
  long long max_samples;
  double tol;
  double f_tol{0};
};

struct fit_options {
  engine eng{engine::cdf};
  engine_options engine_opts{};
  /// empty means the engine specific default schedule
  std::vector<fit_stage> stages{};
  std::uint64_t seed{1};
  int threads{1};
  /// gradient tolerance for the deterministic engines
  double tol{1e-6};
  int max_iterations{200};
  /// start from the Laplace fit
  bool laplace_start{true};
  /// step for the finite difference gradients of the Laplace approximation
  double fd_step{1e-4};
  /// optional start on the unconstrained scale
  std::optional<vec> start{};
};

struct fit_result {
  engine eng{engine::cdf};
  /// fixed parameters followed by covariance parameters, unconstrained
  vec theta;
  vec fixed;
  mat sigma;
  /// fixed parameters then standard deviations and correlations
  vec reported;
  std::vector<std::string> names;
  double loglik{};
  int iterations{};
  int n_evals{};
  minimize_status status{minimize_status::converged};
  bool ok() const { return status == minimize_status::converged; }
};

/**
 * Default schedules: a coarse stage and a fine stage with the sample caps
 * doubled for the CDF engine.
 */
inline std::vector<fit_stage> default_stages(engine e, double tol = 1e-6){
  if(!is_stochastic(e))
    return {{0, 0, tol}};
  long long const mult = e == engine::cdf ? 2 : 1;
  return {{1e-10, 5000 * mult, 1e-3, 1e-6}, {1e-10, 25000 * mult, 1e-4, 1e-7}};
}

/**
 * Sum of the log marginal likelihoods and optionally the gradient wrt the
 * unconstrained parameters. Each cluster uses its own seed so the random
 * numbers are common across parameter values. Returns -inf if the
 * parameters are infeasible.
 */
inline double total_loglik(dataset const &data, sigma_param const &sp,
                           vec const &theta, engine e,
                           engine_options const &eopts, std::uint64_t seed,
                           int threads, vec *grad = nullptr){
  Eigen::Index const nf = data.n_fixed();
  vec const fixed = theta.head(nf), st = theta.tail(sp.size());
  mat const sigma = sp.sigma(st);
  std::size_t const n = data.size();
  std::vector<double> ll(n);
  std::vector<vec> d_fixed(grad ? n : 0);
  std::vector<mat> d_sigma(grad ? n : 0);
  std::atomic<bool> infeasible{false};

  parallel_for(n, threads, [&](std::size_t i){
    if(infeasible) return;
    engine_options o = eopts;
    o.cdf.seed = o.mc.seed = derive_seed(seed, i);
    try {
      auto const b = data.build(i, fixed, sigma);
      if(grad){
        auto const r = loglik_gradient(b, e, o);
        ll[i] = r.loglik.value;
        d_fixed[i] = r.d_fixed;
        d_sigma[i] = r.d_sigma;
      } else
        ll[i] = log_marginal(b, e, o).value;
    } catch(monotonicity_violation const&) {
      infeasible = true;
    } catch(not_positive_definite const&) {
      infeasible = true;
    }
  });
  if(infeasible) return -inf;

  double out{};
  for(double x : ll) out += x;
  if(grad){
    vec df = vec::Zero(data.n_beta() + data.n_extra() +
                       (data.fam == family::multinomial ? data.n_x() : 0));
    mat ds = mat::Zero(sp.dim(), sp.dim());
    for(std::size_t i = 0; i < n; ++i){
      df += d_fixed[i];
      ds += d_sigma[i];
    }
    grad->resize(theta.size());
    grad->head(nf) = data.chain_fixed(fixed, df);
    grad->tail(sp.size()) = sp.chain(st, ds);
  }
  return out;
}

namespace detail {

inline vec default_start(dataset const &data, sigma_param const &sp){
  // cutpoints one unit apart and unit variances
  vec out = vec::Zero(data.n_fixed() + sp.size());
  if(data.beta_start){
    if(data.beta_start->size() != data.n_beta())
      throw dimension_mismatch("fit_ml: beta_start has the wrong length");
    out.head(data.n_beta()) = *data.beta_start;
  }
  return out;
}

inline minimize_result fit_stage_run(dataset const &data, sigma_param const &sp,
                                     engine e, engine_options const &eopts,
                                     fit_options const &opts, vec const &start,
                                     double tol, double f_tol = 0){
  minimize_options mo;
  mo.tol = tol;
  mo.f_tol = f_tol;
  mo.max_iterations = opts.max_iterations;
  mo.backtracking = is_stochastic(e);

  objective_fn fn;
  if(e == engine::laplace){
    // the Laplace approximation is deterministic so central differences are
    // accurate
    fn = [&](vec const &x, vec &g){
      double const f = -total_loglik(data, sp, x, e, eopts, opts.seed,
                                     opts.threads);
      if(!std::isfinite(f)) return inf;
      g.resize(x.size());
      for(Eigen::Index j = 0; j < x.size(); ++j){
        vec xp = x, xm = x;
        double const h = opts.fd_step * std::max(1., std::abs(x[j]));
        xp[j] += h;
        xm[j] -= h;
        double const fp = -total_loglik(data, sp, xp, e, eopts, opts.seed,
                                        opts.threads),
                     fm = -total_loglik(data, sp, xm, e, eopts, opts.seed,
                                        opts.threads);
        g[j] = std::isfinite(fp) && std::isfinite(fm)
          ? (fp - fm) / (2 * h) : 0;
      }
      return f;
    };
  } else {
    fn = [&](vec const &x, vec &g){
      vec grad;
      double const ll = total_loglik(data, sp, x, e, eopts, opts.seed,
                                     opts.threads, &grad);
      if(!std::isfinite(ll)) return inf;
      g = -grad;
      return -ll;
    };
  }
  return quasi_newton_minimize(fn, start, mo);
}

} // namespace detail

/**
 * Maximizes the sum of the log marginal likelihoods over the fixed
 * parameters and the covariance parameters. Stochastic engines run a coarse
 * stage and then a fine stage from the coarse estimate.
 */
inline fit_result fit_ml(dataset const &data, sigma_param const &sp,
                         fit_options const &opts = {}){
  if(data.size() == 0)
    throw error("fit_ml: no clusters");
  if(sp.dim() != data.k())
    throw dimension_mismatch("fit_ml: covariance parameterization has the wrong dimension");

  vec x = opts.start ? *opts.start : detail::default_start(data, sp);
  if(x.size() != data.n_fixed() + sp.size())
    throw dimension_mismatch("fit_ml: start has the wrong length");

  fit_result out;
  out.eng = opts.eng;
  int iterations{}, n_evals{};

  if(opts.laplace_start && opts.eng != engine::laplace && !opts.start){
    auto const r = detail::fit_stage_run(data, sp, engine::laplace,
                                         opts.engine_opts, opts, x, opts.tol);
    if(r.x.allFinite()) x = r.x;
    iterations += r.iterations;
    n_evals += r.n_evals;
  }

  auto const stages = opts.stages.empty() ? default_stages(opts.eng, opts.tol)
                                          : opts.stages;
  minimize_result last{};
  engine_options eopts = opts.engine_opts;
  for(auto const &s : stages){
    if(is_stochastic(opts.eng)){
      eopts.cdf.rel_tol = eopts.mc.rel_tol = s.rel_tol;
      eopts.cdf.max_samples = eopts.mc.max_samples = s.max_samples;
    }
    last = detail::fit_stage_run(data, sp, opts.eng, eopts, opts, x, s.tol,
                                 s.f_tol);
    x = last.x;
    iterations += last.iterations;
    n_evals += last.n_evals;
  }

  Eigen::Index const nf = data.n_fixed();
  out.theta = x;
  out.fixed = x.head(nf);
  out.sigma = sp.sigma(x.tail(sp.size()));
  out.loglik = -last.f;
  out.iterations = iterations;
  out.n_evals = n_evals;
  out.status = last.status;

  out.names = data.fixed_names();
  for(auto &s : sp.names()) out.names.push_back(std::move(s));
  vec const fr = data.fixed_reported(out.fixed), sr = sp.reported(x.tail(sp.size()));
  out.reported.resize(fr.size() + sr.size());
  out.reported << fr, sr;
  return out;
}

/// mean and standard deviation of the reported estimates over seeds
struct seed_summary {
  std::vector<fit_result> fits;
  vec mean, sd;
  double loglik_mean{}, loglik_sd{};
};

inline seed_summary fit_over_seeds(dataset const &data, sigma_param const &sp,
                                   fit_options const &opts, int n_seeds){
  if(n_seeds < 1) throw error("fit_over_seeds: need at least one seed");
  seed_summary out;
  fit_options o = opts;
  for(int s = 0; s < n_seeds; ++s){
    o.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(s));
    out.fits.push_back(fit_ml(data, sp, o));
    // later seeds start at the first fit
    if(s == 0 && !o.start) o.start = out.fits[0].theta;
  }
  Eigen::Index const m = out.fits[0].reported.size();
  out.mean = vec::Zero(m);
  out.sd = vec::Zero(m);
  for(auto const &f : out.fits){
    out.mean += f.reported;
    out.loglik_mean += f.loglik;
  }
  out.mean /= n_seeds;
  out.loglik_mean /= n_seeds;
  if(n_seeds > 1){
    for(auto const &f : out.fits){
      out.sd += (f.reported - out.mean).array().square().matrix();
      out.loglik_sd += (f.loglik - out.loglik_mean) * (f.loglik - out.loglik_mean);
    }
    out.sd = (out.sd / (n_seeds - 1)).array().sqrt();
    out.loglik_sd = std::sqrt(out.loglik_sd / (n_seeds - 1));
  }
  return out;
}

} // namespace pmlm
