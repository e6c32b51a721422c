#pragma once

#include "models.hpp"
#include "random.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace pmlm {

struct precision_not_reached : error {
  using error::error;
};

/**
 * Runs fn(i) for i = 0, ..., n - 1 on up to n_threads threads. Work is
 * handed out with an atomic counter; results must be written to
 * preallocated slots so the reduction order does not depend on scheduling.
 */
template<class Fn>
void parallel_for(std::size_t n, int n_threads, Fn &&fn){
  if(n_threads <= 1 || n <= 1){
    for(std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mtx;
  auto worker = [&]{
    for(std::size_t i; (i = next++) < n;){
      try {
        fn(i);
      } catch(...) {
        std::lock_guard<std::mutex> lock(failure_mtx);
        if(!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  int const used = static_cast<int>(std::min<std::size_t>(n_threads, n));
  for(int t = 0; t < used; ++t) pool.emplace_back(worker);
  for(auto &t : pool) t.join();
  if(failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// simulation

struct sim_spec {
  family fam{family::binomial};
  int n{2}, k{2};
  /// categories for the multinomial model where k = c
  int c{3};
  int n_reps{100};
  std::uint64_t seed{1};
};

struct binomial_sample {
  binomial_cluster cluster;
  vec beta;
  mat sigma;
  vec u;
};

/**
 * One cluster from the binary simulation design: Sigma ~ W(I / (5K), 5K),
 * U ~ N(0, Sigma), eta_i ~ N(0, 1), z_i = (1 / K, z_i') with
 * z_i' ~ N(0, I / K), and y_i ~ Bin(Phi(eta_i + z_i^T u), 1). eta_i is
 * stored as the single covariate with beta = 1.
 */
inline binomial_sample simulate_binomial_cluster(int n, int k, rng &gen){
  binomial_sample out;
  double const kd = k;
  out.sigma = gen.wishart(mat::Identity(k, k) / (5 * kd), 5 * kd);
  out.u = cholesky(out.sigma) * gen.normal(k);
  out.beta = vec::Ones(1);
  auto &cl = out.cluster;
  cl.x.resize(n, 1);
  cl.z.resize(n, k);
  cl.y.resize(n);
  cl.m.assign(n, 1);
  double const sd = 1 / std::sqrt(kd);
  for(int i = 0; i < n; ++i){
    cl.x(i, 0) = gen.normal();
    cl.z(i, 0) = 1 / kd;
    for(int j = 1; j < k; ++j)
      cl.z(i, j) = sd * gen.normal();
    double const prob = pnorm(cl.x(i, 0) + cl.z.row(i).dot(out.u));
    cl.y[i] = gen.uniform() < prob;
  }
  return out;
}

/// n_reps clusters where replicate r uses the seed derive_seed(seed, r)
inline std::vector<binomial_sample> simulate_binomial(sim_spec const &spec){
  if(spec.n < 1 || spec.k < 1 || spec.n_reps < 1)
    throw error("simulate_binomial: dimensions must be positive");
  std::vector<binomial_sample> out;
  out.reserve(spec.n_reps);
  for(int r = 0; r < spec.n_reps; ++r){
    rng gen(derive_seed(spec.seed, r));
    out.push_back(simulate_binomial_cluster(spec.n, spec.k, gen));
  }
  return out;
}

struct multinomial_sample {
  multinomial_cluster cluster;
  vec beta;
  mat sigma;
  vec u;
};

/**
 * One cluster from the multinomial design with K = c: Sigma ~ W(I / (5c), 5c),
 * U ~ N(0, Sigma), eta_i = B x_i ~ N(0, I), Z_i = I, and y_i the index of
 * the largest A_i ~ N(eta_i + u, I). eta_i is stored as x_i with B = I.
 */
inline multinomial_sample simulate_multinomial_cluster(int n, int c, rng &gen){
  multinomial_sample out;
  double const cd = c;
  out.sigma = gen.wishart(mat::Identity(c, c) / (5 * cd), 5 * cd);
  out.u = cholesky(out.sigma) * gen.normal(c);
  out.beta = vec::Zero(c * c);
  for(int k = 0; k < c; ++k) out.beta[k * c + k] = 1;
  auto &cl = out.cluster;
  cl.c = c;
  cl.x.resize(n, c);
  cl.y.resize(n);
  cl.z.assign(n, mat::Identity(c, c));
  for(int i = 0; i < n; ++i){
    for(int k = 0; k < c; ++k) cl.x(i, k) = gen.normal();
    vec const a = cl.x.row(i).transpose() + out.u + gen.normal(c);
    Eigen::Index best;
    a.maxCoeff(&best);
    cl.y[i] = static_cast<int>(best) + 1;
  }
  return out;
}

inline std::vector<multinomial_sample> simulate_multinomial(sim_spec const &spec){
  if(spec.n < 1 || spec.c < 2 || spec.n_reps < 1)
    throw error("simulate_multinomial: invalid dimensions");
  std::vector<multinomial_sample> out;
  out.reserve(spec.n_reps);
  for(int r = 0; r < spec.n_reps; ++r){
    rng gen(derive_seed(spec.seed, r));
    out.push_back(simulate_multinomial_cluster(spec.n, spec.c, gen));
  }
  return out;
}

struct crossed_spec {
  int n_clusters{4}, n_female{4}, n_male{4};
  /// fixed effects for (1, I_m, I_f, I_f I_m)
  vec beta{vec{{.6, -.4, -1.7, 2.1}}};
  double sigma_f{1.2}, sigma_m{1.2};
  std::uint64_t seed{1};
};

/**
 * Crossed design like the mating experiment: every female is paired with
 * every male within a cluster. Each animal is of the first breed with
 * probability 1 / 2. The random effects are ordered females first.
 */
inline std::vector<binomial_cluster> simulate_crossed(crossed_spec const &spec){
  rng gen(spec.seed);
  std::vector<binomial_cluster> out;
  int const nf = spec.n_female, nm = spec.n_male, k = nf + nm;
  for(int g = 0; g < spec.n_clusters; ++g){
    std::vector<int> breed_f(nf), breed_m(nm);
    for(auto &b : breed_f) b = gen.uniform() < .5;
    for(auto &b : breed_m) b = gen.uniform() < .5;
    vec u(k);
    for(int j = 0; j < nf; ++j) u[j] = spec.sigma_f * gen.normal();
    for(int j = 0; j < nm; ++j) u[nf + j] = spec.sigma_m * gen.normal();

    binomial_cluster cl;
    int const n = nf * nm;
    cl.x = mat::Zero(n, 4);
    cl.z = mat::Zero(n, k);
    cl.y.resize(n);
    cl.m.assign(n, 1);
    int i{};
    for(int f = 0; f < nf; ++f)
      for(int m = 0; m < nm; ++m, ++i){
        cl.x.row(i) << 1, breed_m[m], breed_f[f], breed_m[m] * breed_f[f];
        cl.z(i, f) = 1;
        cl.z(i, nf + m) = 1;
        double const eta = cl.x.row(i).dot(spec.beta) + u[f] + u[nf + m];
        cl.y[i] = gen.uniform() < pnorm(eta);
      }
    out.push_back(std::move(cl));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ground truth

struct ground_truth_options {
  long long base_samples{100000};
  long long max_samples{1000000};
  /// stop once multiplier * SE < precision * |log L| on the log scale
  double precision{2e-3};
  double multiplier{4};
  std::uint64_t seed{1};
};

struct ground_truth_result {
  double value{};
  double std_error{};
  long long n_evals{};
  bool converged{false};
};

/**
 * Adaptive importance sampling with antithetic variables starting at
 * base_samples and doubling up to max_samples until the precision criterion
 * holds. The caller decides what to do when it fails.
 */
inline ground_truth_result ground_truth(built_likelihood const &b,
                                        ground_truth_options const &opts = {}){
  ground_truth_result out;
  if(b.skew.k2() == 0){
    out.value = b.log_c;
    out.converged = true;
    return out;
  }
  engine_options eo;
  std::optional<gwi_problem> store;
  gwi_problem const &p = maybe_reduce(b, eo, store);
  auto const mode = find_mode(p);

  mc_options mc;
  mc.seed = opts.seed;
  mc.rel_tol = 0;
  mc.abs_tol = 0;
  for(long long n = opts.base_samples;; n = std::min(2 * n, opts.max_samples)){
    mc.max_samples = n;
    auto const r = importance_sample(p, mc, &mode);
    out.value = b.log_c + r.log_estimate();
    out.std_error = r.log_std_error();
    out.n_evals = r.n_evals;
    if(opts.multiplier * out.std_error < opts.precision * std::abs(out.value) ||
         out.std_error == 0){
      out.converged = true;
      break;
    }
    if(n >= opts.max_samples) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// methods and calibration

/// an engine together with whether it adapts to the mode
struct method {
  engine e;
  bool adaptive{true};

  std::string name() const {
    switch(e){
    case engine::spherical_radial: return adaptive ? "adaptive_sr" : "sr";
    case engine::rqmc: return adaptive ? "adaptive_rqmc" : "rqmc";
    case engine::importance: return adaptive ? "adaptive_is" : "is";
    default: return to_string(e);
    }
  }
  bool is_quadrature() const { return e == engine::ghq || e == engine::aghq; }
  bool is_stochastic() const { return pmlm::is_stochastic(e); }
};

inline method parse_method(std::string const &s){
  if(s == "ghq") return {engine::ghq, false};
  if(s == "aghq") return {engine::aghq, true};
  if(s == "cdf") return {engine::cdf, false};
  if(s == "laplace") return {engine::laplace, true};
  if(s == "adaptive_sr") return {engine::spherical_radial, true};
  if(s == "sr") return {engine::spherical_radial, false};
  if(s == "adaptive_rqmc") return {engine::rqmc, true};
  if(s == "rqmc") return {engine::rqmc, false};
  if(s == "adaptive_is") return {engine::importance, true};
  if(s == "is") return {engine::importance, false};
  throw error("unknown method '" + s + "'");
}

/// the methods compared in the timing tables
inline std::vector<method> table_methods(){
  return {{engine::ghq, false}, {engine::aghq, true}, {engine::cdf, false},
          {engine::spherical_radial, true}, {engine::rqmc, false},
          {engine::rqmc, true}};
}

struct tuning {
  method m;
  double rel_tol{1e-2};
  int nodes{1};
  long long max_samples{250000};
  bool failed{false};
  /// scaled RMSE of the calibration runs
  double rmse{};
};

/// one run of a method with the given tuning and seed
inline loglik_result run_method(built_likelihood const &b, tuning const &t,
                                std::uint64_t seed, bool reduce_dimension = true,
                                double node_budget = default_node_budget){
  engine_options eo;
  eo.reduce_dimension = reduce_dimension;
  eo.node_budget = node_budget;
  eo.nodes = t.nodes;
  eo.cdf.rel_tol = t.rel_tol;
  eo.cdf.max_samples = t.max_samples;
  eo.cdf.seed = seed;
  eo.mc.rel_tol = t.rel_tol;
  eo.mc.max_samples = t.max_samples;
  eo.mc.seed = seed;
  eo.mc.adaptive = t.m.adaptive;
  return log_marginal(b, t.m.e, eo);
}

/// sqrt(mean(((l_i - truth) / truth)^2))
inline double scaled_rmse(std::vector<double> const &est, double truth){
  if(est.empty()) return 0;
  double ss{};
  for(double l : est) ss += (l - truth) * (l - truth);
  return std::sqrt(ss / static_cast<double>(est.size())) / std::abs(truth);
}

struct calibration_options {
  double target{2e-3};
  int n_runs{20};
  double start_rel_tol{.1};
  double min_rel_tol{1e-8};
  long long max_samples{250000};
  int max_nodes{25};
  double node_budget{default_node_budget};
  bool reduce_dimension{true};
  std::uint64_t seed{1};
};

/**
 * Stochastic methods: halve rel_tol from start_rel_tol until the scaled
 * RMSE of n_runs independent runs is below the target. Quadrature: the
 * smallest b for which b - 3, ..., b all have scaled error below the target.
 * The result is flagged as failed when the target cannot be reached within
 * the caps.
 */
inline tuning calibrate_method(method const &m, built_likelihood const &b,
                               double truth, calibration_options const &opts = {}){
  tuning t{m};
  t.max_samples = opts.max_samples;

  if(m.e == engine::laplace){
    t.rmse = scaled_rmse({run_method(b, t, opts.seed, opts.reduce_dimension).value},
                         truth);
    t.failed = !(t.rmse < opts.target);
    return t;
  }

  if(m.is_quadrature()){
    std::vector<double> errs;
    for(int nodes = 1; nodes <= opts.max_nodes; ++nodes){
      t.nodes = nodes;
      double val;
      try {
        val = run_method(b, t, opts.seed, opts.reduce_dimension,
                         opts.node_budget).value;
      } catch(node_budget_exceeded const&) {
        t.failed = true;
        return t;
      }
      errs.push_back(std::abs((val - truth) / truth));
      std::size_t const first = errs.size() > 4 ? errs.size() - 4 : 0;
      bool ok = true;
      double mx{};
      for(std::size_t i = first; i < errs.size(); ++i){
        ok &= errs[i] < opts.target;
        mx = std::max(mx, errs[i]);
      }
      if(ok){
        t.rmse = mx;
        return t;
      }
    }
    t.failed = true;
    return t;
  }

  std::vector<double> vals(opts.n_runs);
  for(t.rel_tol = opts.start_rel_tol; t.rel_tol >= opts.min_rel_tol;
      t.rel_tol /= 2){
    bool all_capped = true;
    for(int r = 0; r < opts.n_runs; ++r){
      auto const res = run_method(b, t, derive_seed(opts.seed, r),
                                  opts.reduce_dimension);
      vals[r] = res.value;
      all_capped &= res.status == approx_status::max_samples;
    }
    t.rmse = scaled_rmse(vals, truth);
    if(t.rmse < opts.target) return t;
    if(all_capped) break;
  }
  t.failed = true;
  return t;
}

// ---------------------------------------------------------------------------
// benchmark

struct benchmark_options {
  calibration_options calibration;
  ground_truth_options truth;
  int n_timing_runs{5};
  bool warm_up{true};
  int threads{1};
  /// extra samples drawn when the ground truth fails
  int max_redraws{20};
};

/// per method summaries over the simulated clusters
struct method_summary {
  std::string method;
  int n{}, k{};
  double median_time{}, mean_time{};
  double mean_rmse{};
  int n_ok{}, n_failed{};
  /// median of the calibrated rel_tol or node count
  double median_tuning{};
  /// number of runs that used the reduced dimension integral
  int n_reduced{};
};

struct benchmark_result {
  std::vector<method_summary> rows;
  int n_samples{};
  int n_truth_failed{};
  int n_excluded{};
};

namespace detail {

struct sample_record {
  double truth{};
  bool truth_ok{false};
  std::vector<tuning> tunings;
  std::optional<built_likelihood> built;
};

inline double median(std::vector<double> v){
  if(v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  std::size_t const m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
}

} // namespace detail

using detail::median;

/**
 * The simulation protocol: simulate, compute the ground truth, calibrate
 * every method to the target precision, and time n_timing_runs runs per
 * sample with the calibrated settings. Samples for which any method fails
 * are excluded from all methods. Calibration costs are not timed.
 */
inline benchmark_result benchmark(sim_spec const &spec,
                                  std::vector<method> const &methods,
                                  benchmark_options const &opts = {}){
  if(spec.fam != family::binomial && spec.fam != family::multinomial)
    throw error("benchmark: only the binomial and multinomial designs are supported");
  int const n_rep = spec.n_reps;
  std::vector<detail::sample_record> rec(n_rep);
  std::atomic<int> truth_failed{0};

  parallel_for(n_rep, opts.threads, [&](std::size_t s){
    auto &r = rec[s];
    for(int attempt = 0; attempt <= opts.max_redraws; ++attempt){
      rng gen(derive_seed(spec.seed, s + static_cast<std::size_t>(attempt) * n_rep));
      if(spec.fam == family::binomial){
        auto const smp = simulate_binomial_cluster(spec.n, spec.k, gen);
        r.built.emplace(build_binomial(smp.cluster, smp.beta, smp.sigma));
      } else {
        auto const smp = simulate_multinomial_cluster(spec.n, spec.c, gen);
        r.built.emplace(build_multinomial(smp.cluster, smp.beta, smp.sigma));
      }
      auto gt_opts = opts.truth;
      gt_opts.seed = derive_seed(opts.truth.seed, s);
      auto const gt = ground_truth(*r.built, gt_opts);
      if(gt.converged){
        r.truth = gt.value;
        r.truth_ok = true;
        break;
      }
      ++truth_failed;
    }
    if(!r.truth_ok) return;
    auto cal = opts.calibration;
    cal.seed = derive_seed(opts.calibration.seed, s);
    for(auto const &m : methods)
      r.tunings.push_back(calibrate_method(m, *r.built, r.truth, cal));
  });

  benchmark_result out;
  out.n_samples = n_rep;
  out.n_truth_failed = truth_failed;
  std::vector<std::vector<double>> times(methods.size()), rmses(methods.size()),
    tunes(methods.size());
  std::vector<int> failed(methods.size(), 0), reduced(methods.size(), 0);

  // timing is done sequentially in a fixed order
  for(int s = 0; s < n_rep; ++s){
    auto const &r = rec[s];
    if(!r.truth_ok){
      ++out.n_excluded;
      continue;
    }
    bool any_failed = false;
    for(std::size_t j = 0; j < methods.size(); ++j)
      if(r.tunings[j].failed){
        ++failed[j];
        any_failed = true;
      }
    if(any_failed){
      ++out.n_excluded;
      continue;
    }

    for(std::size_t j = 0; j < methods.size(); ++j){
      auto const &t = r.tunings[j];
      auto const &b = *r.built;
      std::uint64_t const base = derive_seed(opts.calibration.seed, 7919 + s);
      if(opts.warm_up)
        run_method(b, t, base, opts.calibration.reduce_dimension,
                   opts.calibration.node_budget);
      double total{};
      std::vector<double> vals;
      for(int k = 0; k < opts.n_timing_runs; ++k){
        auto const start = detail::clock::now();
        auto const res = run_method(b, t, derive_seed(base, k + 1),
                                    opts.calibration.reduce_dimension,
                                    opts.calibration.node_budget);
        total += detail::seconds_since(start);
        vals.push_back(res.value);
        reduced[j] += res.reduced;
      }
      times[j].push_back(total / opts.n_timing_runs);
      if(t.m.is_quadrature()){
        // the error over b - 3, ..., b nodes
        vals.clear();
        for(int nodes = std::max(1, t.nodes - 3); nodes <= t.nodes; ++nodes){
          auto tt = t;
          tt.nodes = nodes;
          vals.push_back(run_method(b, tt, base, opts.calibration.reduce_dimension,
                                    opts.calibration.node_budget).value);
        }
      }
      rmses[j].push_back(scaled_rmse(vals, r.truth));
      tunes[j].push_back(t.m.is_quadrature() ? t.nodes : t.rel_tol);
    }
  }

  for(std::size_t j = 0; j < methods.size(); ++j){
    method_summary ms;
    ms.method = methods[j].name();
    ms.n = spec.n;
    ms.k = spec.fam == family::multinomial ? spec.c : spec.k;
    ms.n_ok = static_cast<int>(times[j].size());
    ms.n_failed = failed[j];
    ms.n_reduced = reduced[j];
    if(!times[j].empty()){
      ms.median_time = median(times[j]);
      double sum{};
      for(double x : times[j]) sum += x;
      ms.mean_time = sum / static_cast<double>(times[j].size());
      sum = 0;
      for(double x : rmses[j]) sum += x;
      ms.mean_rmse = sum / static_cast<double>(rmses[j].size());
      ms.median_tuning = median(tunes[j]);
    }
    out.rows.push_back(ms);
  }
  return out;
}

} // namespace pmlm
