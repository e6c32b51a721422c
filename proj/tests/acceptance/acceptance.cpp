// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// with a non-zero status if any criterion fails.

#include <pmlm/pmlm.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>

using namespace pmlm;

namespace {

struct outcome {
  bool pass{false};
  bool skipped{false};
  std::string detail;
};

int n_failed{};

void report(int id, char const *name, outcome const &o, double seconds){
  char const *tag = o.skipped ? "SKIP" : o.pass ? "PASS" : "FAIL";
  std::printf("[%s] %d %s: %s (%.1f s)\n", tag, id, name, o.detail.c_str(),
              seconds);
  std::fflush(stdout);
  if(!o.pass && !o.skipped) ++n_failed;
}

template<class Fn>
void run(int id, char const *name, Fn &&fn){
  auto const start = detail::clock::now();
  outcome o;
  try {
    o = fn();
  } catch(std::exception const &e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  report(id, name, o, detail::seconds_since(start));
}

template<class... Args>
std::string fmt(char const *f, Args... args){
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// random instances

/// a cluster builder with the parameters it was simulated from
struct instance {
  std::function<built_likelihood(vec const&, mat const&)> build;
  vec fixed;
  mat sigma;

  built_likelihood operator()() const { return build(fixed, sigma); }
};

int draw(rng &gen, int lo, int hi){
  return lo + static_cast<int>(gen.uniform_int(hi - lo + 1));
}

mat draw_sigma(rng &gen, int k){
  return gen.wishart(mat::Identity(k, k) / (5. * k), 5. * k);
}

/// z_i = (1 / K, z_i') with z_i' ~ N(0, I / K)
mat draw_z(rng &gen, int n, int k){
  mat z(n, k);
  for(int i = 0; i < n; ++i){
    z(i, 0) = 1. / k;
    for(int j = 1; j < k; ++j) z(i, j) = gen.normal() / std::sqrt(k);
  }
  return z;
}

instance binomial_instance(rng &gen, int max_n = 6){
  int const n = draw(gen, 1, max_n), k = draw(gen, 1, 3);
  auto const s = simulate_binomial_cluster(n, k, gen);
  auto cl = std::make_shared<binomial_cluster>(s.cluster);
  return {[cl](vec const &f, mat const &sig){ return build_binomial(*cl, f, sig); },
          s.beta, s.sigma};
}

instance multinomial_instance(rng &gen, int max_n = 6){
  int const n = draw(gen, 1, max_n), c = draw(gen, 2, 3);
  auto const s = simulate_multinomial_cluster(n, c, gen);
  auto cl = std::make_shared<multinomial_cluster>(s.cluster);
  return {[cl](vec const &f, mat const &sig){
            return build_multinomial(*cl, f, sig);
          }, s.beta, s.sigma};
}

instance ordered_instance(rng &gen){
  int const n = draw(gen, 1, 6), k = draw(gen, 1, 3), c = draw(gen, 3, 4);
  mat const sigma = draw_sigma(gen, k);
  vec const u = cholesky(sigma) * gen.normal(k);
  auto cl = std::make_shared<ordered_cluster>();
  cl->c = c;
  cl->x = gen.normal(n).reshaped(n, 1);
  cl->z = draw_z(gen, n, k);
  vec fixed(1 + c - 2);
  fixed[0] = .5 * gen.normal();
  double g = 0;
  for(int j = 1; j <= c - 2; ++j) fixed[j] = g += .4 + gen.uniform();
  cutpoints const gamma(fixed.tail(c - 2));
  for(int i = 0; i < n; ++i){
    double const latent = cl->x(i, 0) * fixed[0] + cl->z.row(i).dot(u) +
      gen.normal();
    int y = 1;
    while(y < c && latent > gamma(y)) ++y;
    cl->y.push_back(y);
  }
  int const ce = c;
  return {[cl, ce](vec const &f, mat const &sig){
            return build_ordered(*cl, f.head(1), cutpoints(f.tail(ce - 2)), sig);
          }, fixed, sigma};
}

/// censored normal regression written as a probit survival model
instance gsm_instance(rng &gen){
  int const n = draw(gen, 1, 6), k = draw(gen, 1, 3);
  mat const sigma = draw_sigma(gen, k);
  vec const u = cholesky(sigma) * gen.normal(k);
  vec const fixed{{1 + gen.uniform(), .5 * gen.normal()}};
  auto cl = std::make_shared<gsm_cluster>();
  cl->z = draw_z(gen, n, k);
  cl->t.resize(n);
  cl->x.resize(n, 2);
  cl->dx.resize(n, 2);
  for(int i = 0; i < n; ++i){
    double const x = gen.normal();
    double const t = (gen.normal() - fixed[1] * x - cl->z.row(i).dot(u)) / fixed[0],
                 cens = .3 + gen.normal();
    cl->event.push_back(t <= cens);
    cl->t[i] = std::min(t, cens);
    cl->x.row(i) << cl->t[i], x;
    cl->dx.row(i) << 1, 0;
  }
  return {[cl](vec const &f, mat const &sig){ return build_gsm(*cl, f, sig); },
          fixed, sigma};
}

using generator = instance (*)(rng&);

struct family_gen {
  char const *name;
  generator gen;
};

std::vector<family_gen> const families = {
  {"binomial", [](rng &g){ return binomial_instance(g); }},
  {"multinomial", [](rng &g){ return multinomial_instance(g); }},
  {"ordered", ordered_instance},
  {"gsm", gsm_instance}};

// ---------------------------------------------------------------------------
// 1. representation equivalence

outcome representation_equivalence(){
  outcome out;
  out.pass = true;
  auto const start = detail::clock::now();
  engine_options eo;
  eo.cdf.rel_tol = 2e-4;
  eo.mc.rel_tol = 2e-4;
  for(std::size_t f = 0; f < families.size(); ++f){
    rng gen(derive_seed(101, f));
    int agree{};
    for(int r = 0; r < 100; ++r){
      auto const b = families[f].gen(gen)();
      eo.cdf.seed = eo.mc.seed = derive_seed(202, 1000 * f + r);
      auto const c = log_marginal(b, engine::cdf, eo),
                 g = log_marginal(b, engine::spherical_radial, eo);
      agree += std::abs(c.value - g.value) <=
        4 * std::hypot(c.std_error, g.std_error) + 1e-12;
    }
    out.pass &= agree >= 97;
    out.detail += fmt("%s %d/100, ", families[f].name, agree);
  }
  double const secs = detail::seconds_since(start);
  out.pass &= secs <= 300;
  out.detail += "required >= 97 each within 300 s";
  return out;
}

// ---------------------------------------------------------------------------
// 2. MVN CDF oracle

outcome cdf_oracle(){
  outcome out;
  auto const start = detail::clock::now();
  mat s(2, 2);
  s << 1, .5, .5, 1;
  double const orth = mvn_cdf(vec::Zero(2), vec::Zero(2), s).estimate;
  double const orth_err = std::abs(orth - 1. / 3);

  int agree{};
  double worst_z{};
  for(int r = 0; r < 20; ++r){
    rng gen(derive_seed(303, r));
    int const k = 5;
    mat const sig = gen.wishart(mat::Identity(k, k) / k, k + 2);
    vec const mu = .3 * gen.normal(k);
    vec lo(k), up(k);
    for(int j = 0; j < k; ++j){
      lo[j] = -.3 - 1.5 * gen.uniform();
      up[j] = .3 + 1.5 * gen.uniform();
    }
    auto const est = mvn_interval({lo, up}, mu, sig);

    // hit or miss with 10^7 draws
    mat const l = cholesky(sig);
    long long const n = 10000000;
    long long hits{};
    vec z(k), x(k);
    for(long long i = 0; i < n; ++i){
      for(auto &v : z) v = gen.normal();
      x.noalias() = l.triangularView<Eigen::Lower>() * z;
      bool in = true;
      for(int j = 0; j < k && in; ++j){
        double const v = x[j] + mu[j];
        in = v > lo[j] && v <= up[j];
      }
      hits += in;
    }
    double const p = static_cast<double>(hits) / n;
    double const se = std::hypot(std::sqrt(p * (1 - p) / n), est.std_error);
    double const zscore = std::abs(est.estimate - p) / se;
    worst_z = std::max(worst_z, zscore);
    agree += zscore <= 4;
  }
  double const secs = detail::seconds_since(start);
  out.pass = orth_err <= 5e-4 && agree == 20 && secs <= 120;
  out.detail = fmt("orthant error %.2e (<= 5e-4), 5-D vs 1e7 MC %d/20 within "
                   "4 SE (max %.2f SE), within 120 s", orth_err, agree, worst_z);
  return out;
}

// ---------------------------------------------------------------------------
// 3. quadrature exactness

/// E prod z_j^a_j for z ~ N(0, I)
double gaussian_moment(std::vector<int> const &a){
  double out = 1;
  for(int e : a){
    if(e % 2) return 0;
    for(int m = e - 1; m > 1; m -= 2) out *= m;
  }
  return out;
}

/// all exponent vectors of length k with total degree <= d
void monomials(int k, int d, std::vector<int> &cur,
               std::vector<std::vector<int>> &out){
  if(static_cast<int>(cur.size()) == k){
    out.push_back(cur);
    return;
  }
  for(int e = 0; e <= d; ++e){
    cur.push_back(e);
    monomials(k, d - e, cur, out);
    cur.pop_back();
  }
}

outcome quadrature_exactness(){
  outcome out;
  double worst_ghq{};
  for(int b = 1; b <= 20; ++b){
    auto const &rule = ghq_rule(b);
    for(int d = 0; d <= 2 * b - 1; ++d){
      // odd moments are zero so scale by the absolute moment
      double got{}, scale{};
      for(int i = 0; i < b; ++i){
        got += rule.weights[i] * std::pow(rule.nodes[i], d);
        scale += rule.weights[i] * std::pow(std::abs(rule.nodes[i]), d);
      }
      double const expect = gaussian_moment({d});
      worst_ghq = std::max(worst_ghq,
                           std::abs(got - expect) / std::max(1., scale));
    }
  }

  double worst_sr{}, worst_spread{};
  for(int k = 2; k <= 6; ++k){
    std::vector<std::vector<int>> mons;
    std::vector<int> cur;
    monomials(k, 5, cur, mons);
    rng coef_gen(derive_seed(404, k));
    std::vector<double> coef(mons.size());
    double expect{};
    for(std::size_t m = 0; m < mons.size(); ++m){
      coef[m] = coef_gen.normal();
      expect += coef[m] * gaussian_moment(mons[m]);
    }
    double lo = inf, hi = -inf;
    for(std::uint64_t s = 1; s <= 20; ++s){
      rng gen(derive_seed(405, s));
      auto const draw_k = spherical_radial_draw(k, gen);
      double est{};
      for(std::size_t i = 0; i < draw_k.points.size(); ++i){
        double f{};
        for(std::size_t m = 0; m < mons.size(); ++m){
          double term = coef[m];
          for(int j = 0; j < k; ++j)
            term *= std::pow(draw_k.points[i][j], mons[m][j]);
          f += term;
        }
        est += draw_k.weights[i] * f;
      }
      lo = std::min(lo, est);
      hi = std::max(hi, est);
      worst_sr = std::max(worst_sr, std::abs(est - expect) / std::max(1., std::abs(expect)));
    }
    worst_spread = std::max(worst_spread, (hi - lo) / std::max(1., std::abs(expect)));
  }
  out.pass = worst_ghq <= 1e-11 && worst_sr <= 1e-10 && worst_spread <= 1e-10;
  out.detail = fmt("GHQ b=1..20 max rel. moment error %.1e (<= 1e-11); "
                   "spherical-radial K=2..6 degree 5 max error %.1e, "
                   "cross-seed spread %.1e", worst_ghq, worst_sr, worst_spread);
  return out;
}

// ---------------------------------------------------------------------------
// 4. gradients

/// max over entries of |an - fd| / max(|fd|, 0.01 max|fd|)
double rel_error(vec const &an, vec const &fd){
  double const floor = 1e-2 * std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
  double out{};
  for(Eigen::Index i = 0; i < an.size(); ++i)
    out = std::max(out, std::abs(an[i] - fd[i]) / std::max(std::abs(fd[i]), floor));
  return out;
}

/// stacks the lower triangle with off-diagonal derivatives doubled
vec sigma_lower(mat const &d, bool symmetric_half){
  Eigen::Index const k = d.rows();
  vec out(k * (k + 1) / 2);
  Eigen::Index idx{};
  for(Eigen::Index j = 0; j < k; ++j)
    for(Eigen::Index i = j; i < k; ++i)
      out[idx++] = i == j || !symmetric_half ? d(i, j) : d(i, j) + d(j, i);
  return out;
}

double loglik_fd_error(instance const &inst, engine_options const &eo){
  auto const g = loglik_gradient(inst(), engine::cdf, eo);
  double const h = 1e-4;
  auto val = [&](vec const &f, mat const &s){
    return log_marginal(inst.build(f, s), engine::cdf, eo).value;
  };
  Eigen::Index const nf = inst.fixed.size(), k = inst.sigma.rows();
  vec an(nf + k * (k + 1) / 2), fd(an.size());
  an << g.d_fixed, sigma_lower(g.d_sigma, true);
  for(Eigen::Index i = 0; i < nf; ++i){
    vec fp = inst.fixed, fm = inst.fixed;
    fp[i] += h;
    fm[i] -= h;
    fd[i] = (val(fp, inst.sigma) - val(fm, inst.sigma)) / (2 * h);
  }
  Eigen::Index idx = nf;
  for(Eigen::Index j = 0; j < k; ++j)
    for(Eigen::Index i = j; i < k; ++i){
      mat sp = inst.sigma, sm = inst.sigma;
      sp(i, j) += h;
      sm(i, j) -= h;
      if(i != j){
        sp(j, i) += h;
        sm(j, i) -= h;
      }
      fd[idx++] = (val(inst.fixed, sp) - val(inst.fixed, sm)) / (2 * h);
    }
  return rel_error(an, fd);
}

double cdf_fd_error(rng &gen, cdf_options const &opts){
  int const k = draw(gen, 2, 6);
  mat const sig = gen.wishart(mat::Identity(k, k) / k, k + 2);
  vec const mu = .3 * gen.normal(k);
  vec lo(k), up(k);
  for(int j = 0; j < k; ++j){
    up[j] = .2 + 1.5 * gen.uniform();
    lo[j] = gen.uniform() < .5 ? -inf : -.2 - 1.5 * gen.uniform();
  }
  hyper_rect const rect{lo, up};
  auto const g = mvn_rect_grad(rect, mu, sig, opts);
  double const h = 1e-4;
  auto prob = [&](hyper_rect const &r, vec const &m, mat const &s){
    return mvn_interval(r, m, s, opts).estimate;
  };
  std::vector<double> an, fd;
  for(int i = 0; i < k; ++i){
    vec mp = mu, mm = mu;
    mp[i] += h;
    mm[i] -= h;
    an.push_back(g.d_mu[i]);
    fd.push_back((prob(rect, mp, sig) - prob(rect, mm, sig)) / (2 * h));
    auto rp = rect, rm = rect;
    rp.upper[i] += h;
    rm.upper[i] -= h;
    an.push_back(g.d_upper[i]);
    fd.push_back((prob(rp, mu, sig) - prob(rm, mu, sig)) / (2 * h));
    if(std::isfinite(lo[i])){
      rp = rect;
      rm = rect;
      rp.lower[i] += h;
      rm.lower[i] -= h;
      an.push_back(g.d_lower[i]);
      fd.push_back((prob(rp, mu, sig) - prob(rm, mu, sig)) / (2 * h));
    }
  }
  vec const an_s = sigma_lower(g.d_sigma, true);
  Eigen::Index idx{};
  for(int j = 0; j < k; ++j)
    for(int i = j; i < k; ++i){
      mat sp = sig, sm = sig;
      sp(i, j) += h;
      sm(i, j) -= h;
      if(i != j){
        sp(j, i) += h;
        sm(j, i) -= h;
      }
      an.push_back(an_s[idx++]);
      fd.push_back((prob(rect, mu, sp) - prob(rect, mu, sm)) / (2 * h));
    }
  return rel_error(Eigen::Map<vec>(an.data(), an.size()),
                   Eigen::Map<vec>(fd.data(), fd.size()));
}

outcome gradient_correctness(){
  outcome out;
  out.pass = true;
  auto const start = detail::clock::now();
  engine_options eo;
  eo.cdf.rel_tol = 1e-14;
  eo.cdf.max_samples = 10000;
  for(std::size_t f = 0; f < families.size(); ++f){
    rng gen(derive_seed(505, f));
    double worst{};
    for(int r = 0; r < 20; ++r){
      eo.cdf.seed = derive_seed(506, 100 * f + r);
      worst = std::max(worst, loglik_fd_error(families[f].gen(gen), eo));
    }
    out.pass &= worst <= 1e-3;
    out.detail += fmt("%s %.1e, ", families[f].name, worst);
  }
  rng gen(507);
  double worst{};
  for(int r = 0; r < 20; ++r){
    cdf_options opts;
    opts.rel_tol = 1e-14;
    opts.max_samples = 10000;
    opts.seed = derive_seed(508, r);
    worst = std::max(worst, cdf_fd_error(gen, opts));
  }
  out.pass &= worst <= 1e-3;
  double const secs = detail::seconds_since(start);
  out.pass &= secs <= 120;
  out.detail += fmt("mvn_cdf_grad %.1e; max rel. error vs CRN central "
                    "differences (<= 1e-3) within 120 s", worst);
  return out;
}

// ---------------------------------------------------------------------------
// 5. precision protocol

outcome precision_protocol(){
  outcome out;
  out.pass = true;
  int n_cells{}, worst_nodes{};
  std::string failures;
  for(int k : {2, 3})
    for(int n : {2, 4, 8}){
      sim_spec spec;
      spec.n = n;
      spec.k = k;
      spec.n_reps = 10;
      spec.seed = derive_seed(606, 10 * k + n);
      benchmark_options opts;
      opts.n_timing_runs = 1;
      opts.warm_up = false;
      auto const res = benchmark(spec, table_methods(), opts);
      ++n_cells;
      for(auto const &row : res.rows){
        if(row.n_failed > 0){
          out.pass = false;
          failures += fmt(" %s(n=%d,K=%d) failed %d", row.method.c_str(), n, k,
                          row.n_failed);
        }
        if(row.method == "aghq" || row.method == "ghq")
          worst_nodes = std::max(worst_nodes,
                                 static_cast<int>(row.median_tuning));
      }
      if(res.n_excluded > 0 && res.n_truth_failed > 0){
        out.pass = false;
        failures += fmt(" ground truth failed n=%d,K=%d", n, k);
      }
    }
  out.detail = fmt("target 2e-3 on %d binomial cells x 10 clusters x 6 methods, "
                   "max median quadrature nodes %d (<= 25)%s", n_cells,
                   worst_nodes, failures.empty() ? ", no failures" :
                   (";" + failures).c_str());
  return out;
}

// ---------------------------------------------------------------------------
// 6. timing pattern

outcome timing_pattern(){
  outcome out;
  int ok_seeds{};
  std::string detail;
  for(std::uint64_t seed = 1; seed <= 3; ++seed){
    auto fastest = [&](int n){
      sim_spec spec;
      spec.n = n;
      spec.k = 2;
      spec.n_reps = 10;
      spec.seed = derive_seed(707, 10 * seed + n);
      benchmark_options opts;
      opts.calibration.seed = derive_seed(708, seed);
      auto const res = benchmark(spec, table_methods(), opts);
      std::string best;
      double best_time = inf;
      for(auto const &row : res.rows)
        if(row.n_ok > 0 && row.median_time < best_time){
          best_time = row.median_time;
          best = row.method;
        }
      return best;
    };
    std::string const small = fastest(2), large = fastest(32);
    bool const ok = small == "cdf" && large == "aghq";
    ok_seeds += ok;
    detail += fmt("seed %d: n=2 %s, n=32 %s; ", static_cast<int>(seed),
                  small.c_str(), large.c_str());
  }
  out.pass = ok_seeds >= 2;
  out.detail = detail + fmt("pattern on %d/3 seeds (>= 2)", ok_seeds);
  return out;
}

// ---------------------------------------------------------------------------
// 7. Laplace bias

dataset crossed_dataset(std::uint64_t seed){
  crossed_spec spec;
  spec.seed = seed;
  dataset d;
  d.fam = family::binomial;
  d.binomial = simulate_crossed(spec);
  std::vector<int> groups(spec.n_female + spec.n_male, 1);
  std::fill_n(groups.begin(), spec.n_female, 0);
  d.effect_groups = groups;
  return d;
}

outcome laplace_bias(){
  outcome out;
  std::vector<double> lap_f, lap_m, sr_f, sr_m;
  int n_fail{};
  for(int r = 0; r < 20; ++r){
    auto const d = crossed_dataset(derive_seed(808, r));
    auto const sp = default_sigma(d);
    fit_options opts;
    opts.eng = engine::laplace;
    auto const lap = fit_ml(d, sp, opts);
    opts.eng = engine::spherical_radial;
    opts.seed = derive_seed(809, r);
    opts.start = lap.theta;
    auto const sr = fit_ml(d, sp, opts);
    n_fail += !lap.ok() + !sr.ok();
    // reported: 4 coefficients then sigma_f and sigma_m
    lap_f.push_back(lap.reported[4]);
    lap_m.push_back(lap.reported[5]);
    sr_f.push_back(sr.reported[4]);
    sr_m.push_back(sr.reported[5]);
  }
  double const lf = detail::median(lap_f), lm = detail::median(lap_m),
               sf = detail::median(sr_f),
               sm = detail::median(sr_m);
  out.pass = lf < sf && lm < sm;
  out.detail = fmt("median sd_f Laplace %.3f vs spherical-radial %.3f, sd_m "
                   "%.3f vs %.3f over 20 simulations (%d non-converged fits)",
                   lf, sf, lm, sm, n_fail);
  return out;
}

// ---------------------------------------------------------------------------
// 8. salamander data

outcome salamander(){
  outcome out;
  char const *path = std::getenv("PMLM_SALAMANDER_CSV");
  if(!path || !*path){
    out.skipped = true;
    out.detail = "PMLM_SALAMANDER_CSV is not set";
    return out;
  }
  auto const start = detail::clock::now();
  auto const d = load_csv(path, csv_schema::salamander);
  fit_options opts;
  opts.eng = engine::cdf;
  auto const fit = fit_ml(d, default_sigma(d), opts);
  vec const expect{{.612, -.425, -1.707, 2.110, .700, .670}};
  double const max_dev = (fit.reported - expect).cwiseAbs().maxCoeff();
  double const ll_dev = std::abs(fit.loglik + 206.877);
  double const secs = detail::seconds_since(start);
  out.pass = max_dev <= .03 && ll_dev <= .3 && secs <= 300;
  std::ostringstream est;
  for(Eigen::Index i = 0; i < fit.reported.size(); ++i)
    est << (i ? " " : "") << fit.reported[i];
  out.detail = fmt("estimates (%s), max deviation %.3f (<= 0.03), log-lik "
                   "%.3f (+/- 0.3 of -206.877), within 300 s",
                   est.str().c_str(), max_dev, fit.loglik);
  return out;
}

// ---------------------------------------------------------------------------
// 9. multinomial integrand

outcome multinomial_integrand_accuracy(){
  outcome out;
  out.pass = true;
  double worst_cell{};
  for(int c = 2; c <= 4; ++c)
    for(int n : {2, 4, 8}){
      double sum{};
      int const reps = 100;
      for(int r = 0; r < reps; ++r){
        rng gen(derive_seed(909, 1000 * c + 10 * n + r));
        auto const s = simulate_multinomial_cluster(n, c, gen);
        auto const b8 = build_multinomial(s.cluster, s.beta, s.sigma, 8),
                   b24 = build_multinomial(s.cluster, s.beta, s.sigma, 24);
        double const l8 = b8.gwi.h().log_value(s.u),
                     l24 = b24.gwi.h().log_value(s.u);
        sum += std::abs(std::expm1(l8 - l24));
      }
      worst_cell = std::max(worst_cell, sum / reps);
    }
  out.pass &= worst_cell < 5e-5;

  // the reduction is checked at the reference node count. The error of the
  // default eight nodes is reported as well
  double worst_c2{}, worst_c2_b8{};
  rng gen(910);
  for(int r = 0; r < 1000; ++r){
    vec const eta{{2 * gen.normal()}}, u = gen.normal(3);
    mat const kmat = gen.normal(3).transpose();
    double const t = eta[0] + kmat.row(0).dot(u), expect = pnorm(t / std::sqrt(2.));
    double const p24 = std::exp(multinomial_integrand(eta, kmat, u, 24).log_value),
                 p8 = std::exp(multinomial_integrand(eta, kmat, u, 8).log_value);
    worst_c2 = std::max(worst_c2, std::abs(p24 - expect));
    worst_c2_b8 = std::max(worst_c2_b8, std::abs(p8 - expect));
  }
  out.pass &= worst_c2 <= 1e-7;
  out.detail = fmt("b=8 vs b=24 worst cell mean abs. rel. error %.1e (< 5e-5) "
                   "over c=2..4, n=2,4,8; c=2 closed form max error %.1e at "
                   "b=24 (<= 1e-7), %.1e at b=8", worst_cell, worst_c2,
                   worst_c2_b8);
  return out;
}

} // namespace

int main(int argc, char **argv){
  // optional list of criteria to run
  std::vector<int> only;
  for(int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto selected = [&](int id){
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };

  struct criterion {
    int id;
    char const *name;
    outcome (*fn)();
  };
  criterion const all[] = {
    {1, "representation equivalence", representation_equivalence},
    {2, "MVN CDF oracle", cdf_oracle},
    {3, "quadrature exactness", quadrature_exactness},
    {4, "gradient correctness", gradient_correctness},
    {5, "precision protocol", precision_protocol},
    {6, "timing pattern", timing_pattern},
    {7, "Laplace bias direction", laplace_bias},
    {8, "salamander estimates", salamander},
    {9, "multinomial integrand", multinomial_integrand_accuracy}};
  for(auto const &c : all)
    if(selected(c.id)) run(c.id, c.name, c.fn);
  std::printf("%d criteria failed\n", n_failed);
  return n_failed > 0 ? 1 : 0;
}
