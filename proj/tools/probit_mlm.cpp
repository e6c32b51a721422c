// probit-mlm: command line front end for the library.
//
// Exit codes: 0 on success, 2 when a requested precision was not reached,
// 1 on input errors.

#include <pmlm/pmlm.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

using namespace pmlm;

namespace {

struct settings {
  std::string family{"binomial"};
  std::string engine_name{"cdf"};
  int n{2}, k{2}, c{3};
  std::uint64_t seed{1};
  double rel_tol{1e-4};
  long long max_samples{1000000};
  int nodes{15};
  int threads{1};
  std::string out;
  bool no_timing{false};

  // subcommand specific
  std::string kind{"sobol"};
  int dim{2};
  long long count{512};
  bool scramble{false};
  std::string problem;
  std::string data;
  int reps{20};
  double target{2e-3};
  std::vector<std::string> methods;
  int n_seeds{10};
  int categories{0};
  std::string sigma{"auto"};
};

/// output stream that is either a file or stdout
class output {
  std::ofstream file;
  std::ostream *os;

public:
  explicit output(std::string const &path) : os{&std::cout} {
    if(path.empty()) return;
    file.open(path);
    if(!file) throw error("cannot open '" + path + "' for writing");
    os = &file;
  }
  std::ostream & operator*() { return *os; }
};

std::string fmt(double x){
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

engine_options engine_opts(settings const &s){
  engine_options o;
  o.cdf.rel_tol = o.mc.rel_tol = s.rel_tol;
  o.cdf.max_samples = o.mc.max_samples = s.max_samples;
  o.cdf.seed = o.mc.seed = s.seed;
  o.nodes = s.nodes;
  return o;
}

std::string read_file(std::string const &path){
  std::ifstream in(path);
  if(!in) throw error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_points(settings const &s){
  output out(s.out);
  if(s.count < 1) throw error("--count must be positive");
  auto const n = static_cast<std::size_t>(s.count);
  std::vector<double> vals(n * s.dim);
  if(s.kind == "sobol"){
    auto const ps = sobol_points(s.dim, n, s.scramble
      ? std::optional<std::uint64_t>(s.seed) : std::nullopt);
    vals = ps.values;
  } else if(s.kind == "korobov"){
    auto const kr = korobov_points(n, s.dim, s.seed);
    vals.resize(kr.n * s.dim);
    for(std::uint64_t i = 0; i < kr.n; ++i)
      kr.point(i, vals.data() + i * s.dim);
  } else if(s.kind == "uniform"){
    rng gen(s.seed);
    for(auto &v : vals) v = gen.uniform();
  } else
    throw error("unknown point kind '" + s.kind + "'");

  for(int j = 0; j < s.dim; ++j)
    *out << (j ? "\t" : "") << "u" << j + 1;
  *out << '\n';
  for(std::size_t i = 0; i < vals.size() / s.dim; ++i){
    for(int j = 0; j < s.dim; ++j)
      *out << (j ? "\t" : "") << fmt(vals[i * s.dim + j]);
    *out << '\n';
  }
  return 0;
}

void write_result_header(output &out, bool timing){
  *out << "engine\testimate\tstd_error\tlog_estimate\tlog_std_error\tn_evals"
       << (timing ? "\tseconds" : "") << "\tstatus\n";
}

int run_cdf(settings const &s){
  std::istringstream in(read_file(s.problem));
  auto const p = read_cdf_problem(in);
  auto const o = engine_opts(s);
  auto const r = mvn_interval(p.rect, p.mean, p.cov, o.cdf);
  output out(s.out);
  write_result_header(out, !s.no_timing);
  *out << "cdf\t" << fmt(r.estimate) << '\t' << fmt(r.std_error) << '\t'
       << fmt(r.log_estimate()) << '\t' << fmt(r.log_std_error()) << '\t'
       << r.n_evals;
  if(!s.no_timing) *out << '\t' << fmt(r.elapsed);
  *out << '\t' << to_string(r.status) << '\n';
  return r.status == approx_status::max_samples ? 2 : 0;
}

/// runs one engine on a skew-normal problem; value on the log scale
loglik_result run_skew(skew_params const &sp, engine e, engine_options const &o){
  built_likelihood b{family::binomial, 0, sp, marginal_as_gwi(sp, o.cdf),
                     mat::Identity(sp.k1(), sp.k1()), nullptr};
  return log_marginal(b, e, o);
}

int run_gwi(settings const &s){
  std::istringstream in(read_file(s.problem));
  auto const sp = read_skew_problem(in);
  engine const e = parse_engine(s.engine_name);
  auto const r = run_skew(sp, e, engine_opts(s));
  output out(s.out);
  write_result_header(out, !s.no_timing);
  *out << to_string(e) << '\t' << fmt(std::exp(r.value)) << '\t'
       << fmt(std::exp(r.value) * r.std_error) << '\t' << fmt(r.value) << '\t'
       << fmt(r.std_error) << '\t' << r.n_evals;
  if(!s.no_timing) *out << '\t' << fmt(r.elapsed);
  *out << '\t' << to_string(r.status) << '\n';
  return r.status == approx_status::max_samples ? 2 : 0;
}

int run_simulate(settings const &s){
  output out(s.out);
  if(s.family == "binomial"){
    sim_spec spec{family::binomial, s.n, s.k, s.c, s.reps, s.seed};
    auto const smp = simulate_binomial(spec);
    *out << "cluster_id,y,x1";
    for(int j = 0; j < s.k; ++j) *out << ",z" << j + 1;
    *out << '\n';
    for(std::size_t g = 0; g < smp.size(); ++g){
      auto const &cl = smp[g].cluster;
      for(Eigen::Index i = 0; i < cl.x.rows(); ++i){
        *out << g + 1 << ',' << cl.y[i] << ',' << fmt(cl.x(i, 0));
        for(int j = 0; j < s.k; ++j) *out << ',' << fmt(cl.z(i, j));
        *out << '\n';
      }
    }
    return 0;
  }
  if(s.family == "multinomial"){
    sim_spec spec{family::multinomial, s.n, s.c, s.c, s.reps, s.seed};
    auto const smp = simulate_multinomial(spec);
    *out << "cluster_id,y";
    for(int j = 0; j < s.c; ++j) *out << ",x" << j + 1;
    for(int j = 0; j < s.c; ++j)
      for(int l = 0; l < s.c; ++l) *out << ",z" << j + 1 << '_' << l + 1;
    *out << '\n';
    for(std::size_t g = 0; g < smp.size(); ++g){
      auto const &cl = smp[g].cluster;
      for(Eigen::Index i = 0; i < cl.x.rows(); ++i){
        *out << g + 1 << ',' << cl.y[i];
        for(int j = 0; j < s.c; ++j) *out << ',' << fmt(cl.x(i, j));
        for(int j = 0; j < s.c; ++j)
          for(int l = 0; l < s.c; ++l) *out << ',' << fmt(cl.z[i](j, l));
        *out << '\n';
      }
    }
    return 0;
  }
  if(s.family == "crossed"){
    crossed_spec spec;
    spec.seed = s.seed;
    auto const cls = simulate_crossed(spec);
    *out << "cluster_id,y,wsm,wsf,male_id,female_id\n";
    for(std::size_t g = 0; g < cls.size(); ++g){
      auto const &cl = cls[g];
      for(Eigen::Index i = 0; i < cl.x.rows(); ++i){
        Eigen::Index f{}, m{};
        for(Eigen::Index j = 0; j < spec.n_female; ++j)
          if(cl.z(i, j) != 0) f = j;
        for(Eigen::Index j = 0; j < spec.n_male; ++j)
          if(cl.z(i, spec.n_female + j) != 0) m = j;
        *out << g + 1 << ',' << cl.y[i] << ',' << cl.x(i, 1) << ','
             << cl.x(i, 2) << ',' << m + 1 << ',' << f + 1 << '\n';
      }
    }
    return 0;
  }
  throw error("simulate supports binomial, multinomial, and crossed");
}

int run_benchmark(settings const &s){
  sim_spec spec;
  if(s.family == "binomial") spec.fam = family::binomial;
  else if(s.family == "multinomial") spec.fam = family::multinomial;
  else throw error("benchmark supports binomial and multinomial");
  spec.n = s.n;
  spec.k = s.k;
  spec.c = s.c;
  spec.n_reps = s.reps;
  spec.seed = s.seed;

  std::vector<method> methods;
  for(auto const &m : s.methods) methods.push_back(parse_method(m));
  if(methods.empty()) methods = table_methods();

  benchmark_options bo;
  bo.threads = s.threads;
  bo.calibration.target = s.target;
  bo.calibration.seed = derive_seed(s.seed, 1);
  bo.truth.seed = derive_seed(s.seed, 2);
  // keep the ratio between the ground truth precision and the target
  bo.truth.precision = s.target;
  auto const res = benchmark(spec, methods, bo);

  output out(s.out);
  *out << "method\tn\tK";
  if(!s.no_timing) *out << "\tmedian_ms\tmean_ms";
  *out << "\tmean_scaled_rmse\tn_ok\tn_failed\tmedian_tuning\tn_reduced\n";
  for(auto const &r : res.rows){
    *out << r.method << '\t' << r.n << '\t' << r.k;
    if(!s.no_timing)
      *out << '\t' << fmt(1e3 * r.median_time) << '\t' << fmt(1e3 * r.mean_time);
    *out << '\t' << fmt(r.mean_rmse) << '\t' << r.n_ok << '\t' << r.n_failed
         << '\t' << fmt(r.median_tuning) << '\t' << r.n_reduced << '\n';
  }
  std::cerr << "samples " << res.n_samples << ", ground truth failures "
            << res.n_truth_failed << ", excluded " << res.n_excluded << '\n';
  return 0;
}

dataset load_data(settings const &s){
  if(s.data.empty()) throw error("--data is required");
  load_options lo;
  lo.categories = s.categories;
  return load_csv(s.data, parse_schema(s.family), lo);
}

sigma_param sigma_for(settings const &s, dataset const &d){
  if(s.sigma == "auto") return default_sigma(d);
  if(s.sigma == "full") return sigma_param::full(d.k());
  if(s.sigma == "diagonal"){
    std::vector<int> g(d.k());
    for(std::size_t j = 0; j < g.size(); ++j) g[j] = static_cast<int>(j);
    return sigma_param::grouped(g);
  }
  throw error("unknown covariance structure '" + s.sigma + "'");
}

int run_fit(settings const &s){
  auto const d = load_data(s);
  auto const sp = sigma_for(s, d);
  fit_options fo;
  fo.eng = parse_engine(s.engine_name);
  fo.engine_opts = engine_opts(s);
  fo.seed = s.seed;
  fo.threads = s.threads;
  int const n_seeds = is_stochastic(fo.eng) ? s.n_seeds : 1;
  auto const res = fit_over_seeds(d, sp, fo, n_seeds);

  output out(s.out);
  *out << "parameter\testimate\tsd_over_seeds\n";
  auto const &names = res.fits[0].names;
  for(std::size_t j = 0; j < names.size(); ++j)
    *out << names[j] << '\t' << fmt(res.mean[j]) << '\t'
         << fmt(res.sd[j]) << '\n';
  *out << "loglik\t" << fmt(res.loglik_mean) << '\t' << fmt(res.loglik_sd) << '\n';
  bool ok = true;
  for(auto const &f : res.fits) ok &= f.ok();
  if(!ok)
    std::cerr << "warning: the optimizer did not converge for every seed\n";
  return ok ? 0 : 2;
}

int run_compare(settings const &s){
  // one problem: either a skew-normal problem file or a simulated cluster
  std::optional<built_likelihood> b;
  if(!s.problem.empty()){
    std::istringstream in(read_file(s.problem));
    auto const sp = read_skew_problem(in);
    b.emplace(built_likelihood{family::binomial, 0, sp, marginal_as_gwi(sp),
                               mat::Identity(sp.k1(), sp.k1()), nullptr});
  } else {
    rng gen(s.seed);
    if(s.family == "binomial"){
      auto const smp = simulate_binomial_cluster(s.n, s.k, gen);
      b.emplace(build_binomial(smp.cluster, smp.beta, smp.sigma));
    } else if(s.family == "multinomial"){
      auto const smp = simulate_multinomial_cluster(s.n, s.c, gen);
      b.emplace(build_multinomial(smp.cluster, smp.beta, smp.sigma));
    } else
      throw error("compare simulates binomial or multinomial clusters");
  }

  ground_truth_options go;
  go.seed = derive_seed(s.seed, 99);
  auto const gt = ground_truth(*b, go);

  output out(s.out);
  *out << "engine\tloglik\tstd_error\trel_error";
  if(!s.no_timing) *out << "\tseconds";
  *out << "\tstatus\n";
  *out << "ground_truth\t" << fmt(gt.value) << '\t' << fmt(gt.std_error)
       << "\t0";
  if(!s.no_timing) *out << "\tNA";
  *out << '\t' << (gt.converged ? "converged" : "max_samples") << '\n';

  bool short_of = !gt.converged;
  auto o = engine_opts(s);
  for(engine e : {engine::laplace, engine::cdf, engine::spherical_radial,
                  engine::importance, engine::rqmc, engine::ghq, engine::aghq}){
    loglik_result r;
    try {
      r = log_marginal(*b, e, o);
    } catch(node_budget_exceeded const &ex) {
      std::cerr << to_string(e) << ": " << ex.what() << '\n';
      continue;
    }
    short_of |= r.status == approx_status::max_samples;
    *out << to_string(e) << '\t' << fmt(r.value) << '\t' << fmt(r.std_error)
         << '\t' << fmt((r.value - gt.value) / std::abs(gt.value));
    if(!s.no_timing) *out << '\t' << fmt(r.elapsed);
    *out << '\t' << to_string(r.status) << '\n';
  }
  return short_of ? 2 : 0;
}

} // namespace

int main(int argc, char **argv){
  CLI::App app{"Marginal likelihoods of probit mixed models"};
  app.set_config("--config", "", "key=value file with default flag values");
  app.require_subcommand(1);
  app.fallthrough();
  settings s;

  app.add_option("--family", s.family,
                 "binomial, multinomial, ordered, gsm, salamander, or crossed");
  app.add_option("--engine", s.engine_name,
                 "laplace, cdf, spherical_radial (sr), importance (is), rqmc, ghq, or aghq");
  app.add_option("--n", s.n, "cluster size");
  app.add_option("--K", s.k, "random effect dimension");
  app.add_option("--c", s.c, "number of categories");
  app.add_option("--seed", s.seed, "seed");
  app.add_option("--rel-tol", s.rel_tol, "relative tolerance of the stochastic engines");
  app.add_option("--max-samples", s.max_samples, "sample cap of the stochastic engines");
  app.add_option("--nodes", s.nodes, "quadrature nodes per dimension");
  app.add_option("--threads", s.threads, "worker threads");
  app.add_option("--out", s.out, "output file (TSV); stdout by default");
  app.add_flag("--no-timing", s.no_timing, "omit timing columns");

  auto *points = app.add_subcommand("points", "dump a point set");
  points->add_option("--kind", s.kind, "sobol, korobov, or uniform");
  points->add_option("--dim", s.dim, "dimension");
  points->add_option("--count", s.count, "number of points");
  points->add_flag("--scramble", s.scramble, "scramble the Sobol sequence with --seed");

  auto *cdf = app.add_subcommand("cdf", "rectangle probability from a problem file");
  cdf->add_option("problem", s.problem, "problem file")->required();

  auto *gwi = app.add_subcommand("gwi", "marginal probability of a skew-normal problem file");
  gwi->add_option("problem", s.problem, "problem file")->required();

  auto *sim = app.add_subcommand("simulate", "simulate a data set as a CSV file");
  sim->add_option("--reps", s.reps, "number of clusters");

  auto *bench = app.add_subcommand("benchmark", "calibrate and time the methods");
  bench->add_option("--reps", s.reps, "number of simulated clusters");
  bench->add_option("--target", s.target, "target scaled RMSE");
  bench->add_option("--methods", s.methods, "methods to compare");

  auto *fit = app.add_subcommand("fit", "maximum likelihood fit of a data set");
  fit->add_option("--data", s.data, "CSV file")->required();
  fit->add_option("--n-seeds", s.n_seeds, "seeds for the stochastic engines");
  fit->add_option("--categories", s.categories, "number of categories");
  fit->add_option("--sigma", s.sigma, "auto, full, or diagonal");

  auto *cmp = app.add_subcommand("compare", "all engines on one problem");
  cmp->add_option("--problem", s.problem, "skew-normal problem file");

  try {
    app.parse(argc, argv);
  } catch(CLI::ParseError const &e) {
    int const code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if(*points) return run_points(s);
    if(*cdf) return run_cdf(s);
    if(*gwi) return run_gwi(s);
    if(*sim) return run_simulate(s);
    if(*bench) return run_benchmark(s);
    if(*fit) return run_fit(s);
    if(*cmp) return run_compare(s);
  } catch(precision_not_reached const &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch(std::exception const &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
