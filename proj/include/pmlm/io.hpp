#pragma once

#include "fit.hpp"
#include "models.hpp"
#include "skewlink.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace pmlm {

/// malformed input with the line (1 based, header is line 1) and column
struct parse_error : error {
  std::size_t line, column;
  parse_error(std::string const &msg, std::size_t line, std::size_t column)
    : error(msg + " (line " + std::to_string(line) + ", column " +
            std::to_string(column) + ")"),
      line{line}, column{column} { }
};

/// the header does not match what the family requires
struct schema_mismatch : error {
  using error::error;
};

namespace detail {

inline std::string trim(std::string const &s){
  auto const b = s.find_first_not_of(" \t\r\"");
  if(b == std::string::npos) return {};
  auto const e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(std::string const &line){
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while(std::getline(ss, cur, ','))
    out.push_back(trim(cur));
  if(!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// strict number parsing; accepts inf and -inf
inline bool parse_double(std::string const &s, double &out){
  if(s == "inf" || s == "Inf" || s == "+inf"){ out = inf; return true; }
  if(s == "-inf" || s == "-Inf"){ out = -inf; return true; }
  char const *b = s.data(), *e = b + s.size();
  if(b != e && *b == '+') ++b;
  auto const r = std::from_chars(b, e, out);
  return r.ec == std::errc{} && r.ptr == e && b != e;
}

struct csv_table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  /// the cluster ids as strings, kept separately as they need not be numbers
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;

  std::size_t col(std::string const &name) const {
    auto const it = index.find(name);
    if(it == index.end())
      throw schema_mismatch("missing column '" + name + "'");
    return it->second;
  }
  bool has(std::string const &name) const { return index.count(name) > 0; }
};

inline csv_table read_csv(std::istream &in){
  csv_table out;
  std::string line;
  std::size_t line_no{};
  while(std::getline(in, line)){
    ++line_no;
    if(trim(line).empty()) continue;
    out.header = split_csv(line);
    break;
  }
  if(out.header.empty())
    throw schema_mismatch("empty file");
  for(std::size_t j = 0; j < out.header.size(); ++j){
    if(out.header[j].empty())
      throw parse_error("empty column name", line_no, j + 1);
    if(!out.index.emplace(out.header[j], j).second)
      throw parse_error("duplicate column '" + out.header[j] + "'", line_no, j + 1);
  }
  std::size_t const id_col = out.col("cluster_id");

  while(std::getline(in, line)){
    ++line_no;
    if(trim(line).empty()) continue;
    auto const fields = split_csv(line);
    if(fields.size() != out.header.size())
      throw parse_error("expected " + std::to_string(out.header.size()) +
                        " fields but found " + std::to_string(fields.size()),
                        line_no, std::min(fields.size(), out.header.size()) + 1);
    std::vector<double> row(fields.size());
    for(std::size_t j = 0; j < fields.size(); ++j){
      if(j == id_col){
        if(fields[j].empty())
          throw parse_error("empty cluster_id", line_no, j + 1);
        row[j] = 0;
        continue;
      }
      if(!parse_double(fields[j], row[j]) || !std::isfinite(row[j]))
        throw parse_error("invalid number '" + fields[j] + "' in column '" +
                          out.header[j] + "'", line_no, j + 1);
    }
    out.ids.push_back(fields[id_col]);
    out.rows.push_back(std::move(row));
  }
  return out;
}

/// columns named prefix1, prefix2, ... in index order; must be contiguous
inline std::vector<std::size_t> numbered_columns(csv_table const &tab,
                                                 std::string const &prefix){
  std::vector<std::size_t> out;
  for(int i = 1; ; ++i){
    auto const it = tab.index.find(prefix + std::to_string(i));
    if(it == tab.index.end()) break;
    out.push_back(it->second);
  }
  // anything else with the prefix and a number is a gap
  std::regex const re(prefix + "([0-9]+)");
  for(auto const &h : tab.header){
    std::smatch m;
    if(std::regex_match(h, m, re) &&
         std::stoul(m[1].str()) > out.size())
      throw schema_mismatch("column '" + h + "' without all lower numbered " +
                            prefix + " columns");
  }
  return out;
}

/// row indices per cluster in order of first appearance
inline std::vector<std::vector<std::size_t>> group_rows(csv_table const &tab){
  std::map<std::string, std::size_t> pos;
  std::vector<std::vector<std::size_t>> out;
  for(std::size_t r = 0; r < tab.rows.size(); ++r){
    auto const it = pos.emplace(tab.ids[r], out.size());
    if(it.second) out.emplace_back();
    out[it.first->second].push_back(r);
  }
  return out;
}

inline int as_int(csv_table const &tab, std::size_t r, std::size_t c){
  double const v = tab.rows[r][c];
  if(v != std::round(v))
    throw parse_error("expected an integer in column '" + tab.header[c] + "'",
                      r + 2, c + 1);
  return static_cast<int>(v);
}

inline mat gather(csv_table const &tab, std::vector<std::size_t> const &rows,
                  std::vector<std::size_t> const &cols){
  mat out(rows.size(), cols.size());
  for(std::size_t i = 0; i < rows.size(); ++i)
    for(std::size_t j = 0; j < cols.size(); ++j)
      out(i, j) = tab.rows[rows[i]][cols[j]];
  return out;
}

} // namespace detail

/// data set formats accepted by load_csv
enum class csv_schema { binomial, multinomial, ordered, gsm, salamander };

inline csv_schema parse_schema(std::string const &s){
  if(s == "binomial") return csv_schema::binomial;
  if(s == "multinomial") return csv_schema::multinomial;
  if(s == "ordered") return csv_schema::ordered;
  if(s == "gsm") return csv_schema::gsm;
  if(s == "salamander") return csv_schema::salamander;
  throw error("unknown data format '" + s + "'");
}

/// options for the formats that need more than the file
struct load_options {
  /// categories for the ordered and multinomial models; 0 means the largest y
  int categories{0};
  /// number of interior knots of the GSM I-spline basis in log time
  int gsm_interior_knots{1};
  int gsm_degree{2};
};

/**
 * Reads one data set. Columns are matched by name and may come in any
 * order:
 *   binomial:    cluster_id, y, optional m (default 1), x1..xp, z1..zK
 *   ordered:     cluster_id, y in 1..c, x1..xp, z1..zK
 *   multinomial: cluster_id, y in 1..c, x1..xp, z<j>_<l> for category j
 *                and random effect l
 *   gsm:         cluster_id, time, event, x1..xp (time invariant
 *                covariates), z1..zK. The design is (1, I-splines in log
 *                time, x) with knots at quantiles of the log event times.
 *   salamander:  cluster_id, y, wsm, wsf, male_id, female_id. The fixed
 *                effects are (1, wsm, wsf, wsf * wsm) and each cluster has
 *                female effects followed by male effects.
 * Clusters appear in order of their first row.
 */
inline dataset read_dataset(std::istream &in, csv_schema schema,
                            load_options const &opts = {}){
  using namespace detail;
  auto const tab = read_csv(in);
  if(tab.rows.empty())
    throw schema_mismatch("no data rows");
  auto const groups = group_rows(tab);
  dataset out;

  auto require_nonempty = [](std::vector<std::size_t> const &cols,
                             char const *what){
    if(cols.empty())
      throw schema_mismatch(std::string("missing column '") + what + "1'");
  };

  switch(schema){
  case csv_schema::binomial:
  case csv_schema::ordered: {
    std::size_t const yc = tab.col("y");
    auto const xc = numbered_columns(tab, "x"), zc = numbered_columns(tab, "z");
    require_nonempty(xc, "x");
    require_nonempty(zc, "z");
    bool const has_m = tab.has("m") && schema == csv_schema::binomial;
    int max_y{};
    for(std::size_t r = 0; r < tab.rows.size(); ++r){
      int const y = as_int(tab, r, yc);
      if(schema == csv_schema::binomial){
        int const m = has_m ? as_int(tab, r, tab.col("m")) : 1;
        if(m < 1)
          throw parse_error("m must be positive", r + 2, tab.col("m") + 1);
        if(y < 0 || y > m)
          throw parse_error("y must be in 0..m", r + 2, yc + 1);
      } else if(y < 1)
        throw parse_error("y must be at least 1", r + 2, yc + 1);
      max_y = std::max(max_y, y);
    }

    if(schema == csv_schema::binomial){
      out.fam = family::binomial;
      for(auto const &g : groups){
        binomial_cluster cl;
        for(auto r : g){
          cl.y.push_back(as_int(tab, r, yc));
          cl.m.push_back(has_m ? as_int(tab, r, tab.col("m")) : 1);
        }
        cl.x = gather(tab, g, xc);
        cl.z = gather(tab, g, zc);
        out.binomial.push_back(std::move(cl));
      }
      return out;
    }

    out.fam = family::ordered;
    out.categories = opts.categories > 0 ? opts.categories : max_y;
    if(out.categories < 2)
      throw schema_mismatch("the ordered model needs at least two categories");
    if(max_y > out.categories)
      throw schema_mismatch("y exceeds the number of categories");
    for(auto const &g : groups){
      ordered_cluster cl;
      cl.c = out.categories;
      for(auto r : g) cl.y.push_back(as_int(tab, r, yc));
      cl.x = gather(tab, g, xc);
      cl.z = gather(tab, g, zc);
      out.ordered.push_back(std::move(cl));
    }
    return out;
  }

  case csv_schema::multinomial: {
    std::size_t const yc = tab.col("y");
    auto const xc = numbered_columns(tab, "x");
    require_nonempty(xc, "x");
    // z<j>_<l>
    std::regex const re("z([0-9]+)_([0-9]+)");
    int c{}, k{};
    for(auto const &h : tab.header){
      std::smatch m;
      if(std::regex_match(h, m, re)){
        c = std::max(c, std::stoi(m[1].str()));
        k = std::max(k, std::stoi(m[2].str()));
      }
    }
    int max_y{};
    for(std::size_t r = 0; r < tab.rows.size(); ++r){
      int const y = as_int(tab, r, yc);
      if(y < 1) throw parse_error("y must be at least 1", r + 2, yc + 1);
      max_y = std::max(max_y, y);
    }
    out.fam = family::multinomial;
    out.categories = opts.categories > 0 ? opts.categories : std::max(c, max_y);
    if(out.categories < 2)
      throw schema_mismatch("the multinomial model needs at least two categories");
    if(max_y > out.categories)
      throw schema_mismatch("y exceeds the number of categories");
    if(k < 1)
      throw schema_mismatch("missing column 'z1_1'");
    std::vector<std::vector<std::size_t>> zc(out.categories,
                                             std::vector<std::size_t>(k));
    for(int j = 0; j < out.categories; ++j)
      for(int l = 0; l < k; ++l)
        zc[j][l] = tab.col("z" + std::to_string(j + 1) + "_" +
                           std::to_string(l + 1));

    for(auto const &g : groups){
      multinomial_cluster cl;
      cl.c = out.categories;
      for(auto r : g){
        cl.y.push_back(as_int(tab, r, yc));
        mat z(out.categories, k);
        for(int j = 0; j < out.categories; ++j)
          for(int l = 0; l < k; ++l)
            z(j, l) = tab.rows[r][zc[j][l]];
        cl.z.push_back(std::move(z));
      }
      cl.x = gather(tab, g, xc);
      out.multinomial.push_back(std::move(cl));
    }
    return out;
  }

  case csv_schema::gsm: {
    std::size_t const tc = tab.col("time"), ec = tab.col("event");
    auto const xc = numbered_columns(tab, "x"), zc = numbered_columns(tab, "z");
    require_nonempty(zc, "z");
    std::vector<double> log_events;
    double lo = inf, hi = -inf;
    for(std::size_t r = 0; r < tab.rows.size(); ++r){
      double const t = tab.rows[r][tc];
      if(!(t > 0)) throw parse_error("time must be positive", r + 2, tc + 1);
      int const e = as_int(tab, r, ec);
      if(e != 0 && e != 1)
        throw parse_error("event must be 0 or 1", r + 2, ec + 1);
      lo = std::min(lo, std::log(t));
      hi = std::max(hi, std::log(t));
      if(e) log_events.push_back(std::log(t));
    }
    if(log_events.empty())
      throw schema_mismatch("the survival data has no events");
    if(!(lo < hi))
      throw schema_mismatch("the survival times are all equal");
    std::sort(log_events.begin(), log_events.end());
    std::vector<double> interior;
    for(int i = 1; i <= opts.gsm_interior_knots; ++i){
      double const q = static_cast<double>(i) / (opts.gsm_interior_knots + 1);
      double const v = log_events[static_cast<std::size_t>
        (q * static_cast<double>(log_events.size() - 1))];
      if(v > lo && v < hi && (interior.empty() || v > interior.back()))
        interior.push_back(v);
    }
    ispline_basis const basis(interior, lo, hi, opts.gsm_degree);

    out.fam = family::gsm;
    for(auto const &g : groups){
      gsm_cluster cl;
      cl.t.resize(g.size());
      for(std::size_t i = 0; i < g.size(); ++i){
        cl.t[i] = tab.rows[g[i]][tc];
        cl.event.push_back(as_int(tab, g[i], ec));
      }
      gsm_design(cl.t, gather(tab, g, xc), basis, cl.x, cl.dx);
      cl.z = gather(tab, g, zc);
      out.gsm.push_back(std::move(cl));
    }
    // increasing from -1 to 1 over the range of the times
    vec start = vec::Zero(1 + basis.size() + static_cast<Eigen::Index>(xc.size()));
    start[0] = -1;
    start.segment(1, basis.size()).setConstant(2. / basis.size());
    out.beta_start = start;
    return out;
  }

  case csv_schema::salamander: {
    std::size_t const yc = tab.col("y"), mc = tab.col("wsm"),
                      fc = tab.col("wsf"), mid = tab.col("male_id"),
                      fid = tab.col("female_id");
    out.fam = family::binomial;
    for(auto const &g : groups){
      std::map<int, int> males, females;
      for(auto r : g){
        females.emplace(as_int(tab, r, fid), 0);
        males.emplace(as_int(tab, r, mid), 0);
      }
      int idx{};
      for(auto &f : females) f.second = idx++;
      for(auto &m : males) m.second = idx++;
      if(!out.effect_groups){
        out.effect_groups.emplace(idx, 1);
        std::fill_n(out.effect_groups->begin(), females.size(), 0);
      } else if(static_cast<int>(out.effect_groups->size()) != idx ||
                  std::count(out.effect_groups->begin(),
                             out.effect_groups->end(), 0) !=
                    static_cast<long>(females.size()))
        throw schema_mismatch("clusters have different numbers of males or females");

      binomial_cluster cl;
      Eigen::Index const n = static_cast<Eigen::Index>(g.size());
      cl.x.resize(n, 4);
      cl.z = mat::Zero(n, idx);
      for(Eigen::Index i = 0; i < n; ++i){
        auto const r = g[i];
        int const y = as_int(tab, r, yc);
        if(y != 0 && y != 1)
          throw parse_error("y must be 0 or 1", r + 2, yc + 1);
        double const wm = tab.rows[r][mc], wf = tab.rows[r][fc];
        cl.y.push_back(y);
        cl.m.push_back(1);
        cl.x.row(i) << 1, wm, wf, wf * wm;
        cl.z(i, females.at(as_int(tab, r, fid))) = 1;
        cl.z(i, males.at(as_int(tab, r, mid))) = 1;
      }
      out.binomial.push_back(std::move(cl));
    }
    return out;
  }
  }
  throw error("unknown data format");
}

inline dataset load_csv(std::string const &path, csv_schema schema,
                        load_options const &opts = {}){
  std::ifstream in(path);
  if(!in) throw error("cannot open '" + path + "'");
  return read_dataset(in, schema, opts);
}

/**
 * The covariance parameterization implied by a data set: grouped when the
 * format defines groups of random effects and full otherwise.
 */
inline sigma_param default_sigma(dataset const &d){
  if(d.effect_groups) return sigma_param::grouped(*d.effect_groups);
  return sigma_param::full(d.k());
}

// ---------------------------------------------------------------------------
// problem files

namespace detail {

/**
 * Whitespace separated "key values..." records. A key on its own line is
 * followed by the values on the next lines until the next key. Lines
 * starting with # are comments.
 */
inline std::map<std::string, std::vector<double>> read_records(std::istream &in){
  std::map<std::string, std::vector<double>> out;
  std::string line, key;
  std::size_t line_no{};
  while(std::getline(in, line)){
    ++line_no;
    auto const hash = line.find('#');
    if(hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string tok;
    std::size_t col{};
    while(ss >> tok){
      ++col;
      double v;
      if(parse_double(tok, v)){
        if(key.empty())
          throw parse_error("value before any key", line_no, col);
        out[key].push_back(v);
        continue;
      }
      key = tok;
      if(out.count(key))
        throw parse_error("duplicate key '" + key + "'", line_no, col);
      out[key];
    }
  }
  return out;
}

inline std::vector<double> const & record(
    std::map<std::string, std::vector<double>> const &rec,
    std::string const &key, std::size_t n){
  auto const it = rec.find(key);
  if(it == rec.end())
    throw schema_mismatch("missing entry '" + key + "'");
  if(it->second.size() != n)
    throw schema_mismatch("entry '" + key + "' should have " +
                          std::to_string(n) + " values but has " +
                          std::to_string(it->second.size()));
  return it->second;
}

inline vec as_vec(std::vector<double> const &v){
  return Eigen::Map<vec const>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline mat as_mat(std::vector<double> const &v, Eigen::Index r, Eigen::Index c){
  mat out(r, c);
  for(Eigen::Index i = 0; i < r; ++i)
    for(Eigen::Index j = 0; j < c; ++j)
      out(i, j) = v[static_cast<std::size_t>(i * c + j)];
  return out;
}

inline std::size_t dim_record(std::map<std::string, std::vector<double>> const &rec,
                              std::string const &key){
  auto const &v = record(rec, key, 1);
  if(!(v[0] >= 0) || v[0] != std::round(v[0]))
    throw schema_mismatch("'" + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(v[0]);
}

} // namespace detail

/// rectangle probability problem
struct cdf_problem {
  hyper_rect rect;
  vec mean;
  mat cov;
};

/**
 * Format:
 *   dim k
 *   lower l_1 ... l_k   (optional, default -inf)
 *   upper b_1 ... b_k
 *   mean mu_1 ... mu_k  (optional, default 0)
 *   cov  followed by k rows of k values
 */
inline cdf_problem read_cdf_problem(std::istream &in){
  using namespace detail;
  auto const rec = read_records(in);
  std::size_t const k = dim_record(rec, "dim");
  if(k < 1) throw schema_mismatch("dim must be positive");
  cdf_problem out;
  out.rect.upper = as_vec(record(rec, "upper", k));
  out.rect.lower = rec.count("lower") ? as_vec(record(rec, "lower", k))
                                      : vec(vec::Constant(k, -inf));
  out.mean = rec.count("mean") ? as_vec(record(rec, "mean", k))
                               : vec(vec::Zero(k));
  auto const ki = static_cast<Eigen::Index>(k);
  out.cov = as_mat(record(rec, "cov", k * k), ki, ki);
  return out;
}

/**
 * Skew-normal problem with k1 and k2 followed by xi1, xi2, xi11 (k1 x k1),
 * xi21 (k2 x k1), xi22 (k2 x k2), v2 and an optional lower.
 */
inline skew_params read_skew_problem(std::istream &in){
  using namespace detail;
  auto const rec = read_records(in);
  std::size_t const k1 = dim_record(rec, "k1"), k2 = dim_record(rec, "k2");
  if(k1 < 1) throw schema_mismatch("k1 must be positive");
  auto const i1 = static_cast<Eigen::Index>(k1), i2 = static_cast<Eigen::Index>(k2);
  std::optional<vec> lower;
  if(rec.count("lower")) lower = as_vec(record(rec, "lower", k2));
  return skew_params(as_vec(record(rec, "xi1", k1)), as_vec(record(rec, "xi2", k2)),
                     as_mat(record(rec, "xi11", k1 * k1), i1, i1),
                     as_mat(record(rec, "xi21", k2 * k1), i2, i1),
                     as_mat(record(rec, "xi22", k2 * k2), i2, i2),
                     as_vec(record(rec, "v2", k2)), std::move(lower));
}

} // namespace pmlm
