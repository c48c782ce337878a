#pragma once
// Experiment orchestration: config parsing, run/filter/table pipelines, CSV
// and manifest emission, and the plain-text report renderer used by the CLI.

#include <cctype>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mptik/filters.hpp"
#include "mptik/fpsim.hpp"
#include "mptik/linalg.hpp"
#include "mptik/metrics.hpp"
#include "mptik/problems.hpp"
#include "mptik/solvers.hpp"

namespace mptik::expcli {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration model. Parsed from a line-oriented text format:
//
//   section.key = value          # comment
//
// Sections: problem, noise, solver, outputs, grid, format. Lists are
// comma-separated at the top level; precision triples are written like
// (3,2,1) or (fp16,fp32,fp64) and may name custom formats declared as
//   format.<name> = {exponent_bits, mantissa_bits, subnormals}

struct ProblemSpec {
  std::string kind;  // spectra | deblur2d | load
  int n = 64;
  double eta = 2.0;
  int nr = 32, nc = 32;
  double psf_eta = 1.5;
  int psf_size = 9;
  std::string path;
};

struct ExperimentConfig {
  ProblemSpec problem;
  double mu_percent = 1.0;
  std::uint64_t seed = 1;
  std::string method = "mpir";  // tikhonov | landweber | pl | ir | mpir | air
  double alpha2 = 0.0;          // required
  int max_iters = 10;
  double zeta = 1.0;  // landweber step scale
  bool strict = false;
  std::vector<fpsim::PrecisionTriple> triples;
  std::string out_dir = "out";
  bool want_iterates = true, want_filters = true, want_table2 = true, want_table3 = true;
  std::vector<double> grid_alpha2;
  std::vector<double> grid_mu;
  bool grid_air = false;
  std::map<std::string, fpsim::FloatFormat> formats;

  // Which optional keys appeared explicitly; drives load-problem defaults and
  // the automatic narrowing of outputs for operators without a dense matrix.
  bool mu_set = false, seed_set = false, which_set = false, grid_mu_set = false;
};

struct ParseResult {
  ExperimentConfig config;
  std::vector<std::string> errors;  // all problems found, each prefixed "line N:"

  bool ok() const { return errors.empty(); }
};

namespace detail {

inline std::string trim(std::string s) {
  const char* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline bool is_identifier(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return true;
}

// Split on commas that sit outside any (...) or {...} grouping.
inline std::vector<std::string> split_top_level(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(' || c == '{') ++depth;
    if (c == ')' || c == '}') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

inline bool parse_double(const std::string& v, double& out) {
  if (v.empty()) return false;
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || errno == ERANGE) return false;
  out = d;
  return true;
}

inline bool parse_int(const std::string& v, long long& out) {
  if (v.empty()) return false;
  errno = 0;
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || errno == ERANGE) return false;
  out = i;
  return true;
}

inline bool parse_u64(const std::string& v, std::uint64_t& out) {
  if (v.empty() || v[0] == '-') return false;
  errno = 0;
  char* end = nullptr;
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || errno == ERANGE) return false;
  out = u;
  return true;
}

inline bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1") return out = true, true;
  if (v == "false" || v == "0") return out = false, true;
  return false;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

// Parses and validates a config. Never throws on bad input: every problem is
// collected into ParseResult::errors with its line number so the user sees
// all of them at once.
inline ParseResult parse_config(const std::string& text) {
  ParseResult res;
  ExperimentConfig& cfg = res.config;
  const auto err = [&](int line, const std::string& m) {
    res.errors.push_back(line > 0 ? "line " + std::to_string(line) + ": " + m : m);
  };

  struct Entry {
    int line;
    std::string key, value;
  };
  std::vector<Entry> entries;
  std::map<std::string, int> seen;  // key -> first line

  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      err(lineno, "expected 'section.key = value', got '" + line + "'");
      continue;
    }
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 >= key.size() ||
        key.find('.', dot + 1) != std::string::npos) {
      err(lineno, "key must look like 'section.key', got '" + key + "'");
      continue;
    }
    if (value.empty()) {
      err(lineno, key + ": empty value");
      continue;
    }
    if (const auto it = seen.find(key); it != seen.end()) {
      err(lineno,
          "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
      continue;
    }
    seen.emplace(key, lineno);
    entries.push_back({lineno, std::move(key), std::move(value)});
  }

  // Custom formats first so triples can reference them regardless of order.
  for (const Entry& e : entries) {
    if (e.key.rfind("format.", 0) != 0) continue;
    const std::string name = e.key.substr(7);
    if (!detail::is_identifier(name)) {
      err(e.line, "format name '" + name + "' must be alphanumeric/underscore");
      continue;
    }
    if (name == "fp64" || name == "fp32" || name == "fp16") {
      err(e.line, "format name '" + name + "' shadows a built-in preset");
      continue;
    }
    std::string v = e.value;
    if (v.size() < 2 || v.front() != '{' || v.back() != '}') {
      err(e.line, e.key + ": expected {exponent_bits, mantissa_bits, subnormals}");
      continue;
    }
    const auto parts = detail::split_top_level(v.substr(1, v.size() - 2));
    long long eb = 0, mb = 0;
    bool sn = true;
    const bool bad = parts.size() < 2 || parts.size() > 3 || !detail::parse_int(parts[0], eb) ||
                     !detail::parse_int(parts[1], mb) ||
                     (parts.size() == 3 && !detail::parse_bool(parts[2], sn));
    if (bad) {
      err(e.line, e.key + ": expected {exponent_bits, mantissa_bits, subnormals}");
      continue;
    }
    try {
      cfg.formats.emplace(name, fpsim::make_format(name, static_cast<int>(eb),
                                                   static_cast<int>(mb), sn));
    } catch (const std::invalid_argument& ex) {
      err(e.line, e.key + ": " + ex.what());
    }
  }

  const auto lookup_format = [&](const std::string& tok, fpsim::FloatFormat& out) {
    if (tok == "1" || tok == "fp64") return out = fpsim::fp64(), true;
    if (tok == "2" || tok == "fp32") return out = fpsim::fp32(), true;
    if (tok == "3" || tok == "fp16") return out = fpsim::fp16(), true;
    if (const auto it = cfg.formats.find(tok); it != cfg.formats.end())
      return out = it->second, true;
    return false;
  };

  for (const Entry& e : entries) {
    if (e.key.rfind("format.", 0) == 0) continue;
    const int L = e.line;
    const std::string& k = e.key;
    const std::string& v = e.value;
    const auto bad_number = [&] { err(L, k + ": expected a number, got '" + v + "'"); };

    double d = 0.0;
    long long i = 0;
    bool b = false;

    if (k == "problem.kind") {
      if (v != "spectra" && v != "deblur2d" && v != "load")
        err(L, "problem.kind must be spectra, deblur2d, or load");
      else
        cfg.problem.kind = v;
    } else if (k == "problem.n") {
      if (!detail::parse_int(v, i))
        bad_number();
      else if (i < 2 || i > 100000)
        err(L, "problem.n must be an integer in [2, 100000]");
      else
        cfg.problem.n = static_cast<int>(i);
    } else if (k == "problem.eta") {
      if (!detail::parse_double(v, d))
        bad_number();
      else if (!(d > 0.0))
        err(L, "problem.eta must be > 0");
      else
        cfg.problem.eta = d;
    } else if (k == "problem.nr" || k == "problem.nc") {
      if (!detail::parse_int(v, i))
        bad_number();
      else if (i < 2 || i > 4096)
        err(L, k + " must be an integer in [2, 4096]");
      else
        (k == "problem.nr" ? cfg.problem.nr : cfg.problem.nc) = static_cast<int>(i);
    } else if (k == "problem.psf_eta") {
      if (!detail::parse_double(v, d))
        bad_number();
      else if (!(d > 0.0))
        err(L, "problem.psf_eta must be > 0");
      else
        cfg.problem.psf_eta = d;
    } else if (k == "problem.psf_size") {
      if (!detail::parse_int(v, i))
        bad_number();
      else if (i < 1 || i % 2 == 0)
        err(L, "problem.psf_size must be an odd integer >= 1");
      else
        cfg.problem.psf_size = static_cast<int>(i);
    } else if (k == "problem.path") {
      cfg.problem.path = v;
    } else if (k == "noise.mu_percent") {
      if (!detail::parse_double(v, d))
        bad_number();
      else if (!(d >= 0.0))
        err(L, "noise.mu_percent must be >= 0");
      else
        cfg.mu_percent = d, cfg.mu_set = true;
    } else if (k == "noise.seed") {
      std::uint64_t u = 0;
      if (!detail::parse_u64(v, u))
        err(L, "noise.seed must be a non-negative integer");
      else
        cfg.seed = u, cfg.seed_set = true;
    } else if (k == "solver.method") {
      if (v != "tikhonov" && v != "landweber" && v != "pl" && v != "ir" && v != "mpir" &&
          v != "air")
        err(L, "solver.method must be one of tikhonov, landweber, pl, ir, mpir, air");
      else
        cfg.method = v;
    } else if (k == "solver.alpha2") {
      if (!detail::parse_double(v, d))
        bad_number();
      else if (!(d > 0.0))
        err(L, "solver.alpha2 must be > 0");
      else
        cfg.alpha2 = d;
    } else if (k == "solver.max_iters") {
      if (!detail::parse_int(v, i))
        bad_number();
      else if (i < 1 || i > 100000)
        err(L, "solver.max_iters must be an integer >= 1");
      else
        cfg.max_iters = static_cast<int>(i);
    } else if (k == "solver.zeta") {
      if (!detail::parse_double(v, d))
        bad_number();
      else if (!(d > 0.0 && d <= 1.0))
        err(L, "solver.zeta must be in (0, 1]");
      else
        cfg.zeta = d;
    } else if (k == "solver.strict") {
      if (!detail::parse_bool(v, b))
        err(L, "solver.strict must be true or false");
      else
        cfg.strict = b;
    } else if (k == "solver.triples") {
      const auto toks = detail::split_top_level(v);
      if (toks.empty()) err(L, "solver.triples: empty list");
      for (const std::string& t : toks) {
        if (t.size() < 2 || t.front() != '(' || t.back() != ')') {
          err(L, "solver.triples: expected (pr1,pr2,pr3), got '" + t + "'");
          continue;
        }
        const auto parts = detail::split_top_level(t.substr(1, t.size() - 2));
        if (parts.size() != 3) {
          err(L, "solver.triples: expected three precisions in '" + t + "'");
          continue;
        }
        fpsim::FloatFormat f1 = fpsim::fp64(), f2 = f1, f3 = f1;
        bool ok = lookup_format(parts[0], f1);
        ok = lookup_format(parts[1], f2) && ok;
        ok = lookup_format(parts[2], f3) && ok;
        if (!ok) {
          err(L, "solver.triples: unknown precision in '" + t +
                     "' (use 1/2/3, fp64/fp32/fp16, or a declared format name)");
          continue;
        }
        try {
          cfg.triples.emplace_back(std::move(f1), std::move(f2), std::move(f3));
        } catch (const std::invalid_argument& ex) {
          err(L, std::string("solver.triples: ") + ex.what());
        }
      }
    } else if (k == "outputs.directory") {
      cfg.out_dir = v;
    } else if (k == "outputs.which") {
      cfg.want_iterates = cfg.want_filters = cfg.want_table2 = cfg.want_table3 = false;
      cfg.which_set = true;
      for (const std::string& w : detail::split_top_level(v)) {
        if (w == "iterates")
          cfg.want_iterates = true;
        else if (w == "filters")
          cfg.want_filters = true;
        else if (w == "table2")
          cfg.want_table2 = true;
        else if (w == "table3")
          cfg.want_table3 = true;
        else
          err(L, "outputs.which: unknown output '" + w + "'");
      }
    } else if (k == "grid.alpha2") {
      for (const std::string& w : detail::split_top_level(v)) {
        if (!detail::parse_double(w, d) || !(d > 0.0)) {
          err(L, "grid.alpha2: entries must be numbers > 0, got '" + w + "'");
          break;
        }
        cfg.grid_alpha2.push_back(d);
      }
    } else if (k == "grid.mu") {
      cfg.grid_mu_set = true;
      for (const std::string& w : detail::split_top_level(v)) {
        if (!detail::parse_double(w, d) || !(d >= 0.0)) {
          err(L, "grid.mu: entries must be numbers >= 0, got '" + w + "'");
          break;
        }
        cfg.grid_mu.push_back(d);
      }
    } else if (k == "grid.air") {
      if (!detail::parse_bool(v, b))
        err(L, "grid.air must be true or false");
      else
        cfg.grid_air = b;
    } else {
      err(L, "unknown key '" + k + "'");
    }
  }

  const auto set = [&](const char* key) { return seen.count(key) != 0; };
  const auto line_of = [&](const char* key) { return seen.at(key); };

  if (!set("problem.kind")) err(0, "problem.kind is required");
  if (!set("solver.alpha2")) err(0, "solver.alpha2 is required");

  if (!cfg.problem.kind.empty()) {
    static constexpr const char* spectra_keys[] = {"problem.n", "problem.eta"};
    static constexpr const char* deblur_keys[] = {"problem.nr", "problem.nc", "problem.psf_eta",
                                                  "problem.psf_size"};
    static constexpr const char* load_keys[] = {"problem.path"};
    const auto reject = [&](const char* key) {
      if (set(key))
        err(line_of(key),
            std::string(key) + " does not apply to problem.kind = " + cfg.problem.kind);
    };
    if (cfg.problem.kind != "spectra")
      for (const char* key : spectra_keys) reject(key);
    if (cfg.problem.kind != "deblur2d")
      for (const char* key : deblur_keys) reject(key);
    if (cfg.problem.kind != "load")
      for (const char* key : load_keys) reject(key);
    if (cfg.problem.kind == "load" && !set("problem.path"))
      err(0, "problem.path is required for problem.kind = load");
  }

  if (!set("solver.triples")) cfg.triples = {fpsim::PrecisionTriple::all_native()};
  if (!set("grid.alpha2")) cfg.grid_alpha2 = {cfg.alpha2};
  if (!set("grid.mu")) cfg.grid_mu = {cfg.mu_percent};

  if (cfg.problem.kind == "deblur2d") {
    if (cfg.method == "tikhonov" || cfg.method == "landweber")
      err(0, "solver.method = " + cfg.method +
                 " needs a dense operator; use problem.kind = spectra or load");
    if (cfg.which_set && (cfg.want_filters || cfg.want_table2))
      err(0, "filters and table2 outputs need a dense operator; drop them from outputs.which");
    if (!cfg.which_set) cfg.want_filters = cfg.want_table2 = false;
  }

  return res;
}

inline std::string load_config_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  if (is.bad()) throw std::runtime_error("read failed: " + path);
  return ss.str();
}

// ---------------------------------------------------------------------------
// Pipelines.

struct RunOptions {
  std::optional<std::uint64_t> seed_override;
  std::string out_dir;  // overrides outputs.directory when nonempty
  bool parallel = false;
};

struct RunOutcome {
  std::vector<std::string> files;  // paths written, in write order
  bool any_divergence = false;
};

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp.string());
    os << content;
    if (!os.good()) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string csv_quote(const std::string& s) { return "\"" + s + "\""; }

// "(3,2,1)" -> "3-2-1" for file names; custom format names pass through.
inline std::string file_label(const fpsim::PrecisionTriple& t) {
  std::string out;
  for (char c : t.label()) {
    if (c == '(' || c == ')') continue;
    out += (c == ',') ? '-' : c;
  }
  return out;
}

inline std::string run_csv(const solvers::RunRecord& rec) {
  std::string s = "iter,rre,residual_norm,diverged\n";
  const int K = rec.iterations();
  for (int k = 0; k <= K; ++k) {
    s += std::to_string(k);
    s += ',';
    s += linalg::format_g17(rec.rre_history[k]);
    s += ',';
    s += linalg::format_g17(rec.residual_norms[k]);
    s += ',';
    s += (k == K && rec.diverged) ? '1' : '0';
    s += '\n';
  }
  return s;
}

template <class Fn>
inline auto with_operator(const problems::InverseProblem& p, Fn&& fn) {
  return p.is_kron() ? fn(p.kron()) : fn(p.dense());
}

inline const linalg::DenseMatrix& require_dense(const problems::InverseProblem& p,
                                                const char* what) {
  if (p.is_kron())
    throw std::invalid_argument(std::string(what) +
                                " needs a dense operator (spectra or a dense load)");
  return p.dense();
}

}  // namespace detail

// Effective (mu, seed) for the base problem: explicit config keys win, then a
// seed override from the command line, then (for loaded problems) the values
// stored alongside the problem.
inline std::pair<double, std::uint64_t> resolve_noise(const ExperimentConfig& cfg,
                                                      const RunOptions& opts) {
  double mu = cfg.mu_percent;
  std::uint64_t seed = opts.seed_override ? *opts.seed_override : cfg.seed;
  if (cfg.problem.kind == "load" && (!cfg.mu_set || (!cfg.seed_set && !opts.seed_override))) {
    const problems::InverseProblem stored = problems::load_problem(cfg.problem.path);
    if (!cfg.mu_set) mu = stored.noise_level_percent;
    if (!cfg.seed_set && !opts.seed_override) seed = stored.seed;
  }
  return {mu, seed};
}

// Builds the problem at the given noise level and seed. Loaded problems are
// re-noised from their stored exact data; with the stored (mu, seed) this
// reproduces the stored b exactly, and it lets grid sweeps over mu work the
// same way for loaded and generated problems.
inline problems::InverseProblem make_problem(const ExperimentConfig& cfg, double mu,
                                             std::uint64_t seed) {
  const ProblemSpec& ps = cfg.problem;
  if (ps.kind == "spectra") return problems::make_spectra_problem(ps.n, ps.eta, mu, seed);
  if (ps.kind == "deblur2d")
    return problems::make_deblur2d_problem(ps.nr, ps.nc, ps.psf_eta, ps.psf_size, mu, seed);
  problems::InverseProblem p = problems::load_problem(ps.path);
  const std::vector<double> e = problems::add_noise(p.b_exact, mu, seed);
  for (std::size_t j = 0; j < p.b.size(); ++j) p.b[j] = p.b_exact[j] + e[j];
  p.noise_level_percent = mu;
  p.seed = seed;
  return p;
}

inline std::string gen_problem(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto [mu, seed] = resolve_noise(cfg, opts);
  const problems::InverseProblem p = make_problem(cfg, mu, seed);
  const std::string dir =
      !opts.out_dir.empty() ? opts.out_dir : cfg.out_dir + "/problem";
  problems::save_problem(dir, p);
  return dir;
}

namespace detail {

inline solvers::SolverConfig solver_config(const ExperimentConfig& cfg) {
  solvers::SolverConfig sc;
  sc.alpha2 = cfg.alpha2;
  sc.max_iters = cfg.max_iters;
  sc.zeta = cfg.zeta;
  return sc;
}

// One run per output file; tikhonov is synthesized as a two-row record so the
// CSV shape is uniform across methods.
struct NamedRun {
  std::string file;
  solvers::RunRecord rec;
};

inline std::vector<NamedRun> compute_runs(const ExperimentConfig& cfg,
                                          const problems::InverseProblem& p) {
  std::vector<NamedRun> out;
  const solvers::SolverConfig base = solver_config(cfg);

  if (cfg.method == "tikhonov") {
    const linalg::DenseMatrix& a = require_dense(p, "solver.method = tikhonov");
    solvers::RunRecord rec;
    std::vector<double> x = solvers::tikhonov_direct(a, p.b, cfg.alpha2);
    rec.iterates.push_back(std::vector<double>(a.cols, 0.0));
    rec.residual_norms.push_back(linalg::norm2(p.b));
    std::vector<double> ax = linalg::matvec(a, x);
    for (std::size_t j = 0; j < ax.size(); ++j) ax[j] = p.b[j] - ax[j];
    rec.h_norms.push_back(linalg::norm2(x));
    rec.iter_seconds.push_back(0.0);
    rec.residual_norms.push_back(linalg::norm2(ax));
    rec.iterates.push_back(std::move(x));
    out.push_back({"run_tikhonov.csv", std::move(rec)});
  } else if (cfg.method == "landweber") {
    const linalg::DenseMatrix& a = require_dense(p, "solver.method = landweber");
    out.push_back({"run_landweber.csv", solvers::landweber_run(a, p.b, base)});
  } else if (cfg.method == "ir") {
    auto rec = with_operator(p, [&](const auto& op) { return solvers::ir_run(op, p.b, base); });
    out.push_back({"run_ir.csv", std::move(rec)});
  } else if (cfg.method == "air") {
    auto rec = with_operator(p, [&](const auto& op) { return solvers::air_run(op, p.b, base); });
    out.push_back({"run_air.csv", std::move(rec)});
  } else if (cfg.method == "pl") {
    for (const fpsim::PrecisionTriple& t : cfg.triples) {
      auto rec = with_operator(p, [&](const auto& op) {
        const auto pc = linalg::build_preconditioner(op, cfg.alpha2, t.pr1);
        return solvers::pl_run(op, p.b, pc, cfg.max_iters, t.pr3);
      });
      out.push_back({"run_pl_" + file_label(t) + ".csv", std::move(rec)});
    }
  } else {  // mpir
    for (const fpsim::PrecisionTriple& t : cfg.triples) {
      solvers::SolverConfig sc = base;
      sc.precisions = t;
      auto rec =
          with_operator(p, [&](const auto& op) { return solvers::mpir_run(op, p.b, sc); });
      out.push_back({"run_mpir_" + file_label(t) + ".csv", std::move(rec)});
    }
  }

  for (NamedRun& r : out) solvers::fill_rre(r.rec, p.x_true);
  return out;
}

}  // namespace detail

// Renders table2.csv / table3.csv from an output directory as aligned text
// tables. Returns false when neither file exists.
inline bool render_report(const std::string& dir, std::ostream& os) {
  namespace fs = std::filesystem;
  const auto split_line = [](const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
      if (quoted) {
        if (c == '"')
          quoted = false;
        else
          cur += c;
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  };

  const auto print_one = [&](const fs::path& path, const std::string& title) {
    std::ifstream is(path);
    if (!is) {
      os << "(" << path.filename().string() << " not found under " << dir << ")\n\n";
      return false;
    }
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) rows.push_back(split_line(line));
    }
    if (rows.empty()) {
      os << "(" << path.filename().string() << " is empty)\n\n";
      return false;
    }
    for (std::size_t r = 1; r < rows.size(); ++r)
      for (std::string& cell : rows[r]) {
        double d = 0.0;
        if (detail::parse_double(cell, d)) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.6g", d);
          cell = buf;
        }
      }
    std::vector<std::size_t> width;
    for (const auto& row : rows)
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c >= width.size()) width.resize(c + 1, 0);
        width[c] = std::max(width[c], row[c].size());
      }
    os << title << "\n" << std::string(title.size(), '-') << "\n";
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        os << row[c] << std::string(width[c] - row[c].size() + 2, ' ');
      }
      os << "\n";
    }
    os << "\n";
    return true;
  };

  bool any = false;
  any |= print_one(fs::path(dir) / "table2.csv",
                   "Filter agreement: |predicted - effective| by combo and iteration");
  any |= print_one(fs::path(dir) / "table3.csv",
                   "Stabilized relative error by method, combo, alpha2, and noise level");
  return any;
}

// Runs the configured pipelines. Deterministic for a fixed config and seed:
// repeated invocations rewrite byte-identical files. Divergence in any run is
// recorded in the CSVs and reported through RunOutcome, never thrown.
inline RunOutcome run_experiment(const ExperimentConfig& cfg_in, const std::string& raw_config,
                                 const RunOptions& opts = {}) {
  namespace fs = std::filesystem;
  ExperimentConfig cfg = cfg_in;
  RunOutcome outcome;

  const auto [base_mu, base_seed] = resolve_noise(cfg, opts);
  // Loaded problems default their grid noise level to the stored one.
  if (!cfg.grid_mu_set && !cfg.mu_set) cfg.grid_mu = {base_mu};
  const fs::path out_dir = !opts.out_dir.empty() ? opts.out_dir : cfg.out_dir;
  fs::create_directories(out_dir);

  const problems::InverseProblem prob = make_problem(cfg, base_mu, base_seed);
  if (!cfg.which_set && prob.is_kron()) cfg.want_filters = cfg.want_table2 = false;
  if ((cfg.want_filters || cfg.want_table2) && prob.is_kron())
    throw std::invalid_argument(
        "filters and table2 outputs need a dense operator (spectra or a dense load)");

  const auto emit = [&](const fs::path& name, const std::string& content) {
    const fs::path path = out_dir / name;
    detail::write_text_atomic(path, content);
    outcome.files.push_back(path.string());
  };

  if (cfg.want_iterates) {
    for (detail::NamedRun& r : detail::compute_runs(cfg, prob)) {
      outcome.any_divergence |= r.rec.diverged;
      emit(r.file, detail::run_csv(r.rec));
    }
  }

  if (cfg.want_filters || cfg.want_table2) {
    const linalg::DenseMatrix& a = prob.dense();
    const linalg::SvdFactors sv = linalg::svd(a);
    const solvers::SolverConfig base = detail::solver_config(cfg);
    std::string table2 = "combo,iter,mean,min,max,std\n";

    for (const fpsim::PrecisionTriple& t : cfg.triples) {
      const linalg::TikPreconditioner pc = linalg::build_preconditioner(a, cfg.alpha2, t.pr1);
      const filters::FilterSet phi = filters::mpir_filters(sv.sigma, pc, cfg.max_iters, t);
      solvers::SolverConfig sc = base;
      sc.precisions = t;
      const solvers::RunRecord rec = solvers::mpir_run(a, prob.b, sc);
      outcome.any_divergence |= rec.diverged;

      const int n = static_cast<int>(sv.sigma.size());
      const int kmax = std::min(cfg.max_iters, rec.iterations());
      std::vector<filters::EffectiveFilters> eff;
      for (int k = 1; k <= kmax; ++k)
        eff.push_back(filters::effective_filters(rec.iterates[k], sv, pc.V_M, prob.b));

      if (cfg.want_filters) {
        std::string s = "k,j,value,kind,flagged\n";
        for (int k = 0; k <= phi.iterations(); ++k)
          for (int j = 0; j < n; ++j) {
            s += std::to_string(k) + "," + std::to_string(j) + "," +
                 linalg::format_g17(phi.values[k][j]) + ",predicted,0\n";
          }
        for (int k = 1; k <= kmax; ++k) {
          const filters::EffectiveFilters& ef = eff[k - 1];
          for (int j = 0; j < n; ++j)
            s += std::to_string(k) + "," + std::to_string(j) + "," +
                 linalg::format_g17(ef.omega[j]) + ",effective," +
                 (ef.flagged[j] ? "1" : "0") + "\n";
        }
        for (int k = 1; k <= kmax; ++k) {
          const filters::EffectiveFilters& ef = eff[k - 1];
          for (int j = 0; j < n; ++j)
            s += std::to_string(k) + "," + std::to_string(j) + "," +
                 linalg::format_g17(std::abs(phi.values[k][j] - ef.omega[j])) + ",absdiff," +
                 (ef.flagged[j] ? "1" : "0") + "\n";
        }
        emit("filters_" + detail::file_label(t) + ".csv", s);
      }

      if (cfg.want_table2) {
        for (const int k : {1, 5, 10}) {
          if (k > kmax) continue;
          const metrics::SummaryStats st =
              metrics::filter_diff_stats(phi.values[k], eff[k - 1].omega);
          table2 += detail::csv_quote(t.label()) + "," + std::to_string(k) + "," +
                    linalg::format_g17(st.mean) + "," + linalg::format_g17(st.min) + "," +
                    linalg::format_g17(st.max) + "," + linalg::format_g17(st.std_dev) + "\n";
        }
      }
    }
    if (cfg.want_table2) emit("table2.csv", table2);
  }

  if (cfg.want_table3) {
    // One problem instance per noise level; cells share them read-only.
    std::vector<problems::InverseProblem> probs;
    probs.reserve(cfg.grid_mu.size());
    for (const double mu : cfg.grid_mu)
      probs.push_back(mu == base_mu ? prob : make_problem(cfg, mu, base_seed));

    struct Cell {
      std::size_t mu_idx;
      double alpha2;
      int triple_idx;  // -1 for the circulant-preconditioned baseline
    };
    std::vector<Cell> cells;
    for (std::size_t m = 0; m < cfg.grid_mu.size(); ++m)
      for (const double a2 : cfg.grid_alpha2) {
        for (std::size_t t = 0; t < cfg.triples.size(); ++t)
          cells.push_back({m, a2, static_cast<int>(t)});
        if (cfg.grid_air) cells.push_back({m, a2, -1});
      }

    struct Row {
      std::string method, combo;
      double alpha2, mu, srre, srre_std;
      bool diverged;
    };
    const auto compute = [&](const Cell& c) -> Row {
      const problems::InverseProblem& p = probs[c.mu_idx];
      solvers::SolverConfig sc = detail::solver_config(cfg);
      sc.alpha2 = c.alpha2;
      std::string method = "mpir", combo = "native";
      solvers::RunRecord rec;
      if (c.triple_idx < 0) {
        method = "air";
        rec = detail::with_operator(
            p, [&](const auto& op) { return solvers::air_run(op, p.b, sc); });
      } else {
        const fpsim::PrecisionTriple& t = cfg.triples[c.triple_idx];
        sc.precisions = t;
        combo = t.label();
        rec = detail::with_operator(
            p, [&](const auto& op) { return solvers::mpir_run(op, p.b, sc); });
      }
      solvers::fill_rre(rec, p.x_true);
      const auto [m, s] = metrics::srre_truncated(rec.rre_history);
      return {method, combo, c.alpha2, cfg.grid_mu[c.mu_idx], m, s, rec.diverged};
    };

    std::vector<Row> rows(cells.size());
    if (opts.parallel) {
      std::vector<std::future<Row>> futs;
      futs.reserve(cells.size());
      for (const Cell& c : cells)
        futs.push_back(std::async(std::launch::async, compute, c));
      for (std::size_t i = 0; i < futs.size(); ++i) rows[i] = futs[i].get();
    } else {
      for (std::size_t i = 0; i < cells.size(); ++i) rows[i] = compute(cells[i]);
    }

    std::string s = "method,combo,alpha2,mu,srre,srre_std,diverged\n";
    for (const Row& r : rows) {
      outcome.any_divergence |= r.diverged;
      s += r.method + "," + detail::csv_quote(r.combo) + "," + linalg::format_g17(r.alpha2) +
           "," + linalg::format_g17(r.mu) + "," + linalg::format_g17(r.srre) + "," +
           linalg::format_g17(r.srre_std) + "," + (r.diverged ? "1" : "0") + "\n";
    }
    emit("table3.csv", s);
  }

  {
    std::string m;
    m += "tool_version = ";
    m += kToolVersion;
    m += "\n";
    m += "config_hash = fnv1a64:" + detail::hex16(detail::fnv1a64(raw_config)) + "\n";
    m += "seed = " + std::to_string(base_seed) + "\n";
    m += "seed_overridden = " + std::string(opts.seed_override ? "1" : "0") + "\n";
    m += "problem = " + cfg.problem.kind + "\n";
    m += "method = " + cfg.method + "\n";
    emit("manifest.txt", m);
  }

  return outcome;
}

}  // namespace mptik::expcli
