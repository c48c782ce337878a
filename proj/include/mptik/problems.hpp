#pragma once
// Test-problem construction: a 1D spectrometry-style Gaussian blur, a 2D
// separable deblurring problem in Kronecker form, and the additive Gaussian
// noise model with exact percentage scaling.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mptik/linalg.hpp"

namespace mptik::problems {

using linalg::DenseMatrix;
using linalg::KronOperator;

// ---------------------------------------------------------------------------
// Problem container. The operator is dense in 1D and Kronecker-structured in
// 2D; everything else is common.

struct InverseProblem {
  std::variant<DenseMatrix, KronOperator> op;
  std::vector<double> b_exact;  // A * x_true, native precision
  std::vector<double> b;        // b_exact + e
  std::vector<double> x_true;
  double noise_level_percent = 0.0;  // mu = 100 ||e|| / ||b_exact||
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> meta;  // ordered key/value

  bool is_kron() const { return std::holds_alternative<KronOperator>(op); }
  const DenseMatrix& dense() const { return std::get<DenseMatrix>(op); }
  const KronOperator& kron() const { return std::get<KronOperator>(op); }
};

// ---------------------------------------------------------------------------
// 1D problem: symmetric Gaussian blur on a line, entries
// a_{i,j} = exp(-(i-j)^2 / (2 eta^2)) / (eta sqrt(2 pi)).

inline DenseMatrix spectra_matrix(int n, double eta) {
  if (n < 2) throw std::invalid_argument("spectra_matrix: n must be >= 2");
  if (!(eta > 0.0)) throw std::invalid_argument("spectra_matrix: eta must be > 0");
  DenseMatrix a(n, n);
  const double scale = 1.0 / (eta * std::sqrt(2.0 * std::numbers::pi));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double d = double(i - j);
      a(i, j) = scale * std::exp(-d * d / (2.0 * eta * eta));
    }
  return a;
}

// Synthetic emission-spectrum stand-in: four narrow Gaussian peaks on a zero
// background. Fixed coefficients (center as a fraction of the grid, height,
// width in samples); committed here so results are reproducible.
inline std::vector<double> spectra_signal(int n) {
  if (n < 2) throw std::invalid_argument("spectra_signal: n must be >= 2");
  constexpr struct {
    double center_frac, height, width;
  } peaks[4] = {
      {0.22, 1.00, 1.2},
      {0.38, 0.55, 2.8},
      {0.55, 0.80, 1.8},
      {0.75, 0.65, 2.4},
  };
  std::vector<double> x(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double v = 0.0;
    for (const auto& p : peaks) {
      const double d = double(i) - p.center_frac * double(n - 1);
      v += p.height * std::exp(-d * d / (2.0 * p.width * p.width));
    }
    x[i] = v;
  }
  return x;
}

inline std::pair<DenseMatrix, std::vector<double>> gen_spectra(int n, double eta) {
  return {spectra_matrix(n, eta), spectra_signal(n)};
}

// ---------------------------------------------------------------------------
// 2D problem: separable Gaussian point-spread function applied under zero
// boundary conditions. The operator is Ar (x) Ac where Ac blurs image columns
// (size nr) and Ar blurs image rows (size nc); images are stored column-major
// with pixel (i, j) at index i + j*nr.

// 1D PSF stencil of odd length, normalized to unit sum.
inline std::vector<double> gauss_psf(int size, double eta) {
  if (size < 1 || size % 2 == 0) throw std::invalid_argument("gauss_psf: size must be odd >= 1");
  if (!(eta > 0.0)) throw std::invalid_argument("gauss_psf: eta must be > 0");
  std::vector<double> g(size);
  const int c = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = double(i - c);
    g[i] = std::exp(-d * d / (2.0 * eta * eta));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Banded Toeplitz factor with zero boundary conditions.
inline DenseMatrix psf_toeplitz(const std::vector<double>& g, int n) {
  const int c = static_cast<int>(g.size()) / 2;
  DenseMatrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int k = c + (i - j);
      if (k >= 0 && k < static_cast<int>(g.size())) a(i, j) = g[k];
    }
  return a;
}

// Synthetic astronomical scene: bright disks on a black background. Fixed
// coefficients (center fractions, radius as a fraction of the short side,
// intensity); committed here so results are reproducible.
inline std::vector<double> disks_image(int nr, int nc) {
  if (nr < 2 || nc < 2) throw std::invalid_argument("disks_image: sides must be >= 2");
  constexpr struct {
    double ci, cj, r, intensity;
  } disks[3] = {
      {0.30, 0.28, 0.14, 1.00},
      {0.62, 0.68, 0.20, 0.60},
      {0.74, 0.30, 0.10, 0.85},
  };
  const double rscale = double(std::min(nr, nc));
  std::vector<double> x(static_cast<std::size_t>(nr) * nc, 0.0);
  for (int j = 0; j < nc; ++j)
    for (int i = 0; i < nr; ++i) {
      double v = 0.0;
      for (const auto& d : disks) {
        const double di = double(i) - d.ci * double(nr - 1);
        const double dj = double(j) - d.cj * double(nc - 1);
        if (di * di + dj * dj <= (d.r * rscale) * (d.r * rscale)) v = std::max(v, d.intensity);
      }
      x[static_cast<std::size_t>(j) * nr + i] = v;
    }
  return x;
}

inline std::pair<KronOperator, std::vector<double>> gen_deblur2d(int nr, int nc, double psf_eta,
                                                                 int psf_size) {
  if (nr < 2 || nc < 2) throw std::invalid_argument("gen_deblur2d: sides must be >= 2");
  if (psf_size < 1 || psf_size % 2 == 0 || psf_size > std::min(nr, nc))
    throw std::invalid_argument("gen_deblur2d: psf_size must be odd and fit the image");
  const std::vector<double> g = gauss_psf(psf_size, psf_eta);
  KronOperator k{psf_toeplitz(g, nc), psf_toeplitz(g, nr)};
  return {std::move(k), disks_image(nr, nc)};
}

// ---------------------------------------------------------------------------
// Additive Gaussian noise, scaled so 100 ||e|| / ||b_exact|| equals mu to
// native rounding. Draws come from std::mt19937_64 through an explicit
// Box-Muller transform (documented in the README), so committed golden
// vectors are portable across platforms.

namespace detail {

inline double unit_open(std::uint64_t r) {
  // (0, 1): top 53 bits, offset by half an ulp so log() never sees 0.
  return (double(r >> 11) + 0.5) * 0x1p-53;
}

}  // namespace detail

inline std::vector<double> gauss_draws(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> z(n);
  for (int i = 0; i < n; i += 2) {
    const double u1 = detail::unit_open(rng());
    const double u2 = detail::unit_open(rng());
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    z[i] = r * std::cos(a);
    if (i + 1 < n) z[i + 1] = r * std::sin(a);
  }
  return z;
}

inline std::vector<double> add_noise(const std::vector<double>& b_exact, double mu,
                                     std::uint64_t seed) {
  if (mu < 0.0) throw std::invalid_argument("add_noise: mu must be >= 0");
  const int n = static_cast<int>(b_exact.size());
  if (mu == 0.0) return std::vector<double>(n, 0.0);
  const double nb = linalg::norm2(b_exact);
  if (!(nb > 0.0)) throw std::invalid_argument("add_noise: b_exact has zero norm with mu > 0");
  std::vector<double> e = gauss_draws(n, seed);
  const double ne = linalg::norm2(e);
  if (!(ne > 0.0)) throw std::runtime_error("add_noise: degenerate noise draw");
  const double s = (mu / 100.0) * nb / ne;
  for (double& v : e) v *= s;
  return e;
}

// ---------------------------------------------------------------------------
// Assembled problems.

inline InverseProblem make_spectra_problem(int n, double eta, double mu, std::uint64_t seed) {
  auto [a, x_true] = gen_spectra(n, eta);
  InverseProblem p;
  p.b_exact = linalg::matvec(a, x_true);
  p.op = std::move(a);
  p.x_true = std::move(x_true);
  const std::vector<double> e = add_noise(p.b_exact, mu, seed);
  p.b.resize(p.b_exact.size());
  for (std::size_t i = 0; i < p.b.size(); ++i) p.b[i] = p.b_exact[i] + e[i];
  p.noise_level_percent = mu;
  p.seed = seed;
  p.meta = {{"kind", "spectra"},
            {"n", std::to_string(n)},
            {"eta", linalg::format_g17(eta)},
            {"mu", linalg::format_g17(mu)},
            {"seed", std::to_string(seed)}};
  return p;
}

inline InverseProblem make_deblur2d_problem(int nr, int nc, double psf_eta, int psf_size,
                                            double mu, std::uint64_t seed) {
  auto [k, x_true] = gen_deblur2d(nr, nc, psf_eta, psf_size);
  InverseProblem p;
  p.b_exact = linalg::kron_matvec(k, x_true, fpsim::fp64());
  p.op = std::move(k);
  p.x_true = std::move(x_true);
  const std::vector<double> e = add_noise(p.b_exact, mu, seed);
  p.b.resize(p.b_exact.size());
  for (std::size_t i = 0; i < p.b.size(); ++i) p.b[i] = p.b_exact[i] + e[i];
  p.noise_level_percent = mu;
  p.seed = seed;
  p.meta = {{"kind", "deblur2d"},
            {"nr", std::to_string(nr)},
            {"nc", std::to_string(nc)},
            {"psf_eta", linalg::format_g17(psf_eta)},
            {"psf_size", std::to_string(psf_size)},
            {"mu", linalg::format_g17(mu)},
            {"seed", std::to_string(seed)}};
  return p;
}

// ---------------------------------------------------------------------------
// Directory serialization: matrix files in the linalg text format, vectors as
// single-column matrices, and a `meta` file of "key = value" lines.

namespace detail {

inline void write_vector(const std::string& path, const std::vector<double>& v) {
  DenseMatrix m(static_cast<int>(v.size()), 1);
  m.a = v;
  linalg::write_matrix(path, m);
}

inline std::vector<double> read_vector(const std::string& path) {
  DenseMatrix m = linalg::read_matrix(path);
  if (m.cols != 1) throw std::runtime_error(path + ": expected a single-column vector");
  return m.a;
}

}  // namespace detail

inline void save_problem(const std::string& dir, const InverseProblem& p) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  if (p.is_kron()) {
    linalg::write_matrix(dir + "/Ar.txt", p.kron().Ar);
    linalg::write_matrix(dir + "/Ac.txt", p.kron().Ac);
  } else {
    linalg::write_matrix(dir + "/A.txt", p.dense());
  }
  detail::write_vector(dir + "/b.txt", p.b);
  detail::write_vector(dir + "/b_exact.txt", p.b_exact);
  detail::write_vector(dir + "/x_true.txt", p.x_true);
  std::ofstream meta(dir + "/meta");
  if (!meta) throw std::runtime_error("save_problem: cannot open " + dir + "/meta");
  for (const auto& [k, v] : p.meta) meta << k << " = " << v << '\n';
  if (!meta.good()) throw std::runtime_error("save_problem: write failed for " + dir + "/meta");
}

inline std::vector<std::pair<std::string, std::string>> read_meta(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_meta: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    kv.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

inline std::string meta_get(const std::vector<std::pair<std::string, std::string>>& kv,
                            const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  throw std::runtime_error("meta: missing key '" + key + "'");
}

inline InverseProblem load_problem(const std::string& dir) {
  InverseProblem p;
  p.meta = read_meta(dir + "/meta");
  const std::string kind = meta_get(p.meta, "kind");
  if (kind == "spectra") {
    p.op = linalg::read_matrix(dir + "/A.txt");
  } else if (kind == "deblur2d") {
    p.op = KronOperator{linalg::read_matrix(dir + "/Ar.txt"), linalg::read_matrix(dir + "/Ac.txt")};
  } else {
    throw std::runtime_error(dir + "/meta: unknown problem kind '" + kind + "'");
  }
  p.b = detail::read_vector(dir + "/b.txt");
  p.b_exact = detail::read_vector(dir + "/b_exact.txt");
  p.x_true = detail::read_vector(dir + "/x_true.txt");
  p.noise_level_percent = std::stod(meta_get(p.meta, "mu"));
  p.seed = std::stoull(meta_get(p.meta, "seed"));
  return p;
}

}  // namespace mptik::problems
