#pragma once
// Dense linear algebra at desk scale, plus the structured operators used by
// the regularized solvers: the spectral Tikhonov preconditioner, circulant
// approximations, and two-factor Kronecker products.
//
// Decompositions (SVD, symmetric eigensolve) run in native double precision
// through Eigen. Reduced-precision effects enter only through the chopped
// kernels and through the preconditioner's spectral data, which is rounded to
// the storage format after the native decomposition.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mptik/fpsim.hpp"

namespace mptik::linalg {

using fpsim::FloatFormat;

// ---------------------------------------------------------------------------
// Dense matrices (row-major) and their text serialization.

struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("DenseMatrix: negative dimension");
  }

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

  static DenseMatrix identity(int n) {
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  DenseMatrix transposed() const {
    DenseMatrix t(cols, rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }
};

inline DenseMatrix round_matrix(const DenseMatrix& m, const FloatFormat& f) {
  DenseMatrix r = m;
  r.a = fpsim::round_array(std::move(r.a), f);
  return r;
}

// Decimal text with 17 significant digits round-trips doubles exactly.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_matrix(std::ostream& os, const DenseMatrix& m) {
  os << m.rows << ' ' << m.cols << '\n';
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      if (j) os << ' ';
      os << format_g17(m(i, j));
    }
    os << '\n';
  }
}

inline void write_matrix(const std::string& path, const DenseMatrix& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_matrix: cannot open " + path);
  write_matrix(os, m);
  if (!os.good()) throw std::runtime_error("write_matrix: write failed for " + path);
}

inline DenseMatrix read_matrix(std::istream& is, const std::string& what) {
  long long r = 0, c = 0;
  if (!(is >> r >> c) || r < 0 || c < 0 || r > 100000 || c > 100000)
    throw std::runtime_error(what + ": bad dimension header");
  DenseMatrix m(static_cast<int>(r), static_cast<int>(c));
  for (long long i = 0; i < r; ++i)
    for (long long j = 0; j < c; ++j) {
      double v;
      if (!(is >> v))
        throw std::runtime_error(what + ": non-numeric or missing value at row " +
                                 std::to_string(i) + ", column " + std::to_string(j));
      m(static_cast<int>(i), static_cast<int>(j)) = v;
    }
  return m;
}

inline DenseMatrix read_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_matrix: cannot open " + path);
  return read_matrix(is, path);
}

// ---------------------------------------------------------------------------
// Small vector helpers (native precision).

inline double norm2(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}
inline double norm2(const std::vector<double>& x) { return norm2(std::span<const double>(x)); }

inline std::vector<double> matvec(const DenseMatrix& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.cols) throw std::invalid_argument("matvec: size mismatch");
  std::vector<double> y(m.rows, 0.0);
  for (int i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < m.cols; ++j) acc += m(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

inline std::vector<double> matvec_t(const DenseMatrix& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.rows) throw std::invalid_argument("matvec_t: size mismatch");
  std::vector<double> y(m.cols, 0.0);
  for (int j = 0; j < m.cols; ++j) {
    double acc = 0.0;
    for (int i = 0; i < m.rows; ++i) acc += m(i, j) * x[i];
    y[j] = acc;
  }
  return y;
}

// Matrix-vector product where every scalar operation is rounded to the
// format. One accumulator per output entry, ascending index order.
inline std::vector<double> chopped_matvec(const DenseMatrix& m, std::span<const double> x,
                                          const FloatFormat& f) {
  if (static_cast<int>(x.size()) != m.cols)
    throw std::invalid_argument("chopped_matvec: size mismatch");
  if (f.passthrough()) return matvec(m, x);
  std::vector<double> y(m.rows, 0.0);
  for (int i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      const double p =
          fpsim::round_value(fpsim::round_value(m(i, j), f) * fpsim::round_value(x[j], f), f);
      acc = fpsim::round_value(acc + p, f);
    }
    y[i] = acc;
  }
  return y;
}

// Same for the transpose; iterates rows of m^T (= columns of m) without
// materializing the transpose. Bit-identical to chopped_matvec(m^T, x, f).
inline std::vector<double> chopped_matvec_t(const DenseMatrix& m, std::span<const double> x,
                                            const FloatFormat& f) {
  if (static_cast<int>(x.size()) != m.rows)
    throw std::invalid_argument("chopped_matvec_t: size mismatch");
  if (f.passthrough()) return matvec_t(m, x);
  std::vector<double> y(m.cols, 0.0);
  for (int j = 0; j < m.cols; ++j) {
    double acc = 0.0;
    for (int i = 0; i < m.rows; ++i) {
      const double p =
          fpsim::round_value(fpsim::round_value(m(i, j), f) * fpsim::round_value(x[i], f), f);
      acc = fpsim::round_value(acc + p, f);
    }
    y[j] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Native-precision decompositions.

namespace detail {

inline Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  return e;
}

inline DenseMatrix from_eigen(const Eigen::MatrixXd& e) {
  DenseMatrix m(static_cast<int>(e.rows()), static_cast<int>(e.cols()));
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) m(i, j) = e(i, j);
  return m;
}

inline void require_finite(const DenseMatrix& m, const char* who) {
  for (double v : m.a)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite entry");
}

}  // namespace detail

struct SvdFactors {
  DenseMatrix U;              // m x n, thin
  std::vector<double> sigma;  // nonincreasing
  DenseMatrix V;              // n x n
};

inline SvdFactors svd(const DenseMatrix& a) {
  detail::require_finite(a, "svd");
  Eigen::JacobiSVD<Eigen::MatrixXd> dec(detail::to_eigen(a),
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdFactors out;
  out.U = detail::from_eigen(dec.matrixU());
  out.V = detail::from_eigen(dec.matrixV());
  out.sigma.assign(dec.singularValues().data(),
                   dec.singularValues().data() + dec.singularValues().size());
  return out;
}

// ---------------------------------------------------------------------------
// Spectral Tikhonov preconditioner. The normal-equations matrix is formed
// with chopped kernels in the storage format, eigendecomposed natively, and
// only the eigenvalues are re-rounded to the storage format. The basis stays
// in native precision; its columns are sign-aligned against the operator's
// right singular basis so that filter extraction and the recursions share one
// orientation convention (solves are unaffected by column signs).

struct TikPreconditioner {
  FloatFormat format;              // storage format of the spectral data
  double alpha2 = 0.0;
  std::vector<double> sigma_M_sq;  // Gram eigenvalues, descending, rounded
  std::vector<double> d_M_sq;      // round(sigma_M_sq + alpha2), positive
  DenseMatrix V_M;                 // native basis, columns follow sigma order

  int size() const { return V_M.cols; }
};

inline TikPreconditioner build_preconditioner(const DenseMatrix& a, double alpha2,
                                              const FloatFormat& pr1) {
  if (!(alpha2 > 0.0)) throw std::invalid_argument("build_preconditioner: alpha2 must be > 0");
  detail::require_finite(a, "build_preconditioner");
  const int n = a.cols;

  const DenseMatrix a1 = round_matrix(a, pr1);
  DenseMatrix gram(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double acc = 0.0;
      if (pr1.passthrough()) {
        for (int k = 0; k < a1.rows; ++k) acc += a1(k, i) * a1(k, j);
      } else {
        for (int k = 0; k < a1.rows; ++k) {
          const double p = fpsim::round_value(a1(k, i) * a1(k, j), pr1);
          acc = fpsim::round_value(acc + p, pr1);
        }
      }
      gram(i, j) = acc;
      gram(j, i) = acc;  // the chopped dot is symmetric in its arguments
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(detail::to_eigen(gram));
  if (es.info() != Eigen::Success)
    throw std::runtime_error("build_preconditioner: eigendecomposition failed");

  // Eigen orders ascending; flip to descending (stable, deterministic).
  std::vector<double> lam(n);
  DenseMatrix basis(n, n);
  for (int j = 0; j < n; ++j) {
    lam[j] = es.eigenvalues()(n - 1 - j);
    for (int i = 0; i < n; ++i) basis(i, j) = es.eigenvectors()(i, n - 1 - j);
  }

  // Tiny negative eigenvalues are rounding debris from the chopped Gram;
  // clamp them, but refuse anything beyond the rounding slack.
  const double lam_max = lam.empty() ? 0.0 : lam[0];
  const double slack = n * fpsim::unit_roundoff(pr1) * std::max(lam_max, 0.0);
  for (double& l : lam) {
    if (l < 0.0) {
      if (l < -slack)
        throw std::runtime_error("build_preconditioner: Gram matrix indefinite beyond rounding slack");
      l = 0.0;
    }
  }

  // Orient each basis column along the corresponding right singular vector.
  const SvdFactors sv = svd(a);
  for (int j = 0; j < n; ++j) {
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += basis(i, j) * sv.V(i, j);
    if (dot < 0.0)
      for (int i = 0; i < n; ++i) basis(i, j) = -basis(i, j);
  }

  TikPreconditioner p;
  p.format = pr1;
  p.alpha2 = alpha2;
  p.V_M = std::move(basis);
  p.sigma_M_sq.resize(n);
  p.d_M_sq.resize(n);
  for (int j = 0; j < n; ++j) {
    p.sigma_M_sq[j] = fpsim::round_value(lam[j], pr1);
    // alpha2 itself is not pre-rounded; the shifted value is rounded once.
    p.d_M_sq[j] = fpsim::round_value(p.sigma_M_sq[j] + alpha2, pr1);
    if (!(p.d_M_sq[j] > 0.0))
      throw std::runtime_error("build_preconditioner: nonpositive shifted eigenvalue");
  }
  return p;
}

// h = V diag(1/d^2) V^T s with every matrix-vector product and the
// elementwise division evaluated through chopped kernels in `f`.
inline std::vector<double> precond_solve(const TikPreconditioner& p, std::span<const double> s,
                                         const FloatFormat& f) {
  std::vector<double> t = chopped_matvec_t(p.V_M, s, f);
  const fpsim::ChoppedScalar ops(f);
  for (int j = 0; j < p.size(); ++j) t[j] = ops.div(t[j], p.d_M_sq[j]);
  return chopped_matvec(p.V_M, t, f);
}

// Native-precision coefficients of x in the preconditioner basis (V_M^T x).
inline std::vector<double> basis_project(const TikPreconditioner& p, std::span<const double> x) {
  return matvec_t(p.V_M, x);
}

// ---------------------------------------------------------------------------
// Circulant approximation (Frobenius-optimal) and circulant spectra.

// First column of the circulant closest to `a` in the Frobenius norm: each
// entry is the average of one circulant diagonal, c[k] = mean_i a[(i+k) mod n, i].
inline std::vector<double> chan_circulant(const DenseMatrix& a) {
  if (a.rows != a.cols) throw std::invalid_argument("chan_circulant: square matrix required");
  const int n = a.rows;
  std::vector<double> c(n, 0.0);
  for (int k = 0; k < n; ++k) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a((i + k) % n, i);
    c[k] = s / n;
  }
  return c;
}

inline DenseMatrix circulant_matrix(const std::vector<double>& c) {
  const int n = static_cast<int>(c.size());
  DenseMatrix m(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) m((i + j) % n, j) = c[i];
  return m;
}

// Eigenvalues of the circulant with first column c: the DFT of c.
inline std::vector<std::complex<double>> circulant_eigvals(const std::vector<double>& c) {
  const int n = static_cast<int>(c.size());
  if (n == 0) throw std::invalid_argument("circulant_eigvals: empty first column");
  std::vector<std::complex<double>> lam(n);
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (int j = 0; j < n; ++j) {
      const double ang = -2.0 * std::numbers::pi * double(j) * double(k) / double(n);
      acc += c[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    lam[k] = acc;
  }
  return lam;
}

namespace detail {

inline std::vector<std::complex<double>> dft(std::span<const std::complex<double>> x, int sign) {
  const int n = static_cast<int>(x.size());
  std::vector<std::complex<double>> y(n);
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (int j = 0; j < n; ++j) {
      const double ang = sign * 2.0 * std::numbers::pi * double(j) * double(k) / double(n);
      acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    y[k] = acc;
  }
  return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Two-factor Kronecker operator A = Ar (x) Ac, applied through the matrix
// identity (Ar (x) Ac) vec(X) = vec(Ac X Ar^T) with X laid out column-major
// as cols(Ac) x cols(Ar). The product itself is never materialized.

struct KronOperator {
  DenseMatrix Ar, Ac;

  int rows() const { return Ar.rows * Ac.rows; }
  int cols() const { return Ar.cols * Ac.cols; }
};

namespace detail {

// C = A * B with chopped kernels (every product and partial add rounded).
inline DenseMatrix chopped_mat_mul(const DenseMatrix& a, const DenseMatrix& b,
                                   const FloatFormat& f) {
  DenseMatrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      if (f.passthrough()) {
        for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      } else {
        for (int k = 0; k < a.cols; ++k) {
          const double p =
              fpsim::round_value(fpsim::round_value(a(i, k), f) * fpsim::round_value(b(k, j), f), f);
          acc = fpsim::round_value(acc + p, f);
        }
      }
      c(i, j) = acc;
    }
  return c;
}

// C = A * B^T with chopped kernels.
inline DenseMatrix chopped_mat_mul_bt(const DenseMatrix& a, const DenseMatrix& b,
                                      const FloatFormat& f) {
  DenseMatrix c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      if (f.passthrough()) {
        for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
      } else {
        for (int k = 0; k < a.cols; ++k) {
          const double p =
              fpsim::round_value(fpsim::round_value(a(i, k), f) * fpsim::round_value(b(j, k), f), f);
          acc = fpsim::round_value(acc + p, f);
        }
      }
      c(i, j) = acc;
    }
  return c;
}

inline DenseMatrix unvec(std::span<const double> x, int rows, int cols) {
  if (static_cast<int>(x.size()) != rows * cols)
    throw std::invalid_argument("kron: vector length does not match factor dimensions");
  DenseMatrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = x[static_cast<std::size_t>(j) * rows + i];
  return m;
}

inline std::vector<double> vec(const DenseMatrix& m) {
  std::vector<double> x(static_cast<std::size_t>(m.rows) * m.cols);
  for (int j = 0; j < m.cols; ++j)
    for (int i = 0; i < m.rows; ++i) x[static_cast<std::size_t>(j) * m.rows + i] = m(i, j);
  return x;
}

}  // namespace detail

inline std::vector<double> kron_matvec(const KronOperator& k, std::span<const double> x,
                                       const FloatFormat& f) {
  const DenseMatrix xm = detail::unvec(x, k.Ac.cols, k.Ar.cols);
  const DenseMatrix t = detail::chopped_mat_mul(k.Ac, xm, f);
  return detail::vec(detail::chopped_mat_mul_bt(t, k.Ar, f));
}

inline std::vector<double> kron_matvec_t(const KronOperator& k, std::span<const double> x,
                                         const FloatFormat& f) {
  const DenseMatrix xm = detail::unvec(x, k.Ac.rows, k.Ar.rows);
  const DenseMatrix t = detail::chopped_mat_mul(k.Ac.transposed(), xm, f);
  return detail::vec(detail::chopped_mat_mul_bt(t, k.Ar.transposed(), f));
}

inline DenseMatrix kron_materialize(const KronOperator& k) {
  DenseMatrix m(k.rows(), k.cols());
  for (int ir = 0; ir < k.Ar.rows; ++ir)
    for (int jr = 0; jr < k.Ar.cols; ++jr)
      for (int ic = 0; ic < k.Ac.rows; ++ic)
        for (int jc = 0; jc < k.Ac.cols; ++jc)
          m(ir * k.Ac.rows + ic, jr * k.Ac.cols + jc) = k.Ar(ir, jr) * k.Ac(ic, jc);
  return m;
}

// Singular structure of the Kronecker operator from the factor SVDs: the
// singular values are all products sigma_r[i] * sigma_c[j], reported in
// descending order with a deterministic tie order.
struct KronSvd {
  SvdFactors r, c;
  std::vector<std::pair<int, int>> order;  // (index into r, index into c)
  std::vector<double> sigma;               // sorted products
};

inline KronSvd kron_svd(const KronOperator& k) {
  KronSvd out;
  out.r = svd(k.Ar);
  out.c = svd(k.Ac);
  const int nr = static_cast<int>(out.r.sigma.size());
  const int nc = static_cast<int>(out.c.sigma.size());
  out.order.reserve(static_cast<std::size_t>(nr) * nc);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j) out.order.emplace_back(i, j);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](const std::pair<int, int>& p, const std::pair<int, int>& q) {
                     return out.r.sigma[p.first] * out.c.sigma[p.second] >
                            out.r.sigma[q.first] * out.c.sigma[q.second];
                   });
  out.sigma.reserve(out.order.size());
  for (const auto& [i, j] : out.order) out.sigma.push_back(out.r.sigma[i] * out.c.sigma[j]);
  return out;
}

// ---------------------------------------------------------------------------
// Kronecker-structured Tikhonov preconditioner: per-factor Gram spectra in
// the storage format, native factor bases, diagonal shift applied in the
// product spectrum. Solves use the two-sided basis products.

struct KronTikPreconditioner {
  FloatFormat format;
  double alpha2 = 0.0;
  DenseMatrix Vr, Vc;                      // native factor bases
  std::vector<double> lam_r, lam_c;        // factor Gram eigenvalues, rounded
  std::vector<double> d_nat;               // shifted spectrum, natural layout
  std::vector<std::pair<int, int>> order;  // descending product order (r, c)
  std::vector<double> sigma_M_sq;          // rounded products, sorted
  std::vector<double> d_M_sq;              // shifted, sorted

  int size() const { return Vr.cols * Vc.cols; }
};

inline KronTikPreconditioner build_preconditioner(const KronOperator& k, double alpha2,
                                                  const FloatFormat& pr1) {
  if (!(alpha2 > 0.0)) throw std::invalid_argument("build_preconditioner: alpha2 must be > 0");
  // Reuse the dense path per factor with a neutral shift: factor spectra are
  // the Gram eigenvalues themselves, so recover them before the shift.
  // (The dense builder is not reused directly because the factor shift is
  // applied on the product spectrum, not per factor.)
  auto factor_spectrum = [&](const DenseMatrix& a, std::vector<double>& lam_rounded,
                             std::vector<double>& lam_native, DenseMatrix& basis) {
    detail::require_finite(a, "build_preconditioner");
    const int n = a.cols;
    const DenseMatrix a1 = round_matrix(a, pr1);
    DenseMatrix gram(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        double acc = 0.0;
        if (pr1.passthrough()) {
          for (int kk = 0; kk < a1.rows; ++kk) acc += a1(kk, i) * a1(kk, j);
        } else {
          for (int kk = 0; kk < a1.rows; ++kk) {
            const double p = fpsim::round_value(a1(kk, i) * a1(kk, j), pr1);
            acc = fpsim::round_value(acc + p, pr1);
          }
        }
        gram(i, j) = acc;
        gram(j, i) = acc;
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(detail::to_eigen(gram));
    if (es.info() != Eigen::Success)
      throw std::runtime_error("build_preconditioner: eigendecomposition failed");
    lam_native.resize(n);
    basis = DenseMatrix(n, n);
    for (int j = 0; j < n; ++j) {
      lam_native[j] = es.eigenvalues()(n - 1 - j);
      for (int i = 0; i < n; ++i) basis(i, j) = es.eigenvectors()(i, n - 1 - j);
    }
    const double lam_max = lam_native.empty() ? 0.0 : std::max(lam_native[0], 0.0);
    const double slack = n * fpsim::unit_roundoff(pr1) * lam_max;
    for (double& l : lam_native) {
      if (l < 0.0) {
        if (l < -slack)
          throw std::runtime_error(
              "build_preconditioner: Gram matrix indefinite beyond rounding slack");
        l = 0.0;
      }
    }
    const SvdFactors sv = svd(a);
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += basis(i, j) * sv.V(i, j);
      if (dot < 0.0)
        for (int i = 0; i < n; ++i) basis(i, j) = -basis(i, j);
    }
    lam_rounded.resize(n);
    for (int j = 0; j < n; ++j) lam_rounded[j] = fpsim::round_value(lam_native[j], pr1);
  };

  KronTikPreconditioner p;
  p.format = pr1;
  p.alpha2 = alpha2;
  std::vector<double> lam_r_native, lam_c_native;
  factor_spectrum(k.Ar, p.lam_r, lam_r_native, p.Vr);
  factor_spectrum(k.Ac, p.lam_c, lam_c_native, p.Vc);

  const int nr = k.Ar.cols, nc = k.Ac.cols;
  p.d_nat.resize(static_cast<std::size_t>(nr) * nc);
  for (int q = 0; q < nr; ++q)
    for (int i = 0; i < nc; ++i) {
      const double prod = fpsim::round_value(p.lam_r[q] * p.lam_c[i], pr1);
      const double d = fpsim::round_value(prod + alpha2, pr1);
      if (!(d > 0.0))
        throw std::runtime_error("build_preconditioner: nonpositive shifted eigenvalue");
      p.d_nat[static_cast<std::size_t>(q) * nc + i] = d;
    }

  p.order.reserve(static_cast<std::size_t>(nr) * nc);
  for (int q = 0; q < nr; ++q)
    for (int i = 0; i < nc; ++i) p.order.emplace_back(q, i);
  std::stable_sort(p.order.begin(), p.order.end(),
                   [&](const std::pair<int, int>& a, const std::pair<int, int>& b) {
                     return lam_r_native[a.first] * lam_c_native[a.second] >
                            lam_r_native[b.first] * lam_c_native[b.second];
                   });
  p.sigma_M_sq.reserve(p.order.size());
  p.d_M_sq.reserve(p.order.size());
  for (const auto& [q, i] : p.order) {
    p.sigma_M_sq.push_back(fpsim::round_value(p.lam_r[q] * p.lam_c[i], pr1));
    p.d_M_sq.push_back(p.d_nat[static_cast<std::size_t>(q) * nc + i]);
  }
  return p;
}

inline std::vector<double> precond_solve(const KronTikPreconditioner& p,
                                         std::span<const double> s, const FloatFormat& f) {
  const int nr = p.Vr.cols, nc = p.Vc.cols;
  // t = (Vr (x) Vc)^T s  =  vec(Vc^T S Vr)
  const DenseMatrix sm = detail::unvec(s, nc, nr);
  DenseMatrix t = detail::chopped_mat_mul(p.Vc.transposed(), sm, f);
  t = detail::chopped_mat_mul(t, p.Vr, f);
  const fpsim::ChoppedScalar ops(f);
  for (int q = 0; q < nr; ++q)
    for (int i = 0; i < nc; ++i)
      t(i, q) = ops.div(t(i, q), p.d_nat[static_cast<std::size_t>(q) * nc + i]);
  // h = (Vr (x) Vc) w = vec(Vc W Vr^T)
  DenseMatrix h = detail::chopped_mat_mul(p.Vc, t, f);
  h = detail::chopped_mat_mul_bt(h, p.Vr, f);
  return detail::vec(h);
}

// Coefficients of x in the sorted product basis (for filter extraction).
inline std::vector<double> basis_project(const KronTikPreconditioner& p,
                                         std::span<const double> x) {
  const int nr = p.Vr.cols, nc = p.Vc.cols;
  const DenseMatrix xm = detail::unvec(x, nc, nr);
  Eigen::MatrixXd t = detail::to_eigen(p.Vc).transpose() * detail::to_eigen(xm) *
                      detail::to_eigen(p.Vr);
  std::vector<double> out;
  out.reserve(p.order.size());
  for (const auto& [q, i] : p.order) out.push_back(t(i, q));
  return out;
}

}  // namespace mptik::linalg
