#pragma once
// Iterative solvers for the regularized least-squares problem
//   min ||A x - b||^2 + alpha^2 ||x||^2
// in native and simulated reduced precision: plain and preconditioned
// Landweber, iterative refinement on the normal equations, its
// mixed-precision variant, and a circulant-preconditioned baseline.

#include <chrono>
#include <cmath>
#include <complex>
#include <span>
#include <stdexcept>
#include <vector>

#include "mptik/fpsim.hpp"
#include "mptik/linalg.hpp"
#include "mptik/metrics.hpp"

namespace mptik::solvers {

using fpsim::ChoppedScalar;
using fpsim::FloatFormat;
using fpsim::PrecisionTriple;
using linalg::DenseMatrix;
using linalg::KronOperator;

struct SolverConfig {
  double alpha2 = 0.0;
  int max_iters = 10;
  PrecisionTriple precisions = PrecisionTriple::all_native();
  double zeta = 1.0;  // relaxation factor, only used by the plain Landweber run

  void validate() const {
    if (!(alpha2 > 0.0)) throw std::invalid_argument("SolverConfig: alpha2 must be > 0");
    if (max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be >= 1");
    if (!(zeta > 0.0 && zeta <= 1.0))
      throw std::invalid_argument("SolverConfig: zeta must be in (0, 1]");
  }
};

// History of one solver run. Entry k of `iterates` is x^(k), with x^(0) = 0;
// residual_norms[k] is the native ||b - A x^(k)|| for the recorded iterate.
// h_norms and iter_seconds have one entry per completed update, so their
// length is iterates.size() - 1. rre_history stays empty until fill_rre is
// called with the true solution. Iterate values are stored as doubles even
// for reduced working precision: every simulated-format value is exactly
// representable.
struct RunRecord {
  std::vector<std::vector<double>> iterates;
  std::vector<double> residual_norms;
  std::vector<double> rre_history;
  std::vector<double> h_norms;
  std::vector<double> iter_seconds;
  bool diverged = false;

  int iterations() const { return static_cast<int>(iterates.size()) - 1; }
};

inline void fill_rre(RunRecord& rec, std::span<const double> x_true) {
  rec.rre_history.clear();
  rec.rre_history.reserve(rec.iterates.size());
  for (const auto& x : rec.iterates) rec.rre_history.push_back(metrics::rre(x, x_true));
}

namespace detail {

inline std::vector<double> apply(const DenseMatrix& a, std::span<const double> x,
                                 const FloatFormat& f) {
  return linalg::chopped_matvec(a, x, f);
}
inline std::vector<double> apply_t(const DenseMatrix& a, std::span<const double> x,
                                   const FloatFormat& f) {
  return linalg::chopped_matvec_t(a, x, f);
}
inline std::vector<double> apply(const KronOperator& k, std::span<const double> x,
                                 const FloatFormat& f) {
  return linalg::kron_matvec(k, x, f);
}
inline std::vector<double> apply_t(const KronOperator& k, std::span<const double> x,
                                   const FloatFormat& f) {
  return linalg::kron_matvec_t(k, x, f);
}
inline int op_cols(const DenseMatrix& a) { return a.cols; }
inline int op_cols(const KronOperator& k) { return k.cols(); }

template <class Op>
inline double residual_norm(const Op& a, const std::vector<double>& b,
                            const std::vector<double>& x) {
  const std::vector<double> ax = apply(a, x, fpsim::fp64());
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double d = b[i] - ax[i];
    s += d * d;
  }
  return std::sqrt(s);
}

template <class Op>
inline void record_iterate(RunRecord& rec, const Op& a, const std::vector<double>& b,
                           const std::vector<double>& x) {
  rec.residual_norms.push_back(residual_norm(a, b, x));
  rec.iterates.push_back(x);
}

inline bool all_finite(const std::vector<double>& x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

// Appends the freshly updated iterate and applies the divergence policy:
// a non-finite iterate is dropped (the record keeps only finite data), a
// finite iterate with ||x|| > 1e12 ||b|| is kept as the final entry. Either
// event sets the flag and stops the run. The cutoff exists because the
// circulant-preconditioned baseline grows past 1e11 at small alpha^2 and
// would otherwise overflow downstream statistics.
template <class Op>
inline bool record_update(RunRecord& rec, const Op& a, const std::vector<double>& b,
                          const std::vector<double>& x, const std::vector<double>& h,
                          double b_norm, std::chrono::steady_clock::time_point t0) {
  if (!all_finite(x)) {
    rec.diverged = true;
    return false;
  }
  rec.h_norms.push_back(linalg::norm2(h));
  rec.iter_seconds.push_back(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  record_iterate(rec, a, b, x);
  if (linalg::norm2(x) > 1e12 * b_norm) {
    rec.diverged = true;
    return false;
  }
  return true;
}

// Shared refinement loop: residual arithmetic at pr3, inner solve and iterate
// update at pr2, preconditioner data already fixed at its storage format.
template <class Op, class Precond>
inline RunRecord refine(const Op& a, const std::vector<double>& b, const Precond& p,
                        const SolverConfig& cfg) {
  const ChoppedScalar ops3(cfg.precisions.pr3);
  const ChoppedScalar ops2(cfg.precisions.pr2);
  const double b_norm = linalg::norm2(b);
  const int n = op_cols(a);

  RunRecord rec;
  std::vector<double> x(n, 0.0);
  record_iterate(rec, a, b, x);
  for (int k = 0; k < cfg.max_iters; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> ax = apply(a, x, cfg.precisions.pr3);
    std::vector<double> r(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) r[i] = ops3.sub(b[i], ax[i]);
    std::vector<double> s = apply_t(a, r, cfg.precisions.pr3);
    for (int i = 0; i < n; ++i) s[i] = ops3.sub(s[i], ops3.mul(cfg.alpha2, x[i]));
    const std::vector<double> h = linalg::precond_solve(p, s, cfg.precisions.pr2);
    for (int i = 0; i < n; ++i) x[i] = ops2.add(x[i], h[i]);
    if (!record_update(rec, a, b, x, h, b_norm, t0)) break;
  }
  return rec;
}

}  // namespace detail

// Direct Tikhonov solution through the SVD of A:
//   x = sum_j sigma_j / (sigma_j^2 + alpha^2) (u_j^T b) v_j.
inline std::vector<double> tikhonov_direct(const DenseMatrix& a, std::span<const double> b,
                                           double alpha2) {
  if (!(alpha2 > 0.0)) throw std::invalid_argument("tikhonov_direct: alpha2 must be > 0");
  const linalg::SvdFactors f = linalg::svd(a);
  std::vector<double> w = linalg::matvec_t(f.U, b);
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double s = f.sigma[j];
    w[j] *= s / (s * s + alpha2);
  }
  return linalg::matvec(f.V, w);
}

// Plain Landweber iteration x <- x + zeta A^T (b - A x), native precision.
// Requires zeta * sigma_max(A)^2 <= 1 (classical convergence condition).
inline RunRecord landweber_run(const DenseMatrix& a, const std::vector<double>& b,
                               const SolverConfig& cfg) {
  cfg.validate();
  const linalg::SvdFactors f = linalg::svd(a);
  const double s1 = f.sigma.empty() ? 0.0 : f.sigma[0];
  if (s1 * s1 * cfg.zeta > 1.0)
    throw std::invalid_argument("landweber_run: zeta * sigma_max(A)^2 exceeds 1");

  const double b_norm = linalg::norm2(b);
  RunRecord rec;
  std::vector<double> x(a.cols, 0.0);
  detail::record_iterate(rec, a, b, x);
  for (int k = 0; k < cfg.max_iters; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> ax = linalg::matvec(a, x);
    std::vector<double> r(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) r[i] = b[i] - ax[i];
    std::vector<double> h = linalg::matvec_t(a, r);
    for (int i = 0; i < a.cols; ++i) {
      h[i] *= cfg.zeta;
      x[i] += h[i];
    }
    if (!detail::record_update(rec, a, b, x, h, b_norm, t0)) break;
  }
  return rec;
}

// Preconditioned Landweber: every step computes s = A^T (b - A x) with
// chopped kernels at pr3 and corrects x by the preconditioner solve of s,
// all at the same format. Works with the dense and the Kronecker-factored
// preconditioner alike.
template <class Op, class Precond>
inline RunRecord pl_run(const Op& a, const std::vector<double>& b, const Precond& p,
                        int max_iters, const FloatFormat& pr3) {
  if (max_iters < 1) throw std::invalid_argument("pl_run: max_iters must be >= 1");
  const ChoppedScalar ops(pr3);
  const double b_norm = linalg::norm2(b);
  const int n = detail::op_cols(a);

  RunRecord rec;
  std::vector<double> x(n, 0.0);
  detail::record_iterate(rec, a, b, x);
  for (int k = 0; k < max_iters; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> ax = detail::apply(a, x, pr3);
    std::vector<double> r(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) r[i] = ops.sub(b[i], ax[i]);
    const std::vector<double> s = detail::apply_t(a, r, pr3);
    const std::vector<double> h = linalg::precond_solve(p, s, pr3);
    for (int i = 0; i < n; ++i) x[i] = ops.add(x[i], h[i]);
    if (!detail::record_update(rec, a, b, x, h, b_norm, t0)) break;
  }
  return rec;
}

// Mixed-precision iterative refinement on the Tikhonov normal equations:
// the preconditioner is factored at pr1, residuals r = b - A x and
// s = A^T r - alpha^2 x run through chopped kernels at pr3, and the inner
// solve plus the iterate update happen at pr2.
template <class Op>
inline RunRecord mpir_run(const Op& a, const std::vector<double>& b, const SolverConfig& cfg) {
  cfg.validate();
  const auto p = linalg::build_preconditioner(a, cfg.alpha2, cfg.precisions.pr1);
  return detail::refine(a, b, p, cfg);
}

// Native-precision iterative refinement. Deliberately the all-native
// instance of the mixed loop (any precisions in cfg are overridden), so the
// two can never drift apart: mpir_run with the all-double triple is this
// function, bit for bit.
template <class Op>
inline RunRecord ir_run(const Op& a, const std::vector<double>& b, const SolverConfig& cfg) {
  SolverConfig native = cfg;
  native.precisions = PrecisionTriple::all_native();
  return mpir_run(a, b, native);
}

namespace detail {

// Native refinement loop with an externally supplied correction solve,
// used by the circulant-preconditioned baseline.
template <class Op, class Solve>
inline RunRecord refine_with_solve(const Op& a, const std::vector<double>& b,
                                   const SolverConfig& cfg, Solve&& solve) {
  const double b_norm = linalg::norm2(b);
  const int n = op_cols(a);

  RunRecord rec;
  std::vector<double> x(n, 0.0);
  record_iterate(rec, a, b, x);
  for (int k = 0; k < cfg.max_iters; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> ax = apply(a, x, fpsim::fp64());
    std::vector<double> r(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) r[i] = b[i] - ax[i];
    std::vector<double> s = apply_t(a, r, fpsim::fp64());
    for (int i = 0; i < n; ++i) s[i] -= cfg.alpha2 * x[i];
    const std::vector<double> h = solve(s);
    for (int i = 0; i < n; ++i) x[i] += h[i];
    if (!record_update(rec, a, b, x, h, b_norm, t0)) break;
  }
  return rec;
}

}  // namespace detail

// Circulant-preconditioned refinement baseline: the correction equation uses
// M^T M = C^T C + alpha^2 I with C the Frobenius-optimal circulant
// approximation of A, solved in the DFT basis. Iteration arithmetic is
// native. Expected to diverge for small alpha^2 on far-from-circulant
// operators; the divergence guard then truncates the record.
inline RunRecord air_run(const DenseMatrix& a, const std::vector<double>& b,
                         const SolverConfig& cfg) {
  cfg.validate();
  if (a.rows != a.cols) throw std::invalid_argument("air_run: square operator required");
  const int n = a.cols;
  const auto lam = linalg::circulant_eigvals(linalg::chan_circulant(a));
  std::vector<double> denom(n);
  for (int k = 0; k < n; ++k) denom[k] = std::norm(lam[k]) + cfg.alpha2;

  const auto solve = [&](const std::vector<double>& s) {
    std::vector<std::complex<double>> z(s.begin(), s.end());
    std::vector<std::complex<double>> zh = linalg::detail::dft(z, -1);
    for (int k = 0; k < n; ++k) zh[k] /= denom[k];
    const std::vector<std::complex<double>> back = linalg::detail::dft(zh, +1);
    std::vector<double> h(n);
    for (int k = 0; k < n; ++k) h[k] = back[k].real() / n;
    return h;
  };
  return detail::refine_with_solve(a, b, cfg, solve);
}

// Two-dimensional variant: C is the Kronecker product of the factors'
// optimal circulants (the Frobenius-optimal periodic-boundary approximation
// of the factored operator), diagonal in the two-dimensional DFT basis.
inline RunRecord air_run(const KronOperator& a, const std::vector<double>& b,
                         const SolverConfig& cfg) {
  cfg.validate();
  if (a.Ar.rows != a.Ar.cols || a.Ac.rows != a.Ac.cols)
    throw std::invalid_argument("air_run: square factors required");
  const int nr = a.Ac.cols;  // length of one image column
  const int nc = a.Ar.cols;  // number of image columns
  const auto lam_r = linalg::circulant_eigvals(linalg::chan_circulant(a.Ar));
  const auto lam_c = linalg::circulant_eigvals(linalg::chan_circulant(a.Ac));

  const auto dft_cols = [&](std::vector<std::complex<double>>& z, int sign) {
    std::vector<std::complex<double>> slice(nr);
    for (int q = 0; q < nc; ++q) {
      for (int i = 0; i < nr; ++i) slice[i] = z[i + static_cast<std::size_t>(q) * nr];
      const auto t = linalg::detail::dft(slice, sign);
      for (int i = 0; i < nr; ++i) z[i + static_cast<std::size_t>(q) * nr] = t[i];
    }
  };
  const auto dft_rows = [&](std::vector<std::complex<double>>& z, int sign) {
    std::vector<std::complex<double>> slice(nc);
    for (int i = 0; i < nr; ++i) {
      for (int q = 0; q < nc; ++q) slice[q] = z[i + static_cast<std::size_t>(q) * nr];
      const auto t = linalg::detail::dft(slice, sign);
      for (int q = 0; q < nc; ++q) z[i + static_cast<std::size_t>(q) * nr] = t[q];
    }
  };
  const auto solve = [&, nr, nc](const std::vector<double>& s) {
    std::vector<std::complex<double>> z(s.begin(), s.end());
    dft_cols(z, -1);
    dft_rows(z, -1);
    for (int q = 0; q < nc; ++q)
      for (int i = 0; i < nr; ++i)
        z[i + static_cast<std::size_t>(q) * nr] /= std::norm(lam_c[i] * lam_r[q]) + cfg.alpha2;
    dft_cols(z, +1);
    dft_rows(z, +1);
    std::vector<double> h(s.size());
    const double scale = static_cast<double>(nr) * nc;
    for (std::size_t p = 0; p < h.size(); ++p) h[p] = z[p].real() / scale;
    return h;
  };
  return detail::refine_with_solve(a, b, cfg, solve);
}

}  // namespace mptik::solvers
