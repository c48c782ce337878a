#pragma once
// Filter-factor formulas and recursions: direct Tikhonov, Landweber,
// preconditioned Landweber (closed form and reduced-precision recursion),
// iterative refinement (native and mixed precision), and extraction of
// effective filter factors from computed iterates.
//
// Index conventions: filter sets hold K+1 rows, row 0 all zeros (the zero
// starting guess), row k the factors of iterate k. Spectral data is paired
// positionally: entry j uses sigma_A[j] (operator singular values,
// descending) and the preconditioner's j-th stored eigenvalue/shift.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mptik/fpsim.hpp"
#include "mptik/linalg.hpp"

namespace mptik::filters {

using fpsim::FloatFormat;
using fpsim::PrecisionTriple;
using linalg::DenseMatrix;
using linalg::SvdFactors;
using linalg::TikPreconditioner;

struct FilterSet {
  std::string kind;                         // tikhonov | landweber | pl_closed | ...
  std::vector<std::vector<double>> values;  // values[k][j], k = 0..K
  std::string triple_label;                 // set for mixed-precision kinds

  int iterations() const { return static_cast<int>(values.size()) - 1; }
  int size() const { return values.empty() ? 0 : static_cast<int>(values[0].size()); }
};

// phi_j = sigma_j^2 / (sigma_j^2 + alpha^2)
inline std::vector<double> tikhonov_filters(std::span<const double> sigmaA, double alpha2) {
  if (!(alpha2 > 0.0)) throw std::invalid_argument("tikhonov_filters: alpha2 must be > 0");
  std::vector<double> phi(sigmaA.size());
  for (std::size_t j = 0; j < sigmaA.size(); ++j) {
    const double s2 = sigmaA[j] * sigmaA[j];
    phi[j] = s2 / (s2 + alpha2);
  }
  return phi;
}

// phi_j = 1 - (1 - sigma_j^2)^k, unit step size; requires sigma_j <= 1.
inline std::vector<double> landweber_filters(std::span<const double> sigmaA, int k) {
  if (k < 0) throw std::invalid_argument("landweber_filters: k must be >= 0");
  std::vector<double> phi(sigmaA.size());
  for (std::size_t j = 0; j < sigmaA.size(); ++j) {
    if (sigmaA[j] > 1.0)
      throw std::invalid_argument("landweber_filters: requires sigma <= 1 (unit step size)");
    phi[j] = 1.0 - std::pow(1.0 - sigmaA[j] * sigmaA[j], k);
  }
  return phi;
}

// psi_j = 1 - ((d_j^2 - sigma_j^2) / d_j^2)^k with d^2 taken from the
// preconditioner's stored (storage-format) spectral data, evaluated natively.
inline std::vector<double> pl_filters_closed(std::span<const double> sigmaA,
                                             const TikPreconditioner& p, int k) {
  if (static_cast<int>(sigmaA.size()) != p.size())
    throw std::invalid_argument("pl_filters_closed: size mismatch");
  if (k < 0) throw std::invalid_argument("pl_filters_closed: k must be >= 0");
  std::vector<double> psi(sigmaA.size());
  for (int j = 0; j < p.size(); ++j) {
    const double s2 = sigmaA[j] * sigmaA[j];
    const double d2 = p.d_M_sq[j];
    psi[j] = 1.0 - std::pow((d2 - s2) / d2, k);
  }
  return psi;
}

// Reduced-precision recursion for the preconditioned-Landweber factors:
//   q_j = sigma_j^2 * (1 - sigma_j^2 / d_j^2)^k   g_j = q_j / d_j^2
//   psi^(k+1)_j = psi^(k)_j + g_j
// with every scalar operation rounded at pr3 and the k-th power evaluated in
// double on the rounded ratio, then rounded once.
inline FilterSet pl_filters_recursive(std::span<const double> sigmaA,
                                      const TikPreconditioner& p, int K,
                                      const FloatFormat& pr3) {
  if (static_cast<int>(sigmaA.size()) != p.size())
    throw std::invalid_argument("pl_filters_recursive: size mismatch");
  if (K < 0) throw std::invalid_argument("pl_filters_recursive: K must be >= 0");
  const int n = p.size();
  const fpsim::ChoppedScalar ops(pr3);

  FilterSet out;
  out.kind = "pl_recursive";
  out.values.assign(K + 1, std::vector<double>(n, 0.0));
  std::vector<double> s2(n), t(n);
  for (int j = 0; j < n; ++j) {
    s2[j] = ops.mul(sigmaA[j], sigmaA[j]);
    t[j] = ops.sub(1.0, ops.div(s2[j], p.d_M_sq[j]));
  }
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < n; ++j) {
      const double pw = ops.rnd(std::pow(t[j], k));
      const double q = ops.mul(s2[j], pw);
      const double g = ops.div(q, p.d_M_sq[j]);
      out.values[k + 1][j] = ops.add(out.values[k][j], g);
    }
  }
  return out;
}

// Native-precision iterative-refinement factors:
//   phi^(k)_j = psi^(k)_j
//             - (alpha^2/d_j^2) * sum_{i=0}^{k-1} t_j^i * phi^(k-1-i)_j,
// with t_j = 1 - sigma_j^2/d_j^2 and psi from the closed form.
inline FilterSet ir_filters(std::span<const double> sigmaA, const TikPreconditioner& p, int K) {
  if (static_cast<int>(sigmaA.size()) != p.size())
    throw std::invalid_argument("ir_filters: size mismatch");
  if (K < 0) throw std::invalid_argument("ir_filters: K must be >= 0");
  const int n = p.size();

  FilterSet out;
  out.kind = "ir_exact";
  out.values.assign(K + 1, std::vector<double>(n, 0.0));
  std::vector<double> t(n);
  for (int j = 0; j < n; ++j) t[j] = 1.0 - sigmaA[j] * sigmaA[j] / p.d_M_sq[j];
  for (int k = 1; k <= K; ++k) {
    const std::vector<double> psi = pl_filters_closed(sigmaA, p, k);
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      double pw = 1.0;
      for (int i = 0; i <= k - 1; ++i) {
        acc += pw * out.values[k - 1 - i][j];
        pw *= t[j];
      }
      out.values[k][j] = psi[j] - (p.alpha2 / p.d_M_sq[j]) * acc;
    }
  }
  return out;
}

// Mixed-precision iterative-refinement factors. Per iteration (producing
// phi^(k+1) from psi^(k+1), psi^(k), and the history phi^(0..k)):
//   q_j   = d_j^2 (psi^(k+1)_j - psi^(k)_j) - alpha^2 phi^(k)_j        [pr3]
//   q_j  += (alpha^2 sigma_j^2 / d_j^2) sum_{i=0}^{k-1} t^i phi^(k-1-i) [pr3]
//   g_j   = q_j / d_j^2                                                 [pr2]
//   phi^(k+1)_j = phi^(k)_j + g_j                                       [pr2]
// The psi sequence is the pr3 recursion above; the history sum accumulates
// ascending in i with incrementally rounded powers of t.
inline FilterSet mpir_filters(std::span<const double> sigmaA, const TikPreconditioner& p, int K,
                              const PrecisionTriple& triple) {
  if (static_cast<int>(sigmaA.size()) != p.size())
    throw std::invalid_argument("mpir_filters: size mismatch");
  if (K < 0) throw std::invalid_argument("mpir_filters: K must be >= 0");
  const int n = p.size();
  const fpsim::ChoppedScalar ops3(triple.pr3);
  const fpsim::ChoppedScalar ops2(triple.pr2);

  const FilterSet psi = pl_filters_recursive(sigmaA, p, K, triple.pr3);

  FilterSet out;
  out.kind = "ir_mixed";
  out.triple_label = triple.label();
  out.values.assign(K + 1, std::vector<double>(n, 0.0));
  std::vector<double> s2(n), t(n);
  for (int j = 0; j < n; ++j) {
    s2[j] = ops3.mul(sigmaA[j], sigmaA[j]);
    t[j] = ops3.sub(1.0, ops3.div(s2[j], p.d_M_sq[j]));
  }
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < n; ++j) {
      const double dpsi = ops3.sub(psi.values[k + 1][j], psi.values[k][j]);
      double q = ops3.sub(ops3.mul(p.d_M_sq[j], dpsi), ops3.mul(p.alpha2, out.values[k][j]));
      double acc = 0.0;
      double pw = 1.0;
      for (int i = 0; i <= k - 1; ++i) {
        acc = ops3.add(acc, ops3.mul(pw, out.values[k - 1 - i][j]));
        pw = ops3.mul(pw, t[j]);
      }
      const double coef = ops3.div(ops3.mul(p.alpha2, s2[j]), p.d_M_sq[j]);
      q = ops3.add(q, ops3.mul(coef, acc));
      const double g = ops2.div(q, p.d_M_sq[j]);
      out.values[k + 1][j] = ops2.add(out.values[k][j], g);
    }
  }
  return out;
}

// Effective filter factors of a computed iterate:
//   omega_j = sigma_{A,j} * (v_{M,j}^T x) / (u_{A,j}^T b).
// Entries whose spectral coefficient of b falls below guard*||b|| are flagged
// as unreliable; their quotient is still reported (0 when the coefficient is
// exactly zero) so statistics cover every entry.
struct EffectiveFilters {
  std::vector<double> omega;
  std::vector<char> flagged;
};

inline EffectiveFilters effective_filters(std::span<const double> x_k, const SvdFactors& svdA,
                                          const DenseMatrix& v_m, std::span<const double> b,
                                          double guard = 1e-14) {
  const int n = static_cast<int>(svdA.sigma.size());
  if (v_m.cols != n || static_cast<int>(x_k.size()) != v_m.rows)
    throw std::invalid_argument("effective_filters: size mismatch");
  const double nb = linalg::norm2(b);
  if (!(nb > 0.0)) throw std::invalid_argument("effective_filters: b has zero norm");

  const std::vector<double> coeff_x = linalg::matvec_t(v_m, x_k);
  const std::vector<double> coeff_b = linalg::matvec_t(svdA.U, b);

  EffectiveFilters out;
  out.omega.assign(n, 0.0);
  out.flagged.assign(n, 0);
  for (int j = 0; j < n; ++j) {
    if (std::abs(coeff_b[j]) < guard * nb) out.flagged[j] = 1;
    out.omega[j] = (coeff_b[j] == 0.0) ? 0.0 : svdA.sigma[j] * coeff_x[j] / coeff_b[j];
  }
  return out;
}

// Inverse of the extraction above: x = sum_j values_j * (u_j^T b / sigma_j) * v_{M,j}.
// Exact-zero singular values contribute nothing (their filters are zero).
inline std::vector<double> assemble_filtered_solution(std::span<const double> values,
                                                      const SvdFactors& svdA,
                                                      const DenseMatrix& v_m,
                                                      std::span<const double> b) {
  const int n = static_cast<int>(svdA.sigma.size());
  if (static_cast<int>(values.size()) != n || v_m.cols != n)
    throw std::invalid_argument("assemble_filtered_solution: size mismatch");
  const std::vector<double> coeff_b = linalg::matvec_t(svdA.U, b);
  std::vector<double> w(n, 0.0);
  for (int j = 0; j < n; ++j)
    if (svdA.sigma[j] != 0.0) w[j] = values[j] * coeff_b[j] / svdA.sigma[j];
  return linalg::matvec(v_m, w);
}

}  // namespace mptik::filters
