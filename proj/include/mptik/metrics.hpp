#pragma once
// Reconstruction-quality metrics and filter-agreement statistics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "mptik/linalg.hpp"

namespace mptik::metrics {

// Relative reconstruction error ||x_k - x_true|| / ||x_true||.
inline double rre(std::span<const double> x_k, std::span<const double> x_true) {
  if (x_k.size() != x_true.size()) throw std::invalid_argument("rre: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x_k.size(); ++i) {
    const double d = x_k[i] - x_true[i];
    num += d * d;
    den += x_true[i] * x_true[i];
  }
  if (!(den > 0.0)) throw std::invalid_argument("rre: x_true has zero norm");
  return std::sqrt(num / den);
}
inline double rre(const std::vector<double>& x_k, const std::vector<double>& x_true) {
  return rre(std::span<const double>(x_k), std::span<const double>(x_true));
}

// Sample mean and sample standard deviation (divisor n-1) of a window of the
// error history. The history is indexed by iteration number: entry i is the
// error of iterate i, with entry 0 the starting guess. The default window is
// iterations 3 through 10 inclusive.
inline std::pair<double, double> srre(std::span<const double> rre_history, int first = 3,
                                      int last = 10) {
  if (first < 0 || last < first) throw std::invalid_argument("srre: bad window");
  if (static_cast<int>(rre_history.size()) <= last)
    throw std::invalid_argument("srre: history does not cover the window");
  const int n = last - first + 1;
  double mean = 0.0;
  for (int i = first; i <= last; ++i) mean += rre_history[i];
  mean /= n;
  double var = 0.0;
  for (int i = first; i <= last; ++i) {
    const double d = rre_history[i] - mean;
    var += d * d;
  }
  const double std_dev = (n > 1) ? std::sqrt(var / (n - 1)) : 0.0;
  return {mean, std_dev};
}
inline std::pair<double, double> srre(const std::vector<double>& h, int first = 3,
                                      int last = 10) {
  return srre(std::span<const double>(h), first, last);
}

// Same window statistics for a history that a divergence stop may have cut
// short: only the part of the window that exists is averaged. If the run was
// stopped before reaching `first`, both statistics are infinite.
inline std::pair<double, double> srre_truncated(std::span<const double> rre_history,
                                                int first = 3, int last = 10) {
  if (first < 0 || last < first) throw std::invalid_argument("srre_truncated: bad window");
  const int avail = static_cast<int>(rre_history.size()) - 1;
  const int hi = std::min(last, avail);
  if (hi < first) {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, inf};
  }
  return srre(rre_history, first, hi);
}
inline std::pair<double, double> srre_truncated(const std::vector<double>& h, int first = 3,
                                                int last = 10) {
  return srre_truncated(std::span<const double>(h), first, last);
}

struct SummaryStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double std_dev = 0.0;
};

// Summary statistics of the elementwise absolute difference |phi - omega|.
inline SummaryStats filter_diff_stats(std::span<const double> phi,
                                      std::span<const double> omega) {
  if (phi.size() != omega.size())
    throw std::invalid_argument("filter_diff_stats: length mismatch");
  if (phi.empty()) throw std::invalid_argument("filter_diff_stats: empty input");
  const int n = static_cast<int>(phi.size());
  SummaryStats s;
  s.min = std::abs(phi[0] - omega[0]);
  s.max = s.min;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(phi[i] - omega[i]);
    s.mean += d;
    s.min = std::min(s.min, d);
    s.max = std::max(s.max, d);
  }
  s.mean /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(phi[i] - omega[i]) - s.mean;
    var += d * d;
  }
  s.std_dev = (n > 1) ? std::sqrt(var / (n - 1)) : 0.0;
  return s;
}
inline SummaryStats filter_diff_stats(const std::vector<double>& phi,
                                      const std::vector<double>& omega) {
  return filter_diff_stats(std::span<const double>(phi), std::span<const double>(omega));
}

}  // namespace mptik::metrics
