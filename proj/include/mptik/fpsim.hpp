#pragma once
// Simulated low-precision binary floating point, stored in native doubles.
//
// A FloatFormat describes a binary interchange-style format by its exponent
// and stored-mantissa widths. round_value() maps a double to the nearest
// value representable in that format (round-to-nearest, ties to even),
// saturating to +-infinity past the largest finite magnitude and supporting
// gradual underflow when the format declares subnormals. Results are ordinary
// doubles whose extra fraction bits are zero, so downstream arithmetic can
// stay in hardware while every intermediate is re-rounded where an algorithm
// calls for reduced precision.
//
// chopped_dot / the ChoppedScalar helpers realize "computed in precision P"
// annotations: operands are defensively rounded to the format, every product
// and every partial-sum addition is rounded immediately, and reductions run
// in ascending index order with a single accumulator, which makes results
// bit-reproducible. Formats at least as wide as a double pass values through
// untouched, so the native-precision path is bit-identical to ordinary
// double arithmetic in the same order.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mptik::fpsim {

struct FloatFormat {
  std::string name;
  int exponent_bits = 11;
  int mantissa_bits = 52;
  bool supports_subnormals = true;

  int bias() const { return (1 << (exponent_bits - 1)) - 1; }
  int emax() const { return bias(); }
  int emin() const { return 1 - bias(); }

  // Every finite double is already representable: rounding is the identity.
  bool passthrough() const {
    return mantissa_bits >= 52 &&
           (exponent_bits > 11 || (exponent_bits == 11 && supports_subnormals));
  }
  double max_finite() const {
    return std::ldexp(2.0 - std::ldexp(1.0, -mantissa_bits), emax());
  }
  double min_normal() const { return std::ldexp(1.0, emin()); }
  double min_subnormal() const { return std::ldexp(1.0, emin() - mantissa_bits); }
};

inline FloatFormat make_format(std::string name, int exponent_bits, int mantissa_bits,
                               bool subnormals = true) {
  if (exponent_bits < 2 || exponent_bits > 30)
    throw std::invalid_argument("make_format: exponent_bits must be in [2, 30]");
  if (mantissa_bits < 1 || mantissa_bits > 52)
    throw std::invalid_argument(
        "make_format: mantissa_bits must be in [1, 52]; values are stored in doubles");
  return FloatFormat{std::move(name), exponent_bits, mantissa_bits, subnormals};
}

inline const FloatFormat& fp64() {
  static const FloatFormat f{"fp64", 11, 52, true};
  return f;
}
inline const FloatFormat& fp32() {
  static const FloatFormat f{"fp32", 8, 23, true};
  return f;
}
inline const FloatFormat& fp16() {
  static const FloatFormat f{"fp16", 5, 10, true};
  return f;
}

// Shorthand used in configs and result tables: 1 = fp64, 2 = fp32, 3 = fp16.
inline const FloatFormat& preset(int shorthand) {
  switch (shorthand) {
    case 1: return fp64();
    case 2: return fp32();
    case 3: return fp16();
    default: throw std::invalid_argument("preset: shorthand must be 1, 2 or 3");
  }
}

inline double unit_roundoff(const FloatFormat& f) {
  return std::ldexp(1.0, -(f.mantissa_bits + 1));
}

namespace detail {

// Nearest integer, ties to even. `y` is nonnegative and below 2^53, so all
// the arithmetic here is exact.
inline double nearest_int_ties_even(double y) {
  const double lo = std::floor(y);
  const double frac = y - lo;
  if (frac > 0.5) return lo + 1.0;
  if (frac < 0.5) return lo;
  return std::fmod(lo, 2.0) == 0.0 ? lo : lo + 1.0;
}

}  // namespace detail

// Round one double to the format. NaN propagates unless strict_nan is set.
inline double round_value(double x, const FloatFormat& f, bool strict_nan = false) {
  if (std::isnan(x)) {
    if (strict_nan) throw std::domain_error("round_value: NaN input");
    return x;
  }
  if (f.passthrough() || std::isinf(x) || x == 0.0) return x;

  const int t = f.mantissa_bits;
  const int lo = f.emin();
  const double ax = std::fabs(x);
  const int e = std::ilogb(ax);  // ax in [2^e, 2^(e+1))

  double rounded;
  if (e < lo) {
    // Below the normal range the representable values form a uniform grid:
    // spacing 2^(emin - t) with subnormals, otherwise just {0, min_normal}.
    const int teff = f.supports_subnormals ? t : 0;
    const double y = std::scalbn(ax, teff - lo);  // in [0, 2^teff)
    rounded = std::scalbn(detail::nearest_int_ties_even(y), lo - teff);
  } else {
    const double y = std::scalbn(ax, t - e);  // in [2^t, 2^(t+1)), exact
    rounded = std::scalbn(detail::nearest_int_ties_even(y), e - t);
    if (rounded > f.max_finite())
      return std::copysign(std::numeric_limits<double>::infinity(), x);
  }
  return std::copysign(rounded, x);
}

inline std::vector<double> round_array(std::vector<double> xs, const FloatFormat& f,
                                       bool strict_nan = false) {
  if (!f.passthrough())
    for (double& x : xs) x = round_value(x, f, strict_nan);
  return xs;
}

// Scalar helpers for "every operation rounded" arithmetic. Operands are
// rounded on the way in, the result on the way out; in a passthrough format
// everything collapses to plain double arithmetic.
struct ChoppedScalar {
  const FloatFormat& f;
  bool pass;

  explicit ChoppedScalar(const FloatFormat& fmt) : f(fmt), pass(fmt.passthrough()) {}

  double rnd(double v) const { return pass ? v : round_value(v, f); }
  double add(double a, double b) const { return pass ? a + b : rnd(rnd(a) + rnd(b)); }
  double sub(double a, double b) const { return pass ? a - b : rnd(rnd(a) - rnd(b)); }
  double mul(double a, double b) const { return pass ? a * b : rnd(rnd(a) * rnd(b)); }
  double div(double a, double b) const { return pass ? a / b : rnd(rnd(a) / rnd(b)); }
};

// Dot product with one accumulator, ascending index, every product and every
// partial-sum addition rounded to the format.
inline double chopped_dot(std::span<const double> a, std::span<const double> b,
                          const FloatFormat& f) {
  if (a.size() != b.size()) throw std::invalid_argument("chopped_dot: length mismatch");
  double acc = 0.0;
  if (f.passthrough()) {
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double p = round_value(round_value(a[i], f) * round_value(b[i], f), f);
    acc = round_value(acc + p, f);
  }
  return acc;
}

inline double chopped_dot(const std::vector<double>& a, const std::vector<double>& b,
                          const FloatFormat& f) {
  return chopped_dot(std::span<const double>(a), std::span<const double>(b), f);
}

// Working precisions of the mixed-precision iteration, ordered coarsest to
// finest: pr1 holds the factored normal-equations data, pr2 the inner solve
// and iterate updates, pr3 the residual arithmetic.
struct PrecisionTriple {
  FloatFormat pr1, pr2, pr3;

  PrecisionTriple(FloatFormat p1, FloatFormat p2, FloatFormat p3)
      : pr1(std::move(p1)), pr2(std::move(p2)), pr3(std::move(p3)) {
    if (!(unit_roundoff(pr1) >= unit_roundoff(pr2) &&
          unit_roundoff(pr2) >= unit_roundoff(pr3)))
      throw std::invalid_argument(
          "PrecisionTriple: require unit_roundoff(pr1) >= unit_roundoff(pr2) >= "
          "unit_roundoff(pr3)");
  }

  static PrecisionTriple from_shorthand(int p1, int p2, int p3) {
    return PrecisionTriple(preset(p1), preset(p2), preset(p3));
  }

  // Parses the table shorthand "(3,2,1)"; whitespace between tokens is allowed.
  static PrecisionTriple from_shorthand(const std::string& s) {
    std::string t;
    for (char c : s)
      if (c != ' ' && c != '\t') t += c;
    const auto fail = [&]() -> PrecisionTriple {
      throw std::invalid_argument("PrecisionTriple: malformed shorthand '" + s + "'");
    };
    if (t.size() != 7 || t[0] != '(' || t[2] != ',' || t[4] != ',' || t[6] != ')') return fail();
    int d[3];
    for (int i = 0; i < 3; ++i) {
      const char c = t[1 + 2 * i];
      if (c < '1' || c > '3') return fail();
      d[i] = c - '0';
    }
    return from_shorthand(d[0], d[1], d[2]);
  }

  static PrecisionTriple all_native() {
    return PrecisionTriple(fp64(), fp64(), fp64());
  }

  bool is_all_native() const {
    return pr1.passthrough() && pr2.passthrough() && pr3.passthrough();
  }

  std::string label() const {
    auto one = [](const FloatFormat& f) -> std::string {
      if (f.name == "fp64") return "1";
      if (f.name == "fp32") return "2";
      if (f.name == "fp16") return "3";
      return f.name;
    };
    return "(" + one(pr1) + "," + one(pr2) + "," + one(pr3) + ")";
  }
};

}  // namespace mptik::fpsim
