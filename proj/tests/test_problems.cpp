#include "mptik/problems.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace mptik::problems;
using mptik::linalg::DenseMatrix;

namespace {

uint64_t bits_of(double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  return u;
}

uint64_t fnv1a_bits(const std::vector<double>& v) {
  uint64_t h = 1469598103934665603ull;
  for (double x : v) {
    const uint64_t u = bits_of(x);
    for (int b = 0; b < 8; ++b) {
      h ^= (u >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string temp_dir(const char* tag) {
  auto d = std::filesystem::temp_directory_path() / (std::string("mptik_test_") + tag);
  std::filesystem::remove_all(d);
  return d.string();
}

}  // namespace

// --- 1D blur operator ----------------------------------------------------------

TEST(Spectra, DiagonalValueAndSymmetry) {
  const DenseMatrix a = spectra_matrix(16, 2.0);
  EXPECT_NEAR(a(0, 0), 0.199471, 1e-6);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      EXPECT_EQ(a(i, j), a(j, i));
      EXPECT_EQ(a(i, j), a(0, std::abs(i - j)));  // Toeplitz by construction
      EXPECT_GT(a(i, j), 0.0);
    }
}

TEST(Spectra, RowSumsAreBoundedByKernelMass) {
  const DenseMatrix a = spectra_matrix(64, 2.0);
  for (int i = 0; i < 64; ++i) {
    double s = 0.0;
    for (int j = 0; j < 64; ++j) s += a(i, j);
    EXPECT_LE(s, 1.0 + 1e-12) << i;
  }
}

TEST(Spectra, SpectrumIsSevereButGapFree) {
  const DenseMatrix a = spectra_matrix(64, 2.0);
  const auto sv = mptik::linalg::svd(a);
  EXPECT_LE(sv.sigma[0], 1.0 + 1e-6);
  for (int j = 1; j < 64; ++j) EXPECT_LE(sv.sigma[j], sv.sigma[j - 1] + 1e-15);
  const double cond = sv.sigma[0] / sv.sigma[63];
  EXPECT_GE(cond, 1e8);
  EXPECT_LE(cond, 1e10);
  EXPECT_LE(sv.sigma[63] / sv.sigma[0], 1e-8);
  for (int j = 0; j < 32; ++j)
    EXPECT_GE(sv.sigma[j + 1] / sv.sigma[j], 0.5) << "cliff at " << j;
}

TEST(Spectra, SignalIsPeaksOnZeroBackground) {
  const std::vector<double> x = spectra_signal(64);
  ASSERT_EQ(x.size(), 64u);
  double mx = 0.0;
  for (double v : x) {
    EXPECT_GE(v, 0.0);
    mx = std::max(mx, v);
  }
  EXPECT_GE(mx, 0.5);
  EXPECT_LE(mx, 1.1);
  EXPECT_LE(x[0], 1e-8);
  EXPECT_LE(x[63], 1e-8);
}

TEST(Spectra, RejectsBadArguments) {
  EXPECT_THROW(spectra_matrix(1, 2.0), std::invalid_argument);
  EXPECT_THROW(spectra_matrix(8, 0.0), std::invalid_argument);
  EXPECT_THROW(spectra_signal(1), std::invalid_argument);
}

// --- 2D deblurring ---------------------------------------------------------------

TEST(Deblur, VanishingWidthGivesIdentityBlur) {
  auto [k, x] = gen_deblur2d(8, 6, 1e-6, 3);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_EQ(k.Ar(i, j), i == j ? 1.0 : 0.0);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_EQ(k.Ac(i, j), i == j ? 1.0 : 0.0);
  const auto y = mptik::linalg::kron_matvec(k, x, mptik::fpsim::fp64());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Deblur, MatvecMatchesDirectZeroBoundaryConvolution) {
  const int nr = 16, nc = 12, sz = 5;
  const double eta = 1.5;
  auto [k, x] = gen_deblur2d(nr, nc, eta, sz);
  const auto y = mptik::linalg::kron_matvec(k, x, mptik::fpsim::fp64());

  // Independent route: literal 2D correlation with the separable stencil,
  // out-of-range taps contributing zero.
  const std::vector<double> g = gauss_psf(sz, eta);
  const int c = sz / 2;
  double maxdiff = 0.0, maxy = 0.0;
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j) {
      double acc = 0.0;
      for (int u = 0; u < nr; ++u)
        for (int v = 0; v < nc; ++v) {
          const int ki = c + (i - u), kj = c + (j - v);
          if (ki < 0 || ki >= sz || kj < 0 || kj >= sz) continue;
          acc += g[ki] * g[kj] * x[static_cast<std::size_t>(v) * nr + u];
        }
      const double got = y[static_cast<std::size_t>(j) * nr + i];
      maxdiff = std::max(maxdiff, std::abs(got - acc));
      maxy = std::max(maxy, std::abs(acc));
    }
  EXPECT_LE(maxdiff, 1e-10 * (maxy + 1.0));
}

TEST(Deblur, PsfIsNormalizedRankOne) {
  const std::vector<double> g = gauss_psf(7, 2.0);
  double s = 0.0;
  for (double v : g) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  DenseMatrix psf(7, 7);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) psf(i, j) = g[i] * g[j];
  const auto sv = mptik::linalg::svd(psf);
  EXPECT_GT(sv.sigma[0], 0.0);
  EXPECT_LE(sv.sigma[1], 1e-15 * sv.sigma[0]);
}

TEST(Deblur, DisksImageHasBrightDisksOnBlackBackground) {
  const int nr = 32, nc = 32;
  const std::vector<double> x = disks_image(nr, nc);
  EXPECT_EQ(x[0], 0.0);                              // corner background
  EXPECT_EQ(x[static_cast<std::size_t>(nr) * nc - 1], 0.0);
  // center of the first disk
  const int ci = static_cast<int>(0.30 * (nr - 1)), cj = static_cast<int>(0.28 * (nc - 1));
  EXPECT_EQ(x[static_cast<std::size_t>(cj) * nr + ci], 1.0);
  int lit = 0;
  for (double v : x) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    if (v > 0.0) ++lit;
  }
  const double frac = double(lit) / double(x.size());
  EXPECT_GT(frac, 0.05);
  EXPECT_LT(frac, 0.6);
}

TEST(Deblur, RejectsBadArguments) {
  EXPECT_THROW(gen_deblur2d(8, 8, 1.0, 4), std::invalid_argument);   // even psf
  EXPECT_THROW(gen_deblur2d(8, 8, 1.0, 9), std::invalid_argument);   // too large
  EXPECT_THROW(gen_deblur2d(1, 8, 1.0, 3), std::invalid_argument);   // tiny image
  EXPECT_THROW(gauss_psf(5, 0.0), std::invalid_argument);
}

// --- noise model ------------------------------------------------------------------

TEST(Noise, ZeroLevelGivesExactZeros) {
  const std::vector<double> b(16, 2.0);
  const auto e = add_noise(b, 0.0, 123);
  for (double v : e) EXPECT_EQ(v, 0.0);
}

TEST(Noise, ScalingIdentityHoldsForEveryLevelAndSeed) {
  const std::vector<double> b = [&] {
    std::vector<double> v(37);
    for (int i = 0; i < 37; ++i) v[i] = std::sin(0.3 * i) + 1.5;
    return v;
  }();
  const double nb = mptik::linalg::norm2(b);
  for (double mu : {0.5, 1.0, 3.0, 10.0})
    for (uint64_t seed : {1ull, 42ull, 999ull}) {
      const auto e = add_noise(b, mu, seed);
      const double ratio = 100.0 * mptik::linalg::norm2(e) / nb;
      EXPECT_NEAR(ratio, mu, 1e-12 * mu) << mu << " " << seed;
    }
}

TEST(Noise, RejectsZeroSignalWithPositiveLevel) {
  const std::vector<double> z(8, 0.0);
  EXPECT_THROW(add_noise(z, 1.0, 1), std::invalid_argument);
  EXPECT_NO_THROW(add_noise(z, 0.0, 1));
}

TEST(Noise, DrawsAreDeterministicPerSeed) {
  const auto a = gauss_draws(64, 7);
  const auto b = gauss_draws(64, 7);
  const auto c = gauss_draws(64, 8);
  EXPECT_EQ(fnv1a_bits(a), fnv1a_bits(b));
  EXPECT_NE(fnv1a_bits(a), fnv1a_bits(c));
}

TEST(Noise, GoldenVectorSeed42) {
  // Frozen from the committed generator (mt19937_64 + explicit Box-Muller);
  // guards the draw sequence against platform or refactoring drift.
  const auto z = gauss_draws(64, 42);
  EXPECT_EQ(bits_of(z[0]), 0xbfdecc4552b9eff1ull);
  EXPECT_EQ(bits_of(z[1]), 0xbfe2629b2777a857ull);
  EXPECT_EQ(bits_of(z[2]), 0x3fdfa7430bea3a46ull);
  EXPECT_EQ(bits_of(z[3]), 0x3fe23e6f8daf36b6ull);
  EXPECT_EQ(fnv1a_bits(z), 0xf23298493754b45cull);
}

// --- assembled problems -------------------------------------------------------------

TEST(Problem, SpectraAssemblyInvariants) {
  const InverseProblem p = make_spectra_problem(64, 2.0, 1.0, 7);
  ASSERT_FALSE(p.is_kron());
  const auto want = mptik::linalg::matvec(p.dense(), p.x_true);
  for (int i = 0; i < 64; ++i) EXPECT_EQ(p.b_exact[i], want[i]);
  std::vector<double> e(64);
  for (int i = 0; i < 64; ++i) e[i] = p.b[i] - p.b_exact[i];
  const double ratio = 100.0 * mptik::linalg::norm2(e) / mptik::linalg::norm2(p.b_exact);
  EXPECT_NEAR(ratio, 1.0, 1e-10);
  EXPECT_EQ(p.noise_level_percent, 1.0);
  EXPECT_EQ(p.seed, 7u);
}

TEST(Problem, DeblurAssemblyInvariants) {
  const InverseProblem p = make_deblur2d_problem(12, 10, 1.2, 5, 3.0, 11);
  ASSERT_TRUE(p.is_kron());
  const auto want = mptik::linalg::kron_matvec(p.kron(), p.x_true, mptik::fpsim::fp64());
  ASSERT_EQ(p.b_exact.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(p.b_exact[i], want[i]);
  std::vector<double> e(want.size());
  for (std::size_t i = 0; i < want.size(); ++i) e[i] = p.b[i] - p.b_exact[i];
  const double ratio = 100.0 * mptik::linalg::norm2(e) / mptik::linalg::norm2(p.b_exact);
  EXPECT_NEAR(ratio, 3.0, 1e-10);
}

// --- directory serialization ----------------------------------------------------------

TEST(ProblemIo, DenseRoundTripIsBitExact) {
  const std::string dir = temp_dir("dense");
  const InverseProblem p = make_spectra_problem(16, 2.0, 1.0, 5);
  save_problem(dir, p);
  const InverseProblem q = load_problem(dir);
  ASSERT_FALSE(q.is_kron());
  EXPECT_EQ(fnv1a_bits(p.dense().a), fnv1a_bits(q.dense().a));
  EXPECT_EQ(fnv1a_bits(p.b), fnv1a_bits(q.b));
  EXPECT_EQ(fnv1a_bits(p.b_exact), fnv1a_bits(q.b_exact));
  EXPECT_EQ(fnv1a_bits(p.x_true), fnv1a_bits(q.x_true));
  EXPECT_EQ(q.noise_level_percent, 1.0);
  EXPECT_EQ(q.seed, 5u);
  EXPECT_EQ(meta_get(q.meta, "kind"), "spectra");
  EXPECT_EQ(meta_get(q.meta, "n"), "16");
  std::filesystem::remove_all(dir);
}

TEST(ProblemIo, KronRoundTripIsBitExact) {
  const std::string dir = temp_dir("kron");
  const InverseProblem p = make_deblur2d_problem(8, 6, 1.2, 3, 2.0, 9);
  save_problem(dir, p);
  const InverseProblem q = load_problem(dir);
  ASSERT_TRUE(q.is_kron());
  EXPECT_EQ(fnv1a_bits(p.kron().Ar.a), fnv1a_bits(q.kron().Ar.a));
  EXPECT_EQ(fnv1a_bits(p.kron().Ac.a), fnv1a_bits(q.kron().Ac.a));
  EXPECT_EQ(fnv1a_bits(p.b), fnv1a_bits(q.b));
  EXPECT_EQ(meta_get(q.meta, "psf_size"), "3");
  std::filesystem::remove_all(dir);
}

TEST(ProblemIo, LoadErrorsAreRecoverable) {
  EXPECT_THROW(load_problem("/nonexistent/problem/dir"), std::runtime_error);

  const std::string dir = temp_dir("badmeta");
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir + "/meta");
    m << "kind = martian\nmu = 1\nseed = 1\n";
  }
  EXPECT_THROW(load_problem(dir), std::runtime_error);
  {
    std::ofstream m(dir + "/meta");
    m << "# comment\nthis line has no equals sign\n";
  }
  EXPECT_THROW(load_problem(dir), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(ProblemIo, MetaParsingTrimsAndSkipsComments) {
  const std::string dir = temp_dir("meta");
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir + "/meta");
    m << "# header comment\n  kind =  spectra \n\nmu=0.5\n";
  }
  const auto kv = read_meta(dir + "/meta");
  EXPECT_EQ(meta_get(kv, "kind"), "spectra");
  EXPECT_EQ(meta_get(kv, "mu"), "0.5");
  EXPECT_THROW(meta_get(kv, "absent"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
