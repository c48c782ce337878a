#include "mptik/expcli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace expcli = mptik::expcli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  EXPECT_TRUE(is.good()) << "cannot open " << p;
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mptik_expcli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<std::string> split_csv(const std::string& line) {
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
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) rows.push_back(split_csv(line));
  return rows;
}

bool any_error_contains(const expcli::ParseResult& r, const std::string& needle) {
  for (const std::string& e : r.errors)
    if (e.find(needle) != std::string::npos) return true;
  return false;
}

const std::string kTinyConfig =
    "problem.kind = spectra\n"
    "problem.n = 24\n"
    "problem.eta = 2\n"
    "noise.mu_percent = 1\n"
    "noise.seed = 3\n"
    "solver.alpha2 = 1e-2\n"
    "solver.triples = (1,1,1), (3,2,1)\n"
    "grid.alpha2 = 1e-2, 1e-1\n"
    "grid.air = true\n";

expcli::ExperimentConfig parse_ok(const std::string& text) {
  const expcli::ParseResult r = expcli::parse_config(text);
  EXPECT_TRUE(r.ok()) << (r.errors.empty() ? "" : r.errors[0]);
  return r.config;
}

}  // namespace

TEST(ParseConfig, MinimalConfigFillsDocumentedDefaults) {
  const auto cfg = parse_ok("problem.kind = spectra\nsolver.alpha2 = 1e-2\n");
  EXPECT_EQ(cfg.problem.kind, "spectra");
  EXPECT_EQ(cfg.method, "mpir");
  EXPECT_EQ(cfg.max_iters, 10);
  EXPECT_DOUBLE_EQ(cfg.zeta, 1.0);
  EXPECT_DOUBLE_EQ(cfg.alpha2, 1e-2);
  EXPECT_FALSE(cfg.strict);
  ASSERT_EQ(cfg.triples.size(), 1u);
  EXPECT_EQ(cfg.triples[0].label(), "(1,1,1)");
  ASSERT_EQ(cfg.grid_alpha2.size(), 1u);
  EXPECT_DOUBLE_EQ(cfg.grid_alpha2[0], 1e-2);
  ASSERT_EQ(cfg.grid_mu.size(), 1u);
  EXPECT_DOUBLE_EQ(cfg.grid_mu[0], 1.0);
  EXPECT_FALSE(cfg.grid_air);
  EXPECT_TRUE(cfg.want_iterates && cfg.want_filters && cfg.want_table2 && cfg.want_table3);
  EXPECT_EQ(cfg.out_dir, "out");
}

TEST(ParseConfig, CollectsEveryErrorWithItsLineNumber) {
  const expcli::ParseResult r = expcli::parse_config(
      "problem.kind = spectra\n"
      "solver.alpha2 = -1\n"
      "solver.method = bogus\n"
      "solver.alpha3 = 2\n"
      "noise.seed = 5\n"
      "noise.seed = 6\n");
  EXPECT_FALSE(r.ok());
  EXPECT_EQ(r.errors.size(), 4u);
  EXPECT_TRUE(any_error_contains(r, "line 2: solver.alpha2 must be > 0"));
  EXPECT_TRUE(any_error_contains(r, "line 3: solver.method"));
  EXPECT_TRUE(any_error_contains(r, "line 4: unknown key 'solver.alpha3'"));
  EXPECT_TRUE(any_error_contains(r, "line 6: duplicate key 'noise.seed'"));
}

TEST(ParseConfig, TripleShorthandAndPresetNamesAgree) {
  const auto cfg = parse_ok(
      "problem.kind = spectra\nsolver.alpha2 = 1e-2\n"
      "solver.triples = (3,2,1), (fp16, fp32, fp64)\n");
  ASSERT_EQ(cfg.triples.size(), 2u);
  EXPECT_EQ(cfg.triples[0].label(), "(3,2,1)");
  EXPECT_EQ(cfg.triples[1].label(), "(3,2,1)");
  EXPECT_EQ(cfg.triples[1].pr1.mantissa_bits, 10);
  EXPECT_EQ(cfg.triples[1].pr3.mantissa_bits, 52);
}

TEST(ParseConfig, CustomFormatsWorkRegardlessOfDeclarationOrder) {
  const auto cfg = parse_ok(
      "problem.kind = spectra\nsolver.alpha2 = 1e-2\n"
      "solver.triples = (q8, 2, 1)\n"
      "format.q8 = {5, 2, false}\n");
  ASSERT_EQ(cfg.triples.size(), 1u);
  EXPECT_EQ(cfg.triples[0].pr1.name, "q8");
  EXPECT_EQ(cfg.triples[0].pr1.exponent_bits, 5);
  EXPECT_EQ(cfg.triples[0].pr1.mantissa_bits, 2);
  EXPECT_FALSE(cfg.triples[0].pr1.supports_subnormals);
  EXPECT_EQ(cfg.triples[0].label(), "(q8,2,1)");
}

TEST(ParseConfig, RejectsTriplesWithIncreasingPrecision) {
  const expcli::ParseResult r = expcli::parse_config(
      "problem.kind = spectra\nsolver.alpha2 = 1e-2\n"
      "solver.triples = (1,2,3)\n");
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(any_error_contains(r, "line 3"));
  EXPECT_TRUE(any_error_contains(r, "unit_roundoff"));
}

TEST(ParseConfig, RejectsKeysFromAnotherProblemKind) {
  const expcli::ParseResult r = expcli::parse_config(
      "problem.kind = spectra\n"
      "problem.nr = 16\n"
      "solver.alpha2 = 1e-2\n");
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(any_error_contains(r, "line 2: problem.nr does not apply"));

  const expcli::ParseResult r2 =
      expcli::parse_config("problem.kind = load\nsolver.alpha2 = 1e-2\n");
  EXPECT_TRUE(any_error_contains(r2, "problem.path is required"));
}

TEST(ParseConfig, DirectSolversNeedADenseOperator) {
  const expcli::ParseResult r = expcli::parse_config(
      "problem.kind = deblur2d\n"
      "solver.method = tikhonov\n"
      "solver.alpha2 = 1e-2\n");
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(any_error_contains(r, "needs a dense operator"));
}

TEST(ParseConfig, TwoDimensionalProblemsDropDenseOnlyOutputsByDefault) {
  const auto cfg = parse_ok("problem.kind = deblur2d\nsolver.alpha2 = 1e-2\n");
  EXPECT_TRUE(cfg.want_iterates);
  EXPECT_FALSE(cfg.want_filters);
  EXPECT_FALSE(cfg.want_table2);
  EXPECT_TRUE(cfg.want_table3);

  const expcli::ParseResult r = expcli::parse_config(
      "problem.kind = deblur2d\nsolver.alpha2 = 1e-2\n"
      "outputs.which = filters\n");
  EXPECT_FALSE(r.ok());
}

TEST(ParseConfig, OutputSelectionNarrowsThePipelines) {
  const auto cfg = parse_ok(
      "problem.kind = spectra\nsolver.alpha2 = 1e-2\n"
      "outputs.which = table3\n");
  EXPECT_FALSE(cfg.want_iterates);
  EXPECT_FALSE(cfg.want_filters);
  EXPECT_FALSE(cfg.want_table2);
  EXPECT_TRUE(cfg.want_table3);
}

TEST(RunExperiment, WritesTheConfiguredFilesAndManifest) {
  const fs::path dir = fresh_dir("files");
  const auto cfg = parse_ok(kTinyConfig);
  expcli::RunOptions opts;
  opts.out_dir = dir.string();
  const expcli::RunOutcome out = expcli::run_experiment(cfg, kTinyConfig, opts);

  const std::vector<std::string> expected = {
      "run_mpir_1-1-1.csv", "run_mpir_3-2-1.csv", "filters_1-1-1.csv", "filters_3-2-1.csv",
      "table2.csv",         "table3.csv",         "manifest.txt"};
  ASSERT_EQ(out.files.size(), expected.size());
  for (const std::string& name : expected) EXPECT_TRUE(fs::exists(dir / name)) << name;

  const std::string manifest = slurp(dir / "manifest.txt");
  EXPECT_NE(manifest.find("tool_version = 0.1.0"), std::string::npos);
  EXPECT_NE(manifest.find("config_hash = fnv1a64:"), std::string::npos);
  EXPECT_NE(manifest.find("seed = 3"), std::string::npos);

  const auto run_rows = read_csv(dir / "run_mpir_1-1-1.csv");
  ASSERT_EQ(run_rows.size(), 12u);  // header + iterations 0..10
  EXPECT_EQ(run_rows[0], (std::vector<std::string>{"iter", "rre", "residual_norm", "diverged"}));
  EXPECT_EQ(run_rows[1][1], "1");  // starting guess is zero, so rre == 1
}

TEST(RunExperiment, RerunsAndParallelRunsAreByteIdentical) {
  const fs::path d1 = fresh_dir("bytes1"), d2 = fresh_dir("bytes2"), d3 = fresh_dir("bytes3");
  const auto cfg = parse_ok(kTinyConfig);
  expcli::RunOptions o1, o2, o3;
  o1.out_dir = d1.string();
  o2.out_dir = d2.string();
  o3.out_dir = d3.string();
  o3.parallel = true;
  expcli::run_experiment(cfg, kTinyConfig, o1);
  expcli::run_experiment(cfg, kTinyConfig, o2);
  expcli::run_experiment(cfg, kTinyConfig, o3);
  for (const auto& entry : fs::directory_iterator(d1)) {
    const std::string name = entry.path().filename().string();
    EXPECT_EQ(slurp(entry.path()), slurp(d2 / name)) << name;
    EXPECT_EQ(slurp(entry.path()), slurp(d3 / name)) << name;
  }
}

TEST(RunExperiment, GridRowCountCoversEveryCell) {
  const fs::path dir = fresh_dir("grid");
  std::string text = kTinyConfig;
  text += "grid.mu = 0.5, 1, 3\noutputs.which = table3\n";
  const auto cfg = parse_ok(text);
  expcli::RunOptions opts;
  opts.out_dir = dir.string();
  expcli::run_experiment(cfg, text, opts);
  const auto rows = read_csv(dir / "table3.csv");
  // 2 triples x 2 alpha2 x 3 mu, plus one baseline row per (alpha2, mu).
  EXPECT_EQ(rows.size(), 1u + 2u * 2u * 3u + 2u * 3u);
  int air_rows = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i][0] == "air") ++air_rows;
  EXPECT_EQ(air_rows, 6);
}

TEST(RunExperiment, ManifestHashTracksTheConfigText) {
  const fs::path d1 = fresh_dir("hash1"), d2 = fresh_dir("hash2");
  std::string text = kTinyConfig;
  text += "outputs.which = table3\n";
  std::string text2 = text + "# an added comment changes the hash\n";
  const auto cfg = parse_ok(text);
  expcli::RunOptions o1, o2;
  o1.out_dir = d1.string();
  o2.out_dir = d2.string();
  expcli::run_experiment(cfg, text, o1);
  expcli::run_experiment(cfg, text2, o2);
  const auto hash_line = [](const std::string& m) {
    const auto pos = m.find("config_hash");
    return m.substr(pos, m.find('\n', pos) - pos);
  };
  EXPECT_NE(hash_line(slurp(d1 / "manifest.txt")), hash_line(slurp(d2 / "manifest.txt")));
}

TEST(RunExperiment, NativeTripleFilterPredictionsMatchToRoundoff) {
  const fs::path dir = fresh_dir("table2");
  const std::string text =
      "problem.kind = spectra\nproblem.n = 64\nproblem.eta = 2\n"
      "noise.mu_percent = 1\nnoise.seed = 42\n"
      "solver.alpha2 = 1e-2\nsolver.triples = (1,1,1)\n"
      "outputs.which = table2\n";
  const auto cfg = parse_ok(text);
  expcli::RunOptions opts;
  opts.out_dir = dir.string();
  expcli::run_experiment(cfg, text, opts);
  const auto rows = read_csv(dir / "table2.csv");
  ASSERT_EQ(rows.size(), 4u);  // header + iterations 1, 5, 10
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i][0], "(1,1,1)");
    EXPECT_LE(std::stod(rows[i][2]), 1e-12) << "iteration " << rows[i][1];
  }
}

TEST(RunExperiment, BaselineGridShowsBothRegimesWithoutAborting) {
  const fs::path dir = fresh_dir("air");
  const std::string text =
      "problem.kind = spectra\nproblem.n = 64\nproblem.eta = 2\n"
      "noise.mu_percent = 3\nnoise.seed = 42\n"
      "solver.alpha2 = 1e-2\nsolver.triples = (1,1,1)\n"
      "grid.alpha2 = 1e-3, 1e-1\ngrid.air = true\n"
      "outputs.which = table3\n";
  const auto cfg = parse_ok(text);
  expcli::RunOptions opts;
  opts.out_dir = dir.string();
  const expcli::RunOutcome out = expcli::run_experiment(cfg, text, opts);
  EXPECT_TRUE(out.any_divergence);

  double srre_small = 0.0, srre_large = 0.0;
  for (const auto& row : read_csv(dir / "table3.csv")) {
    if (row[0] != "air") continue;
    const double a2 = std::stod(row[2]);
    (a2 < 1e-2 ? srre_small : srre_large) = std::stod(row[4]);
  }
  EXPECT_GT(srre_small, 1e3);
  EXPECT_LT(srre_large, 1.0);
}

TEST(RunExperiment, LoadedProblemsKeepTheirStoredNoiseLevel) {
  const fs::path pdir = fresh_dir("stored_problem");
  const std::string gen_text =
      "problem.kind = spectra\nproblem.n = 24\nproblem.eta = 2\n"
      "noise.mu_percent = 2.5\nnoise.seed = 11\nsolver.alpha2 = 1e-2\n";
  expcli::RunOptions gopts;
  gopts.out_dir = pdir.string();
  expcli::gen_problem(parse_ok(gen_text), gopts);

  const fs::path dir = fresh_dir("stored_run");
  const std::string text = "problem.kind = load\nproblem.path = " + pdir.string() +
                           "\nsolver.alpha2 = 1e-2\noutputs.which = table3\n";
  const auto cfg = parse_ok(text);
  expcli::RunOptions opts;
  opts.out_dir = dir.string();
  expcli::run_experiment(cfg, text, opts);
  const auto rows = read_csv(dir / "table3.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(std::stod(rows[1][3]), 2.5);  // mu column
}

TEST(RunExperiment, SeedOverrideChangesTheDataAndTheManifest) {
  const fs::path d1 = fresh_dir("seed1"), d2 = fresh_dir("seed2");
  std::string text = kTinyConfig;
  text += "outputs.which = table3\n";
  const auto cfg = parse_ok(text);
  expcli::RunOptions o1, o2;
  o1.out_dir = d1.string();
  o2.out_dir = d2.string();
  o2.seed_override = 7;
  expcli::run_experiment(cfg, text, o1);
  expcli::run_experiment(cfg, text, o2);
  EXPECT_NE(slurp(d1 / "table3.csv"), slurp(d2 / "table3.csv"));
  EXPECT_NE(slurp(d1 / "manifest.txt").find("seed_overridden = 0"), std::string::npos);
  EXPECT_NE(slurp(d2 / "manifest.txt").find("seed = 7"), std::string::npos);
  EXPECT_NE(slurp(d2 / "manifest.txt").find("seed_overridden = 1"), std::string::npos);
}

TEST(RunExperiment, ExplicitDenseOnlyOutputsOnAKroneckerOperatorAreRejected) {
  const std::string text =
      "problem.kind = deblur2d\nproblem.nr = 8\nproblem.nc = 8\n"
      "problem.psf_size = 3\nsolver.alpha2 = 1e-2\n";
  auto cfg = parse_ok(text);
  cfg.want_filters = true;  // what the filters subcommand does
  cfg.which_set = true;
  expcli::RunOptions opts;
  opts.out_dir = fresh_dir("kron_reject").string();
  EXPECT_THROW(expcli::run_experiment(cfg, text, opts), std::invalid_argument);
}

TEST(RunExperiment, TwoDimensionalProblemsRunTheGridEndToEnd) {
  const fs::path dir = fresh_dir("kron_ok");
  const std::string text =
      "problem.kind = deblur2d\nproblem.nr = 8\nproblem.nc = 8\n"
      "problem.psf_eta = 1.5\nproblem.psf_size = 3\n"
      "noise.mu_percent = 1\nnoise.seed = 5\n"
      "solver.alpha2 = 1e-2\nsolver.triples = (1,1,1), (2,2,2)\n"
      "grid.air = true\n";
  const auto cfg = parse_ok(text);
  expcli::RunOptions opts;
  opts.out_dir = dir.string();
  expcli::run_experiment(cfg, text, opts);
  EXPECT_TRUE(fs::exists(dir / "run_mpir_2-2-2.csv"));
  EXPECT_FALSE(fs::exists(dir / "table2.csv"));
  const auto rows = read_csv(dir / "table3.csv");
  EXPECT_EQ(rows.size(), 1u + 2u + 1u);  // header, two triples, one baseline row
}

TEST(Report, RendersTheSummaryTablesAsText) {
  const fs::path dir = fresh_dir("report");
  const auto cfg = parse_ok(kTinyConfig);
  expcli::RunOptions opts;
  opts.out_dir = dir.string();
  expcli::run_experiment(cfg, kTinyConfig, opts);
  std::ostringstream os;
  EXPECT_TRUE(expcli::render_report(dir.string(), os));
  const std::string text = os.str();
  EXPECT_NE(text.find("(1,1,1)"), std::string::npos);
  EXPECT_NE(text.find("mean"), std::string::npos);
  EXPECT_NE(text.find("srre"), std::string::npos);
}

TEST(Report, SignalsWhenThereIsNothingToRender) {
  std::ostringstream os;
  EXPECT_FALSE(expcli::render_report(fresh_dir("report_empty").string(), os));
}
