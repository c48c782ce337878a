// Experiment command line.
//
//   mptik gen     --config cfg [--out DIR] [--seed N]   write the problem files
//   mptik run     --config cfg [--out DIR] [--seed N] [--parallel]
//   mptik filters --config cfg [--out DIR] [--seed N]   filter CSVs only
//   mptik report  --out DIR                             render summary tables
//
// Exit codes: 0 success, 1 bad usage or config, 2 divergence under
// solver.strict, 3 I/O or internal failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "mptik/expcli.hpp"

int main(int argc, char** argv) {
  namespace expcli = mptik::expcli;

  CLI::App app{"mixed-precision refinement experiments for regularized least squares"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("mptik ") + expcli::kToolVersion);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool parallel = false;

  CLI::App* gen = app.add_subcommand("gen", "generate a problem and write it to disk");
  CLI::App* run = app.add_subcommand("run", "run the configured experiment pipelines");
  CLI::App* filters = app.add_subcommand("filters", "write only the filter-factor CSVs");
  CLI::App* report = app.add_subcommand("report", "render summary tables from an output dir");

  for (CLI::App* c : {gen, run, filters}) {
    c->add_option("--config", config_path, "experiment config file")->required();
    c->add_option("--out", out_dir, "output directory (overrides outputs.directory)");
    c->add_option("--seed", seed, "override noise.seed");
  }
  run->add_flag("--parallel", parallel, "compute table cells concurrently");
  report->add_option("--out", out_dir, "directory holding table2.csv / table3.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (report->parsed()) {
      if (!expcli::render_report(out_dir, std::cout)) {
        std::cerr << "report: nothing to render under " << out_dir << "\n";
        return 3;
      }
      return 0;
    }

    const std::string raw = expcli::load_config_file(config_path);
    const expcli::ParseResult parsed = expcli::parse_config(raw);
    if (!parsed.ok()) {
      for (const std::string& e : parsed.errors) std::cerr << config_path << ": " << e << "\n";
      return 1;
    }
    expcli::ExperimentConfig cfg = parsed.config;

    expcli::RunOptions opts;
    opts.out_dir = out_dir;
    opts.parallel = parallel;
    const CLI::App* active = gen->parsed() ? gen : run->parsed() ? run : filters;
    if (active->count("--seed") > 0) opts.seed_override = seed;

    if (gen->parsed()) {
      std::cout << "wrote problem to " << expcli::gen_problem(cfg, opts) << "\n";
      return 0;
    }
    if (filters->parsed()) {
      cfg.want_iterates = cfg.want_table2 = cfg.want_table3 = false;
      cfg.want_filters = true;
      cfg.which_set = true;
    }
    const expcli::RunOutcome outcome = expcli::run_experiment(cfg, raw, opts);
    for (const std::string& f : outcome.files) std::cout << "wrote " << f << "\n";
    if (outcome.any_divergence) {
      std::cerr << "note: at least one run hit the divergence guard\n";
      if (cfg.strict) return 2;
    }
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
