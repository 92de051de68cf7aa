#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "oasislab/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"oasis-lab: a numerical laboratory for null-aware attention routing"};
  app.footer(
      "Exit codes:\n"
      "  0  success\n"
      "  1  configuration or usage error\n"
      "  2  missing or unreadable artifacts\n"
      "  3  theorem suite violations\n"
      "\n"
      "The artifact root is --out-dir if given, else $OASIS_LAB_OUT, else the\n"
      "config's [run] out_dir (default: runs). Reruns with identical inputs\n"
      "write byte-identical artifacts.");
  app.require_subcommand(1);

  oasis::CliOptions opt;
  app.add_option("--config", opt.config_path,
                 "experiment config ([section] key = value lines)");
  std::uint64_t seed_flag = 0;
  CLI::Option* seed_opt = app.add_option(
      "--seed", seed_flag,
      "replace the config seed list with this single seed; also seeds theory");
  app.add_option("--out-dir", opt.out_dir,
                 "artifact root (overrides OASIS_LAB_OUT and config out_dir)");
  app.add_option("--jobs", opt.jobs, "parallel workers over the run matrix")
      ->check(CLI::PositiveNumber);

  CLI::App* train = app.add_subcommand(
      "train",
      "train the {normalizer} x {router_mode} x {seed} matrix; writes a "
      "manifest, loss.csv, and checkpoints per run");

  std::string analyze_dir;
  CLI::App* analyze = app.add_subcommand(
      "analyze",
      "emit outlier/sink/pathology CSVs, attention CSVs, PGM heatmaps, and a "
      "cross-run comparison table");
  analyze->add_option("run_dir", analyze_dir,
                      "a run directory or an artifact root of runs "
                      "(default: the resolved artifact root)");

  std::string suite;
  std::int64_t n = 1000;
  CLI::App* theory = app.add_subcommand(
      "theory", "run a bound-checker corpus and write CSV reports");
  theory->add_option("suite", suite, "lemma1|thm2|lemma2|thm3|proposition|all")
      ->required();
  theory->add_option("--n", n, "instances per suite (default 1000)");

  std::string quant_dir;
  CLI::App* quant = app.add_subcommand(
      "quant",
      "evaluate trained checkpoints under the configured weight/activation "
      "bit widths; writes quant.csv");
  quant->add_option("run_dir", quant_dir,
                    "a run directory or an artifact root of runs "
                    "(default: the resolved artifact root)");

  // global flags are accepted after the subcommand name too
  for (CLI::App* sub : {train, analyze, theory, quant}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? oasis::kExitOk : oasis::kExitConfig;
  }
  opt.has_seed = seed_opt->count() > 0;
  opt.seed = seed_flag;

  if (train->parsed()) return oasis::cmd_train(opt, std::cout, std::cerr);
  if (analyze->parsed())
    return oasis::cmd_analyze(opt, analyze_dir, std::cout, std::cerr);
  if (theory->parsed())
    return oasis::cmd_theory(opt, suite, n, std::cout, std::cerr);
  if (quant->parsed())
    return oasis::cmd_quant(opt, quant_dir, std::cout, std::cerr);
  return oasis::kExitConfig;
}
