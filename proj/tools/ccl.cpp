#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ccl/cli.hpp"

int main(int argc, char** argv) {
  namespace cli = ccl::cli;
  CLI::App app{"Continual contrastive learning engine"};
  app.require_subcommand(1);

  std::string config, out, checkpoint;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  std::vector<std::string> runs;

  auto* run = app.add_subcommand("run", "train and evaluate one configured method");
  run->add_option("--config", config, "run config (JSON)")->required();
  run->add_option("--out", out, "output directory")->required();
  run->add_option("--seed", seed, "override the root seed");
  run->add_option("--jobs", jobs, "ignored for single runs");

  auto* ablate = app.add_subcommand("ablate", "sweep one axis over several seeds");
  ablate->add_option("--config", config, "run config with a \"sweep\" block")->required();
  ablate->add_option("--out", out, "output directory")->required();
  ablate->add_option("--seed", seed, "override the base seed");
  ablate->add_option("--jobs", jobs, "parallel sweep cells")->check(CLI::PositiveNumber);

  auto* probe = app.add_subcommand("probe", "linear-probe a checkpoint on the configured data");
  probe->add_option("--checkpoint", checkpoint, "task{t}.ckpt file")->required();
  probe->add_option("--config", config, "run config describing the data")->required();
  probe->add_option("--out", out, "output CSV")->required();
  probe->add_option("--seed", seed, "override the root seed");

  auto* sample = app.add_subcommand("sample", "train the first task and dump the exemplar selection");
  sample->add_option("--config", config, "run config")->required();
  sample->add_option("--out", out, "output CSV")->required();
  sample->add_option("--seed", seed, "override the root seed");

  auto* report = app.add_subcommand("report", "aggregate run directories into one table");
  report->add_option("--runs", runs, "run directories")->required();
  report->add_option("--out", out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigError;
  }

  if (*run) return cli::cmd_run(config, out, seed);
  if (*ablate) return cli::cmd_ablate(config, out, seed, jobs);
  if (*probe) return cli::cmd_probe(checkpoint, config, out, seed);
  if (*sample) return cli::cmd_sample(config, out, seed);
  std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
  return cli::cmd_report(dirs, out);
}
