#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rim/experiment.hpp"
#include "rim/synthetic.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required();
  cmd->add_option("--set", c.overrides, "Override a config key: key.path=value (repeatable)");
}

int run(int argc, char** argv) {
  CLI::App app{"rim: retrieval-augmented prediction over tabular data"};
  app.require_subcommand(1);

  Common common;
  auto* build = app.add_subcommand("build-index", "Build and save the inverted index");
  add_common(build, common);

  auto* retrieve = app.add_subcommand("retrieve", "Emit retrieved neighbors as JSON lines");
  add_common(retrieve, common);
  rim::RetrieveOptions ropt;
  std::optional<std::string> rout;
  retrieve->add_flag("--oracle", ropt.oracle, "Cross-check every result against exhaustive scoring");
  retrieve->add_option("--targets", ropt.targets_path, "CSV of target rows (default: the test partition)");
  retrieve->add_option("--out", rout, "Write JSON lines here instead of stdout");
  retrieve->add_option("--cache-out", ropt.cache_out, "Also save a retrieval cache for train and test targets");

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train, common);

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test partition");
  add_common(evaluate, common);
  std::optional<std::string> checkpoint;
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint path (default: <run dir>/model.rimmdl)");

  auto* ablate = app.add_subcommand("ablate", "Train the ablation matrix and print a comparison");
  add_common(ablate, common);
  bool progress = false;
  ablate->add_flag("--progress", progress, "Print each row to stderr as it finishes");

  auto* gen = app.add_subcommand("gen-synthetic", "Write the neighbor-signal synthetic CSV");
  rim::synthetic::NeighborSignalSpec spec;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output CSV path")->required();
  gen->add_option("--groups", spec.groups, "Number of user groups");
  gen->add_option("--seed", spec.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    std::ofstream out(gen_out);
    if (!out) throw rim::DataError("cannot write " + gen_out);
    out << rim::synthetic::neighbor_signal_csv(spec);
    std::cout << nlohmann::json{{"command", "gen-synthetic"}, {"path", gen_out}}.dump(2) << '\n';
    return 0;
  }

  // paths given on the command line are relative to the working directory
  auto absolute = [](std::optional<std::string>& p) {
    if (p) p = std::filesystem::absolute(*p).string();
  };
  absolute(ropt.targets_path);
  absolute(ropt.cache_out);
  absolute(rout);
  absolute(checkpoint);

  const auto cfg = rim::load_config(common.config, common.overrides);
  nlohmann::json report;
  if (build->parsed()) {
    report = rim::cmd_build_index(cfg);
  } else if (retrieve->parsed()) {
    if (rout) {
      std::ofstream out(cfg.resolve(*rout));
      if (!out) throw rim::DataError("cannot write " + *rout);
      report = rim::cmd_retrieve(cfg, ropt, out);
    } else {
      report = rim::cmd_retrieve(cfg, ropt, std::cout);
      std::cerr << report.dump() << '\n';
      return 0;
    }
  } else if (train->parsed()) {
    report = rim::cmd_train(cfg);
  } else if (evaluate->parsed()) {
    report = rim::cmd_evaluate(cfg, checkpoint);
  } else if (ablate->parsed()) {
    report = rim::cmd_ablate(cfg, progress ? &std::cerr : nullptr);
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rim::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
