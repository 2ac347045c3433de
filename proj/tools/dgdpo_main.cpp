// Command-line pipeline driver. Every stage persists its artifacts under the
// run directory, so stages can be re-run individually; run-all executes the
// whole graph for every seed and aggregates the reports.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dgdpo/pipeline.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
};

dgdpo::ExperimentConfig resolve_config(const CliOptions& opt) {
  dgdpo::ExperimentConfig cfg;
  if (!opt.config_path.empty()) cfg = dgdpo::load_experiment_config(opt.config_path);
  // flags override the config file
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  if (opt.seed >= 0) cfg.seeds = {static_cast<uint64_t>(opt.seed)};
  return cfg;
}

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_path, "experiment config JSON");
  cmd->add_option("--seed", opt.seed, "run a single seed instead of the config's list");
  cmd->add_option("--out", opt.out_dir, "output directory override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dgdpo: caption-preference retrieval pipeline"};
  app.require_subcommand(1);

  CliOptions opt;
  std::string active;

  for (const char* name : {"gen-data", "train-retriever", "train-captioner", "sample-captions",
                           "build-prefs", "train-dpo", "evaluate", "run-all", "report"}) {
    CLI::App* cmd = app.add_subcommand(name);
    add_common_flags(cmd, opt);
    cmd->callback([name, &active] { active = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    dgdpo::ExperimentConfig cfg = resolve_config(opt);
    if (active == "report") {
      std::cout << dgdpo::cmd_report(cfg.out_dir);
      return 0;
    }
    if (active == "run-all") {
      dgdpo::cmd_run_all(cfg);
      std::cout << dgdpo::cmd_report(cfg.out_dir);
      return 0;
    }
    for (uint64_t seed : cfg.seeds) {
      if (active == "gen-data") {
        dgdpo::cmd_gen_data(cfg, seed);
        dgdpo::RetrievalDataset train =
            dgdpo::read_dataset(dgdpo::seed_paths(cfg, seed).data("train"),
                                dgdpo::seed_paths(cfg, seed).header("train"));
        dgdpo::RetrievalDataset test =
            dgdpo::read_dataset(dgdpo::seed_paths(cfg, seed).data("test"),
                                dgdpo::seed_paths(cfg, seed).header("test"));
        std::printf("seed %llu: %zu train / %zu test videos\n",
                    static_cast<unsigned long long>(seed), train.size(), test.size());
      } else if (active == "train-retriever") {
        dgdpo::cmd_train_retriever(cfg, seed);
      } else if (active == "train-captioner") {
        dgdpo::cmd_train_captioner(cfg, seed);
      } else if (active == "sample-captions") {
        dgdpo::cmd_sample_captions(cfg, seed);
      } else if (active == "build-prefs") {
        dgdpo::cmd_build_prefs(cfg, seed);
      } else if (active == "train-dpo") {
        dgdpo::cmd_train_dpo(cfg, seed);
      } else if (active == "evaluate") {
        dgdpo::cmd_evaluate(cfg, seed);
      }
      std::printf("%s done for seed %llu\n", active.c_str(),
                  static_cast<unsigned long long>(seed));
    }
    return 0;
  } catch (const std::exception& e) {
    nlohmann::json err{{"error", e.what()}, {"command", active}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
