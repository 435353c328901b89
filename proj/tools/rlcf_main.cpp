// rlcf: pipeline stages for contrastive-feedback training of a small policy.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rlcf/pipeline.hpp"

namespace {

constexpr const char* kEnvHelp =
    "Any config key can be overridden from the environment as RLCF_<KEY>,\n"
    "upper-cased with '.' replaced by '_' (e.g. RLCF_RLCF_BETA=0.2).\n"
    "Precedence: --seed/--out flags, then environment, then the config file.\n"
    "Exit codes: 0 ok, 2 config or IO validation, 3 training abort, 4 missing artifact.";

struct Common {
  std::string config;
  std::string seeds;
  std::string out;
  bool resume = false;
  std::vector<std::string> checkpoints;
};

rlcf::RunConfig resolve_config(const Common& c) {
  rlcf::RunConfig config = c.config.empty() ? rlcf::RunConfig{} : rlcf::load_run_config(c.config);
  rlcf::apply_env_overrides(config);
  if (!c.seeds.empty()) config.seeds = rlcf::parse_seed_list(c.seeds);
  if (!c.out.empty()) config.out = c.out;
  return config;
}

void add_common(CLI::App* cmd, Common& c, bool checkpoints) {
  cmd->add_option("--config", c.config, "Run config file (key = value lines)");
  cmd->add_option("--seed", c.seeds, "Seed or comma-separated seed list");
  cmd->add_option("--out", c.out, "Output directory");
  if (checkpoints) cmd->add_option("--checkpoint", c.checkpoints, "Checkpoint directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement learning from contrastive feedback"};
  app.footer(kEnvHelp);
  app.require_subcommand(1);

  Common c;
  auto* groups = app.add_subcommand("build-groups", "Dedup the corpus and write similarity groups");
  add_common(groups, c, false);
  auto* train = app.add_subcommand("train", "Pretrain, SFT and RLCF for every seed");
  add_common(train, c, false);
  train->add_flag("--resume", c.resume, "Continue from the latest checkpoints");
  auto* eval = app.add_subcommand("eval", "Rouge-diff and Batched-MRR on held-out groups");
  add_common(eval, c, true);
  auto* compare = app.add_subcommand("compare-aug", "Dual-encoder comparison: --checkpoint vanilla --checkpoint rlcf");
  add_common(compare, c, true);
  auto* report = app.add_subcommand("report", "Training curves CSV and summary across seeds");
  add_common(report, c, false);

  rlcf::SynthOptions synth_opts;
  std::string synth_out = "synth";
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus, gold, SFT targets and templates");
  synth->add_option("--family", synth_opts.family, "Template family")->capture_default_str();
  synth->add_option("--groups", synth_opts.groups, "Number of clusters")->capture_default_str();
  synth->add_option("--width", synth_opts.width, "Documents per cluster")->capture_default_str();
  synth->add_option("--seed", synth_opts.seed, "Generator seed")->capture_default_str();
  synth->add_option("--generic-copies", synth_opts.generic_copies, "Generic SFT targets per document")->capture_default_str();
  synth->add_option("--detail-copies", synth_opts.detail_copies, "Detailed SFT targets per document")->capture_default_str();
  synth->add_option("--examples", synth_opts.template_examples, "In-context examples per template")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    rlcf::CommandOptions options;
    options.log = &std::cerr;
    if (synth->parsed()) {
      rlcf::cmd_synth(synth_opts, synth_out);
      return 0;
    }
    const rlcf::RunConfig config = resolve_config(c);
    options.resume = c.resume;
    for (const auto& p : c.checkpoints) options.checkpoints.emplace_back(p);
    if (groups->parsed()) {
      rlcf::cmd_build_groups(config, options);
    } else if (train->parsed()) {
      rlcf::cmd_train(config, options);
    } else if (eval->parsed()) {
      std::cout << rlcf::cmd_eval(config, options).to_json() << '\n';
    } else if (compare->parsed()) {
      std::cout << rlcf::cmd_compare_augmentation(config, options).to_json() << '\n';
    } else if (report->parsed()) {
      std::cout << rlcf::cmd_report(config, options).to_json() << '\n';
    }
  } catch (const rlcf::Error& e) {
    std::cerr << "rlcf: " << e.what() << '\n';
    return rlcf::exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "rlcf: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
