#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rlcf/augmentation.hpp"
#include "rlcf/corpus.hpp"
#include "rlcf/error.hpp"
#include "rlcf/metrics.hpp"
#include "rlcf/policy.hpp"
#include "rlcf/retriever.hpp"
#include "rlcf/rlcf.hpp"
#include "rlcf/transformer.hpp"

namespace rlcf {

struct RunConfig {
  std::filesystem::path corpus;
  std::filesystem::path sft_targets;
  std::filesystem::path gold;
  std::filesystem::path templates;
  std::filesystem::path out = "rlcf-out";
  std::string task = "summarize";
  TokenScheme tokenizer = TokenScheme::kWhitespaceWord;
  double heldout_fraction = 0.2;

  std::uint64_t retriever_seed = 0;
  std::size_t retriever_dim = 256;

  ModelDescriptor model;
  std::size_t pretrain_epochs = 3;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_batch_size = 8;
  std::size_t sft_epochs = 4;
  double sft_lr = 1e-3;
  std::size_t sft_batch_size = 8;

  RlcfConfig rlcf;

  AugTrainConfig aug;
  std::string aug_task = "query";
  std::vector<std::size_t> aug_eval_slots;  // gold slot indexes used in eval queries; empty = all

  std::vector<std::uint64_t> seeds{0};

  // One "key = value" line per key in a fixed order; the config hash is taken over this text.
  std::string canonical() const;
  std::string hash() const;
};

// Sets one key; false if the key is unknown. Relative paths resolve against base.
bool set_run_key(RunConfig& config, const std::string& key, const std::string& value,
                 const std::filesystem::path& base = {});
// "key = value" lines, '#' comments. Unknown keys are a config error.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base = {});
RunConfig load_run_config(const std::filesystem::path& path);
// Environment name for a config key: RLCF_ + upper-cased key with '.' as '_'.
std::string env_name(const std::string& key);
std::vector<std::string> run_config_keys();
// Applies RLCF_* overrides found through getenv (or the given lookup).
void apply_env_overrides(RunConfig& config,
                         const std::function<const char*(const char*)>& lookup = {});
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

enum class Stage { kBuildGroups, kTrain, kEval, kCompareAug, kReport };
// Checks every input path the stage reads before any work starts.
void validate_paths(const RunConfig& config, Stage stage);

// Exclusive lock on an output directory, released on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Corpus, tokenizer and split derived deterministically from a config.
struct PreparedData {
  TokenizerSpec tokenizer{TokenScheme::kWhitespaceWord};
  Corpus corpus;
  std::size_t removed_duplicates = 0;
  std::size_t train_size = 0;  // documents [0, train_size) train, the rest are held out
  std::map<std::string, PromptTemplate> templates;
  std::map<std::string, std::vector<std::string>> sft_targets;  // doc id -> responses

  bool heldout(const std::string& id) const;
  Corpus train_corpus() const;
  Corpus heldout_corpus() const;
  PromptBudget budget(const RunConfig& config) const;
  const PromptTemplate& prompt_template(const std::string& task) const;
};

PreparedData prepare_data(const RunConfig& config);
RetrieverModel make_retriever(const RunConfig& config, const PreparedData& data);

struct SplitGroups {
  std::vector<SimilarGroup> train;
  std::vector<SimilarGroup> heldout;
};
// Loads <out>/groups.jsonl and checks it was built with this config.
SplitGroups load_split_groups(const RunConfig& config, const PreparedData& data);

struct CommandOptions {
  bool resume = false;
  std::vector<std::filesystem::path> checkpoints;
  std::ostream* log = nullptr;
};

std::filesystem::path groups_path(const RunConfig& config);
std::filesystem::path seed_dir(const RunConfig& config, std::uint64_t seed);

// Writes <out>/groups.jsonl; each document is grouped within its own split.
void cmd_build_groups(const RunConfig& config, const CommandOptions& options = {});
// pretrain -> sft (reference snapshot) -> RLCF, per seed under <out>/seed-<n>/.
void cmd_train(const RunConfig& config, const CommandOptions& options = {});
// Greedy responses on held-out groups; writes <out>/eval_report.json. A
// "{seed}" in the checkpoint path is replaced by each configured seed.
MetricReport cmd_eval(const RunConfig& config, const CommandOptions& options);
// checkpoints = {vanilla, rlcf}; writes <out>/compare_aug.json and .csv.
MetricReport cmd_compare_augmentation(const RunConfig& config, const CommandOptions& options);
// Training curves of every seed as CSV plus a summary report.
MetricReport cmd_report(const RunConfig& config, const CommandOptions& options = {});

struct SynthOptions {
  std::string family = "stock-report";
  std::size_t groups = 200;
  std::size_t width = 4;
  std::uint64_t seed = 0;
  std::size_t generic_copies = 2;
  std::size_t detail_copies = 1;
  std::size_t template_examples = 1;
};
// Writes corpus.jsonl, gold.jsonl, sft_targets.jsonl, templates.json and rlcf.conf.
void cmd_synth(const SynthOptions& options, const std::filesystem::path& out);

int exit_code(ErrorKind kind);

}  // namespace rlcf
