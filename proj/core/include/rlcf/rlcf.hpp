#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rlcf/corpus.hpp"
#include "rlcf/optim.hpp"
#include "rlcf/policy.hpp"
#include "rlcf/retriever.hpp"

namespace rlcf {

struct RlcfConfig {
  double beta = 0.05;
  std::size_t K = 3;  // neighbors per group, batch B = K + 1
  double clip_epsilon = 0.2;
  std::size_t ppo_epochs = 4;
  std::size_t minibatch_size = 4;  // sequences
  double value_loss_weight = 0.5;
  double gae_lambda = 0.95;
  double gamma = 1.0;
  double learning_rate = 1e-4;
  double value_learning_rate = 1e-3;
  double clip_norm = 1.0;
  bool normalize_advantages = true;
  std::size_t max_response_length = 16;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t total_steps = 300;
  std::size_t groups_per_step = 1;
  std::size_t checkpoint_interval = 0;  // 0 disables partial checkpoints

  void validate() const;
  std::string to_text() const;
};

// Flat "key = value" text; '#' starts a comment. Unknown keys are an error.
RlcfConfig parse_rlcf_config(const std::string& text);
RlcfConfig load_rlcf_config(const std::filesystem::path& path);
// Applies one key; returns false if the key is not an RlcfConfig key.
bool set_rlcf_key(RlcfConfig& config, const std::string& key, const std::string& value);

struct RewardRecord {
  std::string doc_id;
  std::size_t rank = 0;
  double batched_mrr = 0.0;
  double kl_term = 0.0;  // log pi_rl(R|d) - log pi_ref(R|d), summed over tokens
  double full_reward = 0.0;
};

double batched_mrr(std::size_t rank);
double full_reward(double bmrr, double logp_policy, double logp_ref, double beta);

// Affine value head over the policy's final hidden state. It reads hidden
// states without back-propagating into the policy.
struct ValueHead {
  Eigen::VectorXd weight;
  double bias = 0.0;

  static ValueHead zeros(std::size_t width);
};

struct RolloutSequence {
  std::string doc_id;
  TokenSeq prompt;
  Response response;
  std::vector<double> old_logprobs;  // policy at rollout time (scoring path)
  std::vector<double> ref_logprobs;
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> returns;
  RewardRecord reward;
};

struct RolloutBatch {
  SimilarGroup group;
  std::vector<RolloutSequence> sequences;

  std::size_t token_count() const;
};

struct SequenceScores {
  std::vector<double> logprobs;
  std::vector<double> values;
};
SequenceScores score_sequence(const PolicyParams& policy, const ValueHead& value_head,
                              std::span<const TokenId> prompt, std::span<const TokenId> response);

// Terminal reward on the last token, zero elsewhere; GAE over the response.
void compute_advantages(RolloutSequence& seq, double terminal_reward, double gamma, double lambda);

struct RolloutContext {
  const Corpus& corpus;
  const TokenizerSpec& tokenizer;
  const RetrieverModel& retriever;
  const PromptTemplate& prompt_template;
  std::size_t context = 512;
};

RolloutBatch rollout_group(const SimilarGroup& group, const PolicyParams& policy, const PolicyParams& reference,
                           const ValueHead& value_head, const RolloutContext& ctx, const RlcfConfig& config,
                           std::uint64_t stream_seed);

struct PpoOptimizer {
  Adam policy;
  Adam value;
};

struct PpoStats {
  double mean_reward = 0.0;
  double mean_batched_mrr = 0.0;
  double mean_kl = 0.0;
  double surrogate_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double initial_ratio_deviation = 0.0;  // max |ratio - 1| over the first minibatch of epoch 0
};

PpoStats ppo_step(PolicyParams& policy, ValueHead& value_head, std::span<const RolloutBatch> rollouts,
                  const RlcfConfig& config, PpoOptimizer& optimizer, std::uint64_t shuffle_seed = 0);

struct TrainLogRow {
  std::size_t step = 0;
  double mean_batched_mrr = 0.0;
  double mean_kl = 0.0;
  double surrogate_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double wall_time = 0.0;
};

std::string to_jsonl(const TrainLogRow& row);
std::vector<TrainLogRow> load_training_log(const std::filesystem::path& path);

struct RlcfState {
  PolicyParams policy;
  ValueHead value_head;
  PpoOptimizer optimizer;
  std::size_t step = 0;  // completed steps
};

void save_rlcf_state(const std::filesystem::path& dir, const RlcfState& state, const TokenizerSpec& tokenizer,
                     const std::vector<std::uint64_t>& seed_lineage);
RlcfState load_rlcf_state(const std::filesystem::path& dir, const TokenizerSpec* tokenizer = nullptr);

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_step;
  std::function<void(const RlcfState&)> on_checkpoint;
};

struct RlcfResult {
  RlcfState state;
  std::vector<TrainLogRow> log;
  std::uint64_t reference_hash_start = 0;
  std::uint64_t reference_hash_end = 0;
};

// Snapshots `reference` as the frozen policy and trains from `resume` (or a
// fresh copy of the reference) until config.total_steps.
RlcfResult train(const std::vector<SimilarGroup>& groups, const PolicyParams& reference, const RolloutContext& ctx,
                 const RlcfConfig& config, std::optional<RlcfState> resume = std::nullopt,
                 const TrainHooks& hooks = {});

// Exact per-position KL(policy || reference) summed along responses sampled
// from the policy, averaged over prompts.
double mean_kl_to_reference(const PolicyParams& policy, const PolicyParams& reference,
                            const std::vector<TokenSeq>& prompts, std::size_t max_len, double temperature,
                            std::uint64_t seed);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace rlcf
