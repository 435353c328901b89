#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rlcf/corpus.hpp"
#include "rlcf/transformer.hpp"

namespace rlcf {

struct PromptExample {
  std::string document;
  std::string response;
};

struct PromptTemplate {
  static constexpr std::size_t kMaxExamples = 2;

  std::string task;
  std::string instruction;
  std::vector<PromptExample> examples;
};

// Template file: {"<task>": {"instruction": "...", "examples": [{"document", "response"}]}}
std::map<std::string, PromptTemplate> load_templates(const std::filesystem::path& path);
void save_templates(const std::map<std::string, PromptTemplate>& templates, const std::filesystem::path& path);

// Token budget a prompt must leave room for.
struct PromptBudget {
  std::size_t context = 512;
  std::size_t max_response = 16;
};

// instruction <sep> [ex_doc <resp> ex_response <sep>]* document <resp>
// Examples are taken in order while they fit the budget, at most two.
TokenSeq assemble_prompt(const PromptTemplate& tmpl, const Document& doc, const TokenizerSpec& tokenizer,
                         const PromptBudget& budget);

struct DecodeMode {
  bool greedy = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static DecodeMode greedy_mode() { return {}; }
  static DecodeMode sampled(double temperature, std::uint64_t seed) { return {false, temperature, seed}; }
};

struct Response {
  TokenSeq tokens;               // includes the trailing end-of-sequence when terminated
  std::vector<double> logprobs;  // untempered policy log-probabilities, one per token
  bool terminated = false;
  DecodeMode mode;

  // Tokens without the end-of-sequence marker.
  TokenSeq content() const;
};

Response generate(const PolicyParams& params, std::span<const TokenId> prompt, const DecodeMode& mode,
                  std::size_t max_len);

// Conditional log-probability of each response token given the prompt and the
// preceding response tokens.
std::vector<double> logprob(const PolicyParams& params, std::span<const TokenId> prompt,
                            std::span<const TokenId> response);

struct TrainConfig {
  ModelDescriptor model;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;  // sequences per update
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<double> epoch_loss;  // mean per-token cross-entropy per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Next-token pretraining from a fresh initialization (model.vocab must be set).
TrainResult pretrain(const Corpus& corpus, const TrainConfig& config, const EpochCallback& on_epoch = {});
// Continues training from init (used to extend pretraining).
TrainResult pretrain_from(const PolicyParams& init, const Corpus& corpus, const TrainConfig& config,
                          const EpochCallback& on_epoch = {});

struct SftPair {
  Document doc;
  std::string response;
};

// Assembled prompt plus response targets. target is response + <eos>, or
// empty when the gold response is empty.
struct SftExample {
  std::string doc_id;
  TokenSeq prompt;
  TokenSeq target;
};

std::vector<SftExample> prepare_sft(const std::vector<SftPair>& pairs, const PromptTemplate& tmpl,
                                    const TokenizerSpec& tokenizer, const PromptBudget& budget);

// Mean cross-entropy over all target tokens of the batch; prompt positions
// carry no loss. Adds d(loss)/d(params) into grads when non-null.
double sft_loss(const PolicyParams& params, std::span<const SftExample> batch, std::vector<Matrix>* grads);

// Mean next-token cross-entropy of whole sequences (pretraining objective).
double lm_loss(const PolicyParams& params, std::span<const TokenSeq> sequences, std::vector<Matrix>* grads);

TrainResult sft(const PolicyParams& init, const std::vector<SftExample>& examples, const TrainConfig& config,
                const EpochCallback& on_epoch = {});

}  // namespace rlcf
