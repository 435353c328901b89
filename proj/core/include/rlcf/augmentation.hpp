#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rlcf/corpus.hpp"
#include "rlcf/metrics.hpp"
#include "rlcf/policy.hpp"
#include "rlcf/transformer.hpp"

namespace rlcf {

struct TrainingPair {
  std::string query;
  std::string positive_doc_id;
  std::string provenance;
};

void save_pairs(const std::vector<TrainingPair>& pairs, const std::filesystem::path& path);
std::vector<TrainingPair> load_pairs(const std::filesystem::path& path);

struct GenPairsResult {
  std::vector<TrainingPair> pairs;
  std::vector<std::string> skipped;  // doc ids whose generation failed
};

// One greedy query per document. Documents whose prompt does not fit or whose
// query comes out empty are skipped; more than 5% skipped aborts.
GenPairsResult gen_training_pairs(const Corpus& corpus, const PolicyParams& policy, const PromptTemplate& tmpl,
                                  const TokenizerSpec& tokenizer, const PromptBudget& budget,
                                  const std::string& provenance);

// Shared token table for query and document towers, mean pooled.
struct DualEncoderParams {
  using Table = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Table table;

  static DualEncoderParams init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);
  std::size_t dim() const { return static_cast<std::size_t>(table.cols()); }
  bool all_finite() const { return table.allFinite(); }
};

Eigen::VectorXd encode(const DualEncoderParams& encoder, std::span<const TokenId> tokens);

struct AugTrainConfig {
  std::size_t batch_size = 8;
  double learning_rate = 0.5;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t dim = 64;

  void validate() const;
};

struct ContrastiveResult {
  double loss = 0.0;
  DualEncoderParams::Table grad;  // empty unless requested
};

// Mean over the batch of the in-batch softmax cross-entropy, each query's
// negatives being the other documents.
ContrastiveResult contrastive_loss(std::span<const TokenSeq> queries, std::span<const TokenSeq> docs,
                                   const DualEncoderParams& encoder, bool with_grad = true);
// Throws when two pairs share a positive document.
ContrastiveResult contrastive_loss(std::span<const TrainingPair> batch, const Corpus& corpus,
                                   const TokenizerSpec& tokenizer, const DualEncoderParams& encoder,
                                   bool with_grad = true);

struct DualEncoderResult {
  DualEncoderParams encoder;
  std::vector<double> epoch_loss;
};

DualEncoderResult train_dual_encoder(const std::vector<TrainingPair>& pairs, const Corpus& corpus,
                                     const TokenizerSpec& tokenizer, const AugTrainConfig& config);

// Exhaustive ranking of the corpus for each query; ties go to the earlier document.
RunRanking rank_corpus(const DualEncoderParams& encoder, const std::map<std::string, std::string>& queries,
                       const Corpus& corpus, const TokenizerSpec& tokenizer, std::size_t depth);

struct RetrievalScores {
  double mrr_at_10 = 0.0;
  double recall_at_20 = 0.0;
  double recall_at_100 = 0.0;
  double ndcg_at_10 = 0.0;
};

RetrievalScores evaluate_retriever(const DualEncoderParams& encoder, const Qrels& qrels,
                                   const std::map<std::string, std::string>& queries, const Corpus& corpus,
                                   const TokenizerSpec& tokenizer);

}  // namespace rlcf
