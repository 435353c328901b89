#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rlcf/corpus.hpp"

namespace rlcf {

struct Embedding {
  Eigen::VectorXd values;

  std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
};

// Frozen reward-side retriever: a seeded token table with mean pooling.
// Immutable after construction and safe to share across threads.
class RetrieverModel {
 public:
  static constexpr std::size_t kDefaultDim = 256;

  RetrieverModel(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(table_.rows()); }
  std::uint64_t seed() const { return seed_; }
  using Table = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Table& token_table() const { return table_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  Table table_;  // vocab x dim, row per token
};

// Mean of token-table rows, accumulated in token order.
Embedding embed(std::span<const TokenId> tokens, const RetrieverModel& model);
Embedding embed(const Document& doc, const RetrieverModel& model);

// Raw inner product, summed in ascending index order.
double similarity(const Embedding& a, const Embedding& b);

struct SimilarGroup {
  std::string anchor;
  std::vector<std::string> neighbors;
  std::vector<double> scores;

  std::size_t batch_size() const { return neighbors.size() + 1; }
  // Anchor first, then neighbors in score order.
  std::vector<std::string> members() const;
};

// Exact top-K neighbors of every document (anchor excluded); ties go to the
// earlier corpus position. K is clamped to |corpus| - 1.
std::vector<SimilarGroup> build_groups(const Corpus& corpus, std::size_t k, const RetrieverModel& model);

// 1-based rank of batch_docs[anchor_position] when the batch is sorted by
// similarity to the response. Competitors tied with the anchor rank ahead.
std::size_t rank_in_batch(std::span<const TokenId> response, std::span<const Document* const> batch_docs,
                          std::size_t anchor_position, const RetrieverModel& model);
// Same rule over precomputed document embeddings.
std::size_t rank_in_batch(const Embedding& response, std::span<const Embedding> batch,
                          std::size_t anchor_position);

struct GroupsFile {
  std::vector<SimilarGroup> groups;
  std::size_t k = 0;
  std::uint64_t retriever_seed = 0;
  std::size_t dim = 0;
};

void save_groups(const GroupsFile& file, const std::filesystem::path& path);
GroupsFile load_groups(const std::filesystem::path& path);

}  // namespace rlcf
