#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rlcf/corpus.hpp"
#include "rlcf/retriever.hpp"

namespace rlcf {

// query id -> (doc id -> graded relevance >= 0)
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
};
// query id -> documents in rank order, scores non-increasing
using RunRanking = std::map<std::string, std::vector<ScoredDoc>>;

// Throws if a query has duplicate doc ids or scores increase down the list.
void validate_run(const RunRanking& run);
void validate_qrels(const Qrels& qrels);

Qrels load_qrels(const std::filesystem::path& path);
void save_qrels(const Qrels& qrels, const std::filesystem::path& path);
RunRanking load_run(const std::filesystem::path& path);
void save_run(const RunRanking& run, const std::filesystem::path& path);

double mrr_at_k(const RunRanking& run, const Qrels& qrels, std::size_t k);
double recall_at_k(const RunRanking& run, const Qrels& qrels, std::size_t k);
// Gain 2^rel - 1, discount 1 / log2(rank + 1). Queries whose ideal DCG is
// zero are skipped; their count is written to *skipped.
double ndcg_at_k(const RunRanking& run, const Qrels& qrels, std::size_t k, std::size_t* skipped = nullptr);

struct TokenSet {
  std::set<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  bool contains(const std::string& t) const { return tokens.count(t) != 0; }
};

TokenSet token_set(const std::string& text, const TokenizerSpec& tokenizer);

// Share of the anchor's tokens absent from every neighbor that the summary
// recovers. nullopt when the anchor has no such tokens.
std::optional<double> rouge_diff(const Document& anchor, const std::vector<const Document*>& neighbors,
                                 const std::string& summary, const TokenizerSpec& tokenizer);

struct BatchedMrrEval {
  double mean = 0.0;
  std::vector<double> per_group;  // mean reciprocal rank of the group's members
};

// Each member of each group is ranked within its group under its own
// response. Empty responses rank last.
BatchedMrrEval batched_mrr_eval(const std::vector<SimilarGroup>& groups,
                                const std::map<std::string, std::string>& responses,
                                const RetrieverModel& retriever, const Corpus& corpus,
                                const TokenizerSpec& tokenizer);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over defined seeds
  std::vector<std::optional<double>> per_seed;
  std::optional<std::size_t> undefined_count;
};

struct MetricReport {
  std::map<std::string, MetricSummary> metrics;
  std::string config_hash;
  std::vector<std::string> checkpoints;

  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

// undefined entries are excluded from mean/std and counted. item_undefined
// adds counts of undefined items folded into a seed value (e.g. per-document
// rouge_diff) and forces undefined_count to be reported for that metric.
MetricReport aggregate_report(const std::map<std::string, std::vector<std::optional<double>>>& per_seed,
                              const std::map<std::string, std::size_t>& item_undefined = {});

void save_report(const MetricReport& report, const std::filesystem::path& path);
MetricReport load_report(const std::filesystem::path& path);

}  // namespace rlcf
