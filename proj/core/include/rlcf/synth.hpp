#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rlcf/corpus.hpp"

namespace rlcf {

// Per-document ground truth for synthetic corpora. Never used for training.
struct GoldAnnotation {
  std::string id;
  std::string cluster_id;
  std::vector<std::string> distinguishing_tokens;
};

struct SynthCorpus {
  std::vector<CorpusRecord> records;
  std::vector<GoldAnnotation> gold;
};

std::vector<std::string> registered_families();

// n_groups clusters of group_width near-duplicate documents. Documents of a
// cluster share a template frame and cluster-level slots; each document draws
// its own fillers for the per-document slots, distinct within the cluster.
// Pure function of the arguments.
SynthCorpus synth_corpus(std::string_view family, std::size_t n_groups, std::size_t group_width,
                         std::uint64_t seed);

// Rule-based headline extractor over a normalized document of the given
// family. With with_detail the headline also carries one per-document slot.
std::string reference_response(std::string_view family, std::string_view normalized_text,
                               bool with_detail);

// Deterministic Bernoulli(rate) draw keyed on (doc id, seed).
bool reference_includes_detail(std::string_view doc_id, std::uint64_t seed, double rate);

void save_gold(const std::vector<GoldAnnotation>& gold, const std::filesystem::path& path);
std::vector<GoldAnnotation> load_gold(const std::filesystem::path& path);

}  // namespace rlcf
