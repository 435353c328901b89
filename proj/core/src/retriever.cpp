#include "rlcf/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "rlcf/error.hpp"

namespace rlcf {

RetrieverModel::RetrieverModel(std::size_t vocab_size, std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed), table_(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(dim)) {
  if (dim == 0) throw Error("retriever dim must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index r = 0; r < table_.rows(); ++r) {
    for (Eigen::Index c = 0; c < table_.cols(); ++c) table_(r, c) = normal(rng);
  }
}

Embedding embed(std::span<const TokenId> tokens, const RetrieverModel& model) {
  if (tokens.empty()) throw Error("cannot embed an empty token sequence");
  const auto& table = model.token_table();
  const auto dim = static_cast<Eigen::Index>(model.dim());
  Embedding e{Eigen::VectorXd::Zero(dim)};
  for (const TokenId t : tokens) {
    if (t < 0 || t >= table.rows()) {
      throw Error("token id " + std::to_string(t) + " outside retriever vocabulary");
    }
    for (Eigen::Index i = 0; i < dim; ++i) e.values[i] += table(t, i);
  }
  const double n = static_cast<double>(tokens.size());
  for (Eigen::Index i = 0; i < dim; ++i) e.values[i] /= n;
  return e;
}

Embedding embed(const Document& doc, const RetrieverModel& model) {
  return embed(std::span<const TokenId>(doc.tokens), model);
}

double similarity(const Embedding& a, const Embedding& b) {
  if (a.values.size() != b.values.size()) {
    throw Error("embedding dimension mismatch: " + std::to_string(a.values.size()) + " vs " +
                std::to_string(b.values.size()));
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.values.size(); ++i) sum += a.values[i] * b.values[i];
  return sum;
}

std::vector<std::string> SimilarGroup::members() const {
  std::vector<std::string> out;
  out.reserve(neighbors.size() + 1);
  out.push_back(anchor);
  out.insert(out.end(), neighbors.begin(), neighbors.end());
  return out;
}

std::vector<SimilarGroup> build_groups(const Corpus& corpus, std::size_t k, const RetrieverModel& model) {
  if (corpus.size() < 2) throw Error("build_groups needs at least 2 documents");
  if (k < 1) throw Error("K must be at least 1");
  const size_t n = corpus.size();
  const size_t kk = std::min(k, n - 1);

  std::vector<Embedding> embeddings;
  embeddings.reserve(n);
  for (const auto& doc : corpus) embeddings.push_back(embed(doc, model));

  std::vector<SimilarGroup> groups;
  groups.reserve(n);
  std::vector<double> scores(n);
  std::vector<size_t> order;
  for (size_t i = 0; i < n; ++i) {
    order.clear();
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      scores[j] = similarity(embeddings[i], embeddings[j]);
      order.push_back(j);
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                      [&](size_t a, size_t b) {
                        if (scores[a] != scores[b]) return scores[a] > scores[b];
                        return a < b;
                      });
    SimilarGroup g;
    g.anchor = corpus[i].id;
    for (size_t r = 0; r < kk; ++r) {
      g.neighbors.push_back(corpus[order[r]].id);
      g.scores.push_back(scores[order[r]]);
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

std::size_t rank_in_batch(const Embedding& response, std::span<const Embedding> batch,
                          std::size_t anchor_position) {
  if (anchor_position >= batch.size()) throw Error("anchor position outside batch");
  const double anchor_score = similarity(batch[anchor_position], response);
  size_t rank = 1;
  for (size_t j = 0; j < batch.size(); ++j) {
    if (j != anchor_position && similarity(batch[j], response) >= anchor_score) ++rank;
  }
  return rank;
}

std::size_t rank_in_batch(std::span<const TokenId> response, std::span<const Document* const> batch_docs,
                          std::size_t anchor_position, const RetrieverModel& model) {
  if (response.empty()) throw Error("cannot rank an empty response");
  if (batch_docs.empty()) throw Error("batch is empty");
  const Embedding r = embed(response, model);
  std::vector<Embedding> batch;
  batch.reserve(batch_docs.size());
  for (const Document* d : batch_docs) batch.push_back(embed(*d, model));
  return rank_in_batch(r, batch, anchor_position);
}

void save_groups(const GroupsFile& file, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write groups file " + path.string());
  for (const auto& g : file.groups) {
    nlohmann::ordered_json j;
    j["anchor"] = g.anchor;
    j["neighbors"] = g.neighbors;
    j["scores"] = g.scores;
    j["K"] = file.k;
    j["retriever_seed"] = file.retriever_seed;
    j["dim"] = file.dim;
    out << j.dump() << '\n';
  }
}

GroupsFile load_groups(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot open groups file " + path.string());
  GroupsFile file;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SimilarGroup g;
      g.anchor = j.at("anchor").get<std::string>();
      g.neighbors = j.at("neighbors").get<std::vector<std::string>>();
      g.scores = j.at("scores").get<std::vector<double>>();
      if (g.neighbors.size() != g.scores.size()) throw Error("neighbors/scores length mismatch");
      file.k = j.at("K").get<size_t>();
      file.retriever_seed = j.at("retriever_seed").get<std::uint64_t>();
      file.dim = j.at("dim").get<size_t>();
      file.groups.push_back(std::move(g));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed group record: " + e.what());
    }
  }
  return file;
}

}  // namespace rlcf
