#include "rlcf/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include "json.hpp"
#include "rlcf/error.hpp"

namespace rlcf {

void save_pairs(const std::vector<TrainingPair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write pairs file " + path.string());
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["query"] = p.query;
    j["positive_doc_id"] = p.positive_doc_id;
    j["provenance"] = p.provenance;
    out << j.dump() << '\n';
  }
}

std::vector<TrainingPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot open pairs file " + path.string());
  std::vector<TrainingPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      pairs.push_back({j.at("query").get<std::string>(), j.at("positive_doc_id").get<std::string>(),
                       j.at("provenance").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (pairs.back().query.empty()) throw Error(path.string() + ":" + std::to_string(line_no) + ": empty query");
  }
  return pairs;
}

GenPairsResult gen_training_pairs(const Corpus& corpus, const PolicyParams& policy, const PromptTemplate& tmpl,
                                  const TokenizerSpec& tokenizer, const PromptBudget& budget,
                                  const std::string& provenance) {
  GenPairsResult out;
  for (const auto& doc : corpus) {
    std::string query;
    try {
      const TokenSeq prompt = assemble_prompt(tmpl, doc, tokenizer, budget);
      const Response r = generate(policy, prompt, DecodeMode::greedy_mode(), budget.max_response);
      query = tokenizer.decode(r.content());
    } catch (const Error&) {
      query.clear();
    }
    if (query.empty()) {
      out.skipped.push_back(doc.id);
      continue;
    }
    out.pairs.push_back({std::move(query), doc.id, provenance});
  }
  if (out.skipped.size() * 20 > corpus.size()) {
    throw Error(ErrorKind::kTrainingAbort, "query generation failed for " + std::to_string(out.skipped.size()) +
                                               " of " + std::to_string(corpus.size()) + " documents");
  }
  return out;
}

DualEncoderParams DualEncoderParams::init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) {
  if (vocab_size == 0 || dim == 0) throw Error(ErrorKind::kConfig, "dual encoder needs nonzero vocab and dim");
  DualEncoderParams p;
  p.table.resize(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(dim));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (Eigen::Index i = 0; i < p.table.size(); ++i) p.table.data()[i] = normal(rng);
  return p;
}

Eigen::VectorXd encode(const DualEncoderParams& encoder, std::span<const TokenId> tokens) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(encoder.table.cols());
  if (tokens.empty()) return v;
  for (const TokenId t : tokens) {
    if (t < 0 || t >= encoder.table.rows()) throw Error("token id " + std::to_string(t) + " outside encoder table");
    v += encoder.table.row(t).transpose();
  }
  return v / static_cast<double>(tokens.size());
}

void AugTrainConfig::validate() const {
  if (batch_size < 2) throw Error(ErrorKind::kConfig, "aug batch_size must be at least 2");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::kConfig, "aug learning_rate must be positive");
  }
  if (epochs == 0) throw Error(ErrorKind::kConfig, "aug epochs must be positive");
  if (dim == 0) throw Error(ErrorKind::kConfig, "aug dim must be positive");
}

namespace {

void scatter(DualEncoderParams::Table& grad, std::span<const TokenId> tokens, const Eigen::VectorXd& g) {
  if (tokens.empty()) return;
  const double w = 1.0 / static_cast<double>(tokens.size());
  for (const TokenId t : tokens) grad.row(t) += w * g.transpose();
}

}  // namespace

ContrastiveResult contrastive_loss(std::span<const TokenSeq> queries, std::span<const TokenSeq> docs,
                                   const DualEncoderParams& encoder, bool with_grad) {
  const std::size_t b = queries.size();
  if (b < 2) throw Error("contrastive batch needs at least two pairs");
  if (docs.size() != b) throw Error("contrastive batch has mismatched query and document counts");
  const auto n = static_cast<Eigen::Index>(b);
  Eigen::MatrixXd q(n, encoder.table.cols()), d(n, encoder.table.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    q.row(i) = encode(encoder, queries[i]).transpose();
    d.row(i) = encode(encoder, docs[i]).transpose();
  }
  const Eigen::MatrixXd s = q * d.transpose();
  Eigen::MatrixXd p(n, n);
  ContrastiveResult out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = s.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (s.row(i).array() - m).exp().matrix();
    const double z = e.sum();
    out.loss += std::log(z) + m - s(i, i);
    p.row(i) = e / z;
  }
  out.loss /= static_cast<double>(b);
  if (!with_grad) return out;

  const Eigen::MatrixXd ds = (p - Eigen::MatrixXd::Identity(n, n)) / static_cast<double>(b);
  const Eigen::MatrixXd dq = ds * d;
  const Eigen::MatrixXd dd = ds.transpose() * q;
  out.grad = DualEncoderParams::Table::Zero(encoder.table.rows(), encoder.table.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    scatter(out.grad, queries[i], dq.row(i).transpose());
    scatter(out.grad, docs[i], dd.row(i).transpose());
  }
  return out;
}

ContrastiveResult contrastive_loss(std::span<const TrainingPair> batch, const Corpus& corpus,
                                   const TokenizerSpec& tokenizer, const DualEncoderParams& encoder,
                                   bool with_grad) {
  std::unordered_set<std::string> seen;
  std::vector<TokenSeq> queries, docs;
  for (const auto& p : batch) {
    if (!seen.insert(p.positive_doc_id).second) {
      throw Error("document '" + p.positive_doc_id + "' is the positive of two pairs in one batch");
    }
    queries.push_back(tokenizer.encode(p.query));
    docs.push_back(corpus.at(p.positive_doc_id).tokens);
  }
  return contrastive_loss(queries, docs, encoder, with_grad);
}

DualEncoderResult train_dual_encoder(const std::vector<TrainingPair>& pairs, const Corpus& corpus,
                                     const TokenizerSpec& tokenizer, const AugTrainConfig& config) {
  config.validate();
  if (pairs.size() < config.batch_size) {
    throw Error(ErrorKind::kConfig, "need at least " + std::to_string(config.batch_size) + " pairs, got " +
                                        std::to_string(pairs.size()));
  }
  std::vector<TokenSeq> queries, docs;
  for (const auto& p : pairs) {
    queries.push_back(tokenizer.encode(p.query));
    docs.push_back(corpus.at(p.positive_doc_id).tokens);
  }

  DualEncoderResult out;
  out.encoder = DualEncoderParams::init(tokenizer.size(), config.dim, config.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    // A trailing remainder smaller than the batch size is dropped.
    for (std::size_t start = 0; start + config.batch_size <= order.size(); start += config.batch_size) {
      std::vector<TokenSeq> bq, bd;
      std::unordered_set<std::string> seen;
      for (std::size_t k = start; k < start + config.batch_size; ++k) {
        const auto& p = pairs[order[k]];
        if (!seen.insert(p.positive_doc_id).second) {
          throw Error("document '" + p.positive_doc_id + "' is the positive of two pairs in one batch");
        }
        bq.push_back(queries[order[k]]);
        bd.push_back(docs[order[k]]);
      }
      const ContrastiveResult r = contrastive_loss(bq, bd, out.encoder, true);
      if (!std::isfinite(r.loss)) {
        throw Error(ErrorKind::kTrainingAbort, "non-finite contrastive loss in epoch " + std::to_string(epoch));
      }
      out.encoder.table -= config.learning_rate * r.grad;
      total += r.loss;
      ++batches;
    }
    out.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  return out;
}

RunRanking rank_corpus(const DualEncoderParams& encoder, const std::map<std::string, std::string>& queries,
                       const Corpus& corpus, const TokenizerSpec& tokenizer, std::size_t depth) {
  Eigen::MatrixXd docs(static_cast<Eigen::Index>(corpus.size()), encoder.table.cols());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    docs.row(static_cast<Eigen::Index>(i)) = encode(encoder, corpus[i].tokens).transpose();
  }
  depth = std::min(depth, corpus.size());
  RunRanking run;
  for (const auto& [qid, text] : queries) {
    const Eigen::VectorXd scores = docs * encode(encoder, tokenizer.encode(text));
    std::vector<std::size_t> idx(corpus.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(depth), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = scores(static_cast<Eigen::Index>(a));
                        const double sb = scores(static_cast<Eigen::Index>(b));
                        return sa != sb ? sa > sb : a < b;
                      });
    auto& list = run[qid];
    for (std::size_t r = 0; r < depth; ++r) {
      list.push_back({corpus[idx[r]].id, scores(static_cast<Eigen::Index>(idx[r]))});
    }
  }
  return run;
}

RetrievalScores evaluate_retriever(const DualEncoderParams& encoder, const Qrels& qrels,
                                   const std::map<std::string, std::string>& queries, const Corpus& corpus,
                                   const TokenizerSpec& tokenizer) {
  for (const auto& [qid, text] : queries) {
    const auto it = qrels.find(qid);
    const bool judged = it != qrels.end() && std::any_of(it->second.begin(), it->second.end(),
                                                         [](const auto& kv) { return kv.second > 0; });
    if (!judged) throw Error("eval query '" + qid + "' has no relevant document");
  }
  const RunRanking run = rank_corpus(encoder, queries, corpus, tokenizer, std::min<std::size_t>(100, corpus.size()));
  RetrievalScores s;
  s.mrr_at_10 = mrr_at_k(run, qrels, 10);
  s.recall_at_20 = recall_at_k(run, qrels, std::min<std::size_t>(20, corpus.size()));
  s.recall_at_100 = recall_at_k(run, qrels, std::min<std::size_t>(100, corpus.size()));
  s.ndcg_at_10 = ndcg_at_k(run, qrels, 10);
  return s;
}

}  // namespace rlcf
