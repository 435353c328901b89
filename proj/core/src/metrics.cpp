#include "rlcf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "rlcf/error.hpp"
#include "rlcf/text.hpp"

namespace rlcf {

namespace {

const std::map<std::string, int>& judged(const Qrels& qrels, const std::string& qid) {
  const auto it = qrels.find(qid);
  if (it == qrels.end()) throw Error("query '" + qid + "' has no relevance judgments");
  return it->second;
}

int relevance(const std::map<std::string, int>& j, const std::string& doc) {
  const auto it = j.find(doc);
  return it == j.end() ? 0 : it->second;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  return out;
}

}  // namespace

void validate_run(const RunRanking& run) {
  for (const auto& [qid, docs] : run) {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (!seen.insert(docs[i].doc_id).second) {
        throw Error("run for query '" + qid + "' lists '" + docs[i].doc_id + "' twice");
      }
      if (i > 0 && docs[i].score > docs[i - 1].score) {
        throw Error("run for query '" + qid + "' has increasing scores at rank " + std::to_string(i + 1));
      }
    }
  }
}

void validate_qrels(const Qrels& qrels) {
  for (const auto& [qid, docs] : qrels) {
    if (docs.empty()) throw Error("query '" + qid + "' has no judged documents");
    for (const auto& [doc, rel] : docs) {
      if (rel < 0) throw Error("negative relevance for ('" + qid + "', '" + doc + "')");
    }
  }
}

Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open qrels file " + path.string());
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 3) throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
    try {
      qrels[f[0]][f[1]] = std::stoi(f[2]);
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": bad relevance '" + f[2] + "'");
    }
  }
  validate_qrels(qrels);
  return qrels;
}

void save_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write qrels file " + path.string());
  for (const auto& [qid, docs] : qrels) {
    for (const auto& [doc, rel] : docs) out << qid << '\t' << doc << '\t' << rel << '\n';
  }
}

RunRanking load_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open run file " + path.string());
  std::map<std::string, std::vector<std::pair<long, ScoredDoc>>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 4) throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields");
    try {
      rows[f[0]].push_back({std::stol(f[2]), ScoredDoc{f[1], std::stod(f[3])}});
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": bad rank or score");
    }
  }
  RunRanking run;
  for (auto& [qid, list] : rows) {
    std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& out = run[qid];
    for (auto& [rank, doc] : list) out.push_back(std::move(doc));
  }
  validate_run(run);
  return run;
}

void save_run(const RunRanking& run, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write run file " + path.string());
  out.precision(17);
  for (const auto& [qid, docs] : run) {
    for (std::size_t i = 0; i < docs.size(); ++i) {
      out << qid << '\t' << docs[i].doc_id << '\t' << (i + 1) << '\t' << docs[i].score << '\n';
    }
  }
}

double mrr_at_k(const RunRanking& run, const Qrels& qrels, std::size_t k) {
  if (run.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [qid, docs] : run) {
    const auto& j = judged(qrels, qid);
    for (std::size_t i = 0; i < docs.size() && i < k; ++i) {
      if (relevance(j, docs[i].doc_id) > 0) {
        total += 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
  }
  return total / static_cast<double>(run.size());
}

double recall_at_k(const RunRanking& run, const Qrels& qrels, std::size_t k) {
  if (run.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [qid, docs] : run) {
    const auto& j = judged(qrels, qid);
    std::size_t relevant = 0;
    for (const auto& [doc, rel] : j) relevant += rel > 0 ? 1 : 0;
    if (relevant == 0) continue;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < docs.size() && i < k; ++i) hit += relevance(j, docs[i].doc_id) > 0 ? 1 : 0;
    total += static_cast<double>(hit) / static_cast<double>(relevant);
  }
  return total / static_cast<double>(run.size());
}

double ndcg_at_k(const RunRanking& run, const Qrels& qrels, std::size_t k, std::size_t* skipped) {
  double total = 0.0;
  std::size_t counted = 0, skip = 0;
  for (const auto& [qid, docs] : run) {
    const auto& j = judged(qrels, qid);
    std::vector<int> ideal;
    for (const auto& [doc, rel] : j) ideal.push_back(rel);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < ideal.size() && i < k; ++i) {
      idcg += (std::pow(2.0, ideal[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    if (idcg <= 0.0) {
      ++skip;
      continue;
    }
    double dcg = 0.0;
    for (std::size_t i = 0; i < docs.size() && i < k; ++i) {
      dcg += (std::pow(2.0, relevance(j, docs[i].doc_id)) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    total += dcg / idcg;
    ++counted;
  }
  if (skipped != nullptr) *skipped = skip;
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

TokenSet token_set(const std::string& text, const TokenizerSpec& tokenizer) {
  TokenSet s;
  for (auto& piece : tokenizer.pieces(normalize_text(text))) s.tokens.insert(std::move(piece));
  return s;
}

std::optional<double> rouge_diff(const Document& anchor, const std::vector<const Document*>& neighbors,
                                 const std::string& summary, const TokenizerSpec& tokenizer) {
  if (neighbors.empty()) throw Error("rouge_diff needs at least one neighbor");
  std::string joined;
  for (const Document* n : neighbors) {
    joined += n->text;
    joined += ' ';
  }
  const TokenSet neighbor_tokens = token_set(joined, tokenizer);
  const TokenSet summary_tokens = token_set(summary, tokenizer);
  std::size_t unique = 0, recovered = 0;
  for (const auto& t : token_set(anchor.text, tokenizer).tokens) {
    if (neighbor_tokens.contains(t)) continue;
    ++unique;
    if (summary_tokens.contains(t)) ++recovered;
  }
  if (unique == 0) return std::nullopt;
  return static_cast<double>(recovered) / static_cast<double>(unique);
}

BatchedMrrEval batched_mrr_eval(const std::vector<SimilarGroup>& groups,
                                const std::map<std::string, std::string>& responses,
                                const RetrieverModel& retriever, const Corpus& corpus,
                                const TokenizerSpec& tokenizer) {
  BatchedMrrEval out;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& g : groups) {
    const auto members = g.members();
    std::vector<Embedding> batch;
    for (const auto& id : members) batch.push_back(embed(corpus.at(id), retriever));
    double group_sum = 0.0;
    for (std::size_t j = 0; j < members.size(); ++j) {
      const auto it = responses.find(members[j]);
      if (it == responses.end()) throw Error("no response for document '" + members[j] + "'");
      const TokenSeq tokens = tokenizer.encode(it->second);
      const std::size_t rank =
          tokens.empty() ? members.size() : rank_in_batch(embed(tokens, retriever), batch, j);
      group_sum += 1.0 / static_cast<double>(rank);
    }
    out.per_group.push_back(group_sum / static_cast<double>(members.size()));
    total += group_sum;
    count += members.size();
  }
  out.mean = count == 0 ? 0.0 : total / static_cast<double>(count);
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json m = nlohmann::ordered_json::object();
  for (const auto& [name, s] : metrics) {
    nlohmann::ordered_json e;
    e["mean"] = s.mean;
    e["std"] = s.std;
    e["per_seed"] = nlohmann::ordered_json::array();
    for (const auto& v : s.per_seed) e["per_seed"].push_back(v ? nlohmann::ordered_json(*v) : nullptr);
    if (s.undefined_count) e["undefined_count"] = *s.undefined_count;
    m[name] = e;
  }
  j["metrics"] = m;
  j["provenance"] = {{"config_hash", config_hash}, {"checkpoints", checkpoints}};
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  MetricReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [name, e] : j.at("metrics").items()) {
      MetricSummary s;
      s.mean = e.at("mean").get<double>();
      s.std = e.at("std").get<double>();
      for (const auto& v : e.at("per_seed")) {
        s.per_seed.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
      }
      if (e.contains("undefined_count")) s.undefined_count = e.at("undefined_count").get<std::size_t>();
      r.metrics[name] = std::move(s);
    }
    r.config_hash = j.at("provenance").at("config_hash").get<std::string>();
    r.checkpoints = j.at("provenance").at("checkpoints").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
  return r;
}

MetricReport aggregate_report(const std::map<std::string, std::vector<std::optional<double>>>& per_seed,
                              const std::map<std::string, std::size_t>& item_undefined) {
  MetricReport report;
  for (const auto& [name, values] : per_seed) {
    if (values.empty()) throw Error("metric '" + name + "' has no seed values");
    MetricSummary s;
    s.per_seed = values;
    std::size_t defined = 0, undefined = 0;
    double sum = 0.0;
    for (const auto& v : values) {
      if (v) {
        sum += *v;
        ++defined;
      } else {
        ++undefined;
      }
    }
    if (defined > 0) {
      s.mean = sum / static_cast<double>(defined);
      double sq = 0.0;
      for (const auto& v : values) {
        if (v) sq += (*v - s.mean) * (*v - s.mean);
      }
      s.std = std::sqrt(sq / static_cast<double>(defined));
    }
    const auto extra = item_undefined.find(name);
    if (undefined > 0 || extra != item_undefined.end()) {
      s.undefined_count = undefined + (extra != item_undefined.end() ? extra->second : 0);
    }
    report.metrics[name] = std::move(s);
  }
  return report;
}

void save_report(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write report " + path.string());
  out << report.to_json() << '\n';
}

MetricReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot open report " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return MetricReport::from_json(ss.str());
}

}  // namespace rlcf
