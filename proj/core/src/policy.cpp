#include "rlcf/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "rlcf/error.hpp"
#include "rlcf/optim.hpp"

namespace rlcf {

namespace {

using Var = ad::Tape::Var;

void check_finite_loss(double loss, const std::string& stage, std::size_t epoch) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorKind::kTrainingAbort,
                stage + " diverged: non-finite loss in epoch " + std::to_string(epoch));
  }
}

}  // namespace

std::map<std::string, PromptTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open template file " + path.string());
  std::map<std::string, PromptTemplate> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [task, body] : j.items()) {
      PromptTemplate t;
      t.task = task;
      t.instruction = body.at("instruction").get<std::string>();
      if (body.contains("examples")) {
        for (const auto& ex : body.at("examples")) {
          t.examples.push_back({ex.at("document").get<std::string>(), ex.at("response").get<std::string>()});
        }
      }
      if (t.examples.size() > PromptTemplate::kMaxExamples) {
        throw Error(ErrorKind::kConfig, "template '" + task + "' has more than two examples");
      }
      out.emplace(task, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, "malformed template file " + path.string() + ": " + e.what());
  }
  return out;
}

void save_templates(const std::map<std::string, PromptTemplate>& templates, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  for (const auto& [task, t] : templates) {
    nlohmann::ordered_json body;
    body["instruction"] = t.instruction;
    body["examples"] = nlohmann::ordered_json::array();
    for (const auto& ex : t.examples) body["examples"].push_back({{"document", ex.document}, {"response", ex.response}});
    j[task] = body;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write template file " + path.string());
  out << j.dump(2) << '\n';
}

TokenSeq assemble_prompt(const PromptTemplate& tmpl, const Document& doc, const TokenizerSpec& tokenizer,
                         const PromptBudget& budget) {
  if (tmpl.examples.size() > PromptTemplate::kMaxExamples) throw Error("at most two prompt examples allowed");
  TokenSeq head = tokenizer.encode(tmpl.instruction);
  head.push_back(TokenizerSpec::kSep);
  TokenSeq tail = doc.tokens;
  tail.push_back(TokenizerSpec::kResp);

  const std::size_t room = budget.context >= budget.max_response ? budget.context - budget.max_response : 0;
  std::size_t used = head.size() + tail.size();
  if (used > room) {
    throw Error("prompt for '" + doc.id + "' overflows the context budget by " + std::to_string(used - room) +
                " tokens");
  }
  for (const auto& ex : tmpl.examples) {
    TokenSeq seg = tokenizer.encode(ex.document);
    seg.push_back(TokenizerSpec::kResp);
    const TokenSeq resp = tokenizer.encode(ex.response);
    seg.insert(seg.end(), resp.begin(), resp.end());
    seg.push_back(TokenizerSpec::kSep);
    if (used + seg.size() > room) break;
    used += seg.size();
    head.insert(head.end(), seg.begin(), seg.end());
  }
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

TokenSeq Response::content() const {
  TokenSeq out = tokens;
  if (terminated && !out.empty() && out.back() == TokenizerSpec::kEos) out.pop_back();
  return out;
}

Response generate(const PolicyParams& params, std::span<const TokenId> prompt, const DecodeMode& mode,
                  std::size_t max_len) {
  if (prompt.empty()) throw Error("generation needs a nonempty prompt");
  if (prompt.size() + max_len > params.descriptor().context) {
    throw Error("prompt of " + std::to_string(prompt.size()) + " tokens plus " + std::to_string(max_len) +
                " response tokens exceeds context " + std::to_string(params.descriptor().context));
  }
  Response out;
  out.mode = mode;
  if (max_len == 0) return out;

  IncrementalDecoder decoder(params);
  Eigen::VectorXd dist;
  for (const TokenId t : prompt) dist = decoder.step(t);

  std::mt19937_64 rng(mode.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Eigen::VectorXd weights(dist.size());
  while (true) {
    Eigen::Index choice = 0;
    if (mode.greedy) {
      dist.maxCoeff(&choice);
    } else {
      if (!(mode.temperature > 0.0)) throw Error("sampling temperature must be positive");
      const double mx = dist.maxCoeff();
      weights = ((dist.array() - mx) / mode.temperature).exp();
      const double u = uniform(rng) * weights.sum();
      double acc = 0.0;
      choice = weights.size() - 1;
      for (Eigen::Index i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) {
          choice = i;
          break;
        }
      }
    }
    const auto token = static_cast<TokenId>(choice);
    out.tokens.push_back(token);
    out.logprobs.push_back(dist[choice]);
    if (token == TokenizerSpec::kEos) {
      out.terminated = true;
      break;
    }
    if (out.tokens.size() >= max_len) break;
    dist = decoder.step(token);
  }
  return out;
}

std::vector<double> logprob(const PolicyParams& params, std::span<const TokenId> prompt,
                            std::span<const TokenId> response) {
  if (prompt.empty()) throw Error("scoring needs a nonempty prompt");
  if (response.empty()) return {};
  TokenSeq seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end() - 1);
  ad::Tape tape;
  const ForwardGraph g = record_forward(tape, params, nullptr, seq, prompt.size() - 1, response);
  const Matrix& lp = tape.value(g.logprobs);
  return std::vector<double>(lp.data(), lp.data() + lp.size());
}

double lm_loss(const PolicyParams& params, std::span<const TokenSeq> sequences, std::vector<Matrix>* grads) {
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.size() > 1 ? s.size() - 1 : 0;
  if (total == 0) return 0.0;
  double loss = 0.0;
  for (const auto& s : sequences) {
    if (s.size() < 2) continue;
    ad::Tape tape;
    const std::span<const TokenId> all(s);
    const ForwardGraph g = record_forward(tape, params, grads, all.first(s.size() - 1), 0, all.subspan(1));
    const Matrix& lp = tape.value(g.logprobs);
    loss -= lp.sum();
    if (grads != nullptr) {
      const std::pair<Var, Matrix> seed{g.logprobs, Matrix::Constant(lp.rows(), 1, -1.0 / static_cast<double>(total))};
      tape.backward(std::span(&seed, 1));
    }
  }
  return loss / static_cast<double>(total);
}

double sft_loss(const PolicyParams& params, std::span<const SftExample> batch, std::vector<Matrix>* grads) {
  std::size_t total = 0;
  for (const auto& ex : batch) total += ex.target.size();
  if (total == 0) return 0.0;
  double loss = 0.0;
  for (const auto& ex : batch) {
    if (ex.target.empty()) continue;
    TokenSeq seq = ex.prompt;
    seq.insert(seq.end(), ex.target.begin(), ex.target.end() - 1);
    ad::Tape tape;
    const ForwardGraph g = record_forward(tape, params, grads, seq, ex.prompt.size() - 1, ex.target);
    const Matrix& lp = tape.value(g.logprobs);
    loss -= lp.sum();
    if (grads != nullptr) {
      const std::pair<Var, Matrix> seed{g.logprobs, Matrix::Constant(lp.rows(), 1, -1.0 / static_cast<double>(total))};
      tape.backward(std::span(&seed, 1));
    }
  }
  return loss / static_cast<double>(total);
}

namespace {

// Shuffled minibatch Adam loop shared by pretraining and SFT.
template <typename Item, typename LossFn>
TrainResult run_epochs(PolicyParams params, const std::vector<Item>& items, const TrainConfig& config,
                       const std::string& stage, LossFn loss_fn, const EpochCallback& on_epoch) {
  if (items.empty()) throw Error(stage + " needs at least one training sequence");
  if (config.batch_size == 0) throw Error("batch_size must be positive");
  TrainResult result;
  Adam adam;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Item> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(items[order[i]]);
      }
      std::vector<Matrix> grads = params.zeros_like();
      const double loss = loss_fn(params, std::span<const Item>(batch), &grads);
      check_finite_loss(loss, stage, epoch);
      adam.step(params.tensors(), grads, config.learning_rate, config.clip_norm);
      if (!params.all_finite()) {
        throw Error(ErrorKind::kTrainingAbort, stage + " diverged: non-finite parameters in epoch " +
                                                   std::to_string(epoch));
      }
      epoch_loss += loss;
      ++batches;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  result.params = std::move(params);
  return result;
}

}  // namespace

TrainResult pretrain_from(const PolicyParams& init, const Corpus& corpus, const TrainConfig& config,
                          const EpochCallback& on_epoch) {
  if (corpus.empty()) throw Error("pretraining corpus is empty");
  const std::size_t cap = init.descriptor().context + 1;
  std::vector<TokenSeq> seqs;
  for (const auto& doc : corpus) {
    TokenSeq s = doc.tokens;
    s.push_back(TokenizerSpec::kEos);
    if (s.size() > cap) s.resize(cap);
    seqs.push_back(std::move(s));
  }
  TrainResult r = run_epochs(init, seqs, config, "pretraining", lm_loss, on_epoch);
  r.params.version = init.version + "+pretrain";
  return r;
}

TrainResult pretrain(const Corpus& corpus, const TrainConfig& config, const EpochCallback& on_epoch) {
  return pretrain_from(PolicyParams::init(config.model, config.seed), corpus, config, on_epoch);
}

std::vector<SftExample> prepare_sft(const std::vector<SftPair>& pairs, const PromptTemplate& tmpl,
                                    const TokenizerSpec& tokenizer, const PromptBudget& budget) {
  std::vector<SftExample> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    SftExample ex;
    ex.doc_id = pair.doc.id;
    try {
      ex.prompt = assemble_prompt(tmpl, pair.doc, tokenizer, budget);
    } catch (const Error& e) {
      throw Error("SFT pair '" + pair.doc.id + "': " + e.what());
    }
    ex.target = tokenizer.encode(pair.response);
    if (!ex.target.empty()) ex.target.push_back(TokenizerSpec::kEos);
    if (ex.prompt.size() + ex.target.size() > budget.context) {
      throw Error("SFT pair '" + pair.doc.id + "' overflows the context by " +
                  std::to_string(ex.prompt.size() + ex.target.size() - budget.context) + " tokens");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

TrainResult sft(const PolicyParams& init, const std::vector<SftExample>& examples, const TrainConfig& config,
                const EpochCallback& on_epoch) {
  for (const auto& ex : examples) {
    if (ex.prompt.size() + ex.target.size() > init.descriptor().context) {
      throw Error("SFT pair '" + ex.doc_id + "' overflows the model context");
    }
  }
  TrainResult r = run_epochs(init, examples, config, "sft", sft_loss, on_epoch);
  r.params.version = init.version + "+sft";
  return r;
}

}  // namespace rlcf
