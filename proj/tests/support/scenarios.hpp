// Small end-to-end training setups shared by unit and acceptance tests.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rlcf/corpus.hpp"
#include "rlcf/policy.hpp"
#include "rlcf/retriever.hpp"
#include "rlcf/rlcf.hpp"
#include "rlcf/synth.hpp"

namespace scenario {

// Four one-word documents in one group with one-token responses. The optimal
// responses of a document are the tokens that rank it first in its batch,
// found by trying every token; copying its own word is always among them.
struct Bandit {
  rlcf::TokenizerSpec tokenizer;
  rlcf::Corpus corpus;
  rlcf::RetrieverModel retriever{1, 1, 0};
  rlcf::PromptTemplate tmpl{"summarize", "copy", {}};
  std::vector<rlcf::SimilarGroup> groups;
  rlcf::PolicyParams init;
  rlcf::RlcfConfig config;

  explicit Bandit(std::uint64_t seed) {
    const std::vector<rlcf::CorpusRecord> recs{{"a", "alpha"}, {"b", "bravo"}, {"c", "charlie"}, {"d", "delta"}};
    tokenizer = rlcf::TokenizerSpec::build({"copy alpha bravo charlie delta"}, rlcf::TokenScheme::kWhitespaceWord);
    corpus = rlcf::make_corpus(recs, tokenizer);
    retriever = rlcf::RetrieverModel(tokenizer.size(), 64, seed);
    groups = rlcf::build_groups(corpus, 3, retriever);
    rlcf::ModelDescriptor d;
    d.layers = 1;
    d.width = 16;
    d.heads = 2;
    d.vocab = tokenizer.size();
    d.context = 8;
    init = rlcf::PolicyParams::init(d, seed);
    config.beta = 0.0;
    config.K = 3;
    config.max_response_length = 1;
    config.learning_rate = 3e-3;
    config.total_steps = 200;
    config.seed = seed;
  }

  rlcf::RolloutContext context() const { return {corpus, tokenizer, retriever, tmpl, 8}; }

  rlcf::TokenSeq prompt(std::size_t i) const {
    return rlcf::assemble_prompt(tmpl, corpus[i], tokenizer, rlcf::PromptBudget{8, 1});
  }

  std::vector<rlcf::TokenId> optimal_tokens(std::size_t i) const {
    std::vector<const rlcf::Document*> docs;
    for (const auto& d : corpus) docs.push_back(&d);
    std::vector<rlcf::TokenId> out;
    for (rlcf::TokenId v = 0; v < static_cast<rlcf::TokenId>(tokenizer.size()); ++v) {
      if (v == rlcf::TokenizerSpec::kEos) continue;
      const rlcf::TokenSeq r{v};
      if (rlcf::rank_in_batch(r, docs, i, retriever) == 1) out.push_back(v);
    }
    return out;
  }
};

// A pretrained policy on a tiny stock-report corpus used as the reference of
// RLCF runs that differ only in beta.
struct KlPair {
  rlcf::TokenizerSpec tokenizer;
  rlcf::Corpus train;
  rlcf::Corpus heldout;
  rlcf::RetrieverModel retriever{1, 1, 0};
  rlcf::PromptTemplate tmpl{"summarize", "write a one line headline for the report", {}};
  std::vector<rlcf::SimilarGroup> groups;
  rlcf::PolicyParams reference;
  std::size_t context = 96;

  explicit KlPair(std::uint64_t seed) {
    const auto s = rlcf::synth_corpus("stock-report", 6, 4, seed);
    std::vector<std::string> texts{tmpl.instruction};
    for (const auto& r : s.records) texts.push_back(r.text);
    tokenizer = rlcf::TokenizerSpec::build(texts, rlcf::TokenScheme::kWhitespaceWord);
    const auto all = rlcf::make_corpus(s.records, tokenizer);
    std::vector<rlcf::Document> a(all.begin(), all.begin() + 16), b(all.begin() + 16, all.end());
    train = rlcf::Corpus(a);
    heldout = rlcf::Corpus(b);
    retriever = rlcf::RetrieverModel(tokenizer.size(), 64, seed);
    groups = rlcf::build_groups(train, 3, retriever);
    rlcf::TrainConfig tc;
    tc.model.layers = 1;
    tc.model.width = 32;
    tc.model.heads = 2;
    tc.model.vocab = tokenizer.size();
    tc.model.context = context;
    tc.epochs = 4;
    tc.learning_rate = 3e-3;
    tc.seed = seed;
    reference = rlcf::pretrain(all, tc).params;
  }

  rlcf::RlcfConfig config(double beta, std::uint64_t seed) const {
    rlcf::RlcfConfig c;
    c.beta = beta;
    c.max_response_length = 6;
    c.learning_rate = 1e-3;
    c.total_steps = 300;
    c.seed = seed;
    return c;
  }

  double kl_after(const rlcf::RlcfConfig& c) const {
    const rlcf::RolloutContext ctx{train, tokenizer, retriever, tmpl, context};
    const auto r = rlcf::train(groups, reference, ctx, c);
    std::vector<rlcf::TokenSeq> prompts;
    for (const auto& d : heldout) {
      prompts.push_back(rlcf::assemble_prompt(tmpl, d, tokenizer, rlcf::PromptBudget{context, c.max_response_length}));
    }
    return rlcf::mean_kl_to_reference(r.state.policy, reference, prompts, c.max_response_length, 1.0, 99);
  }
};

// Single-token responses to one fixed prompt; reward 1 for token a and 0
// otherwise, so the optimum is P(a) = 1.
struct FixedBandit {
  static constexpr rlcf::TokenId kA = 5;
  rlcf::PolicyParams policy;
  rlcf::ValueHead value_head;
  rlcf::PpoOptimizer optimizer;
  rlcf::RlcfConfig config;
  rlcf::TokenSeq prompt{4, rlcf::TokenizerSpec::kSep, 6, rlcf::TokenizerSpec::kResp};
  std::size_t samples_per_step = 8;

  explicit FixedBandit(std::uint64_t seed) {
    rlcf::ModelDescriptor d;
    d.layers = 1;
    d.width = 16;
    d.heads = 2;
    d.vocab = 9;
    d.context = 8;
    policy = rlcf::PolicyParams::init(d, seed);
    value_head = rlcf::ValueHead::zeros(d.width);
    config.beta = 0.0;
    config.max_response_length = 1;
    config.seed = seed;
  }

  double probability_a() const {
    const auto dist = rlcf::position_log_distributions(policy, prompt, prompt.size() - 1, 1);
    return std::exp(dist(0, kA));
  }

  void step(std::size_t t) {
    rlcf::RolloutBatch batch;
    for (std::size_t i = 0; i < samples_per_step; ++i) {
      rlcf::RolloutSequence s;
      s.doc_id = "s" + std::to_string(i);
      s.prompt = prompt;
      s.response = rlcf::generate(policy, prompt,
                                  rlcf::DecodeMode::sampled(1.0, rlcf::mix_seed(config.seed, t * 1000 + i)), 1);
      auto scores = rlcf::score_sequence(policy, value_head, prompt, s.response.tokens);
      s.old_logprobs = scores.logprobs;
      s.ref_logprobs = scores.logprobs;
      s.values = scores.values;
      const double r = s.response.tokens.front() == kA ? 1.0 : 0.0;
      s.reward.doc_id = s.doc_id;
      s.reward.rank = r > 0.0 ? 1 : 2;
      s.reward.batched_mrr = r;
      s.reward.full_reward = rlcf::full_reward(r, s.old_logprobs[0], s.ref_logprobs[0], config.beta);
      rlcf::compute_advantages(s, s.reward.full_reward, config.gamma, config.gae_lambda);
      batch.sequences.push_back(std::move(s));
    }
    rlcf::ppo_step(policy, value_head, std::span(&batch, 1), config, optimizer, rlcf::mix_seed(config.seed, t));
  }
};

}  // namespace scenario
