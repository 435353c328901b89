#include <fstream>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "rlcf/error.hpp"
#include "rlcf/rlcf.hpp"
#include "scenarios.hpp"

using namespace rlcf;

TEST_CASE("batched_mrr and full_reward examples") {
  CHECK(batched_mrr(1) == 1.0);
  CHECK(batched_mrr(2) == 0.5);
  CHECK(batched_mrr(4) == 0.25);
  CHECK_THROWS_AS(batched_mrr(0), Error);
  CHECK(full_reward(0.5, -3.0, -1.0, 0.0) == 0.5);
  CHECK(full_reward(0.5, -2.5, -2.5, 7.0) == 0.5);
  CHECK(full_reward(1.0, 0.0, -2.0, 0.1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(full_reward(1.0, NAN, 0.0, 0.1), Error);
  CHECK_THROWS_AS(full_reward(1.0, 0.0, INFINITY, 0.1), Error);
}

TEST_CASE("reward identity holds exactly on random records") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-20.0, 0.0), b(0.0, 2.0);
  std::uniform_int_distribution<std::size_t> rank(1, 8);
  for (int i = 0; i < 1000; ++i) {
    const double lp = u(rng), lr = u(rng), beta = b(rng);
    const double m = batched_mrr(rank(rng));
    const double kl = lp - lr;
    CHECK(full_reward(m, lp, lr, beta) - (m - beta * kl) == 0.0);
  }
}

TEST_CASE("config text") {
  const auto c = parse_rlcf_config("beta = 0.1 # comment\nK=5\n\nppo_epochs = 2\n");
  CHECK(c.beta == 0.1);
  CHECK(c.K == 5);
  CHECK(c.ppo_epochs == 2);
  CHECK(parse_rlcf_config(c.to_text()).to_text() == c.to_text());
  CHECK_THROWS_AS(parse_rlcf_config("bogus = 1"), Error);
  CHECK_THROWS_AS(parse_rlcf_config("beta = abc"), Error);
  CHECK_THROWS_AS(parse_rlcf_config("K = 0"), Error);
  CHECK_THROWS_AS(parse_rlcf_config("clip_epsilon = -1"), Error);
}

TEST_CASE("advantages put the terminal reward on the last token") {
  RolloutSequence s;
  s.values = {0.0, 0.0, 0.0};
  compute_advantages(s, 1.0, 1.0, 1.0);
  CHECK(s.advantages == std::vector<double>{1.0, 1.0, 1.0});
  s.values = {0.5, 0.25, 0.1};
  compute_advantages(s, 1.0, 1.0, 0.0);
  CHECK(s.advantages[2] == doctest::Approx(0.9));
  CHECK(s.advantages[1] == doctest::Approx(0.1 - 0.25));
  CHECK(s.returns[1] == doctest::Approx(0.1));
}

TEST_CASE("rollout records recompute exactly") {
  scenario::Bandit b(3);
  b.config.max_response_length = 3;
  b.config.beta = 0.3;
  const auto ctx = b.context();
  auto policy = oracle::jitter(b.init, 0.3, 5);
  const auto vh = ValueHead::zeros(16);
  const auto r1 = rollout_group(b.groups[0], policy, b.init, vh, ctx, b.config, 11);
  const auto r2 = rollout_group(b.groups[0], policy, b.init, vh, ctx, b.config, 11);
  REQUIRE(r1.sequences.size() == b.groups[0].batch_size());
  const auto members = b.groups[0].members();
  std::vector<const Document*> docs;
  for (const auto& id : members) docs.push_back(&b.corpus.at(id));
  for (std::size_t j = 0; j < r1.sequences.size(); ++j) {
    const auto& s = r1.sequences[j];
    CHECK(s.doc_id == members[j]);
    CHECK(s.response.tokens == r2.sequences[j].response.tokens);
    const auto content = s.response.content();
    const std::size_t rank = content.empty() ? members.size() : rank_in_batch(content, docs, j, b.retriever);
    CHECK(s.reward.rank == rank);
    const double lp = std::accumulate(s.old_logprobs.begin(), s.old_logprobs.end(), 0.0);
    const auto ref = logprob(b.init, s.prompt, s.response.tokens);
    const double lr = std::accumulate(ref.begin(), ref.end(), 0.0);
    CHECK(s.reward.kl_term == lp - lr);
    CHECK(s.reward.batched_mrr == 1.0 / static_cast<double>(rank));
    CHECK(s.reward.full_reward - (s.reward.batched_mrr - 0.3 * s.reward.kl_term) == 0.0);
    const auto again = logprob(policy, s.prompt, s.response.tokens);
    for (std::size_t t = 0; t < again.size(); ++t) CHECK(std::abs(again[t] - s.old_logprobs[t]) < 1e-9);
  }
}

TEST_CASE("copying responses in a token-disjoint group all rank first") {
  scenario::Bandit b(0);
  for (std::size_t j = 0; j < b.corpus.size(); ++j) {
    const auto opt = b.optimal_tokens(j);
    CHECK(std::find(opt.begin(), opt.end(), b.corpus[j].tokens.front()) != opt.end());
  }
  // With beta = 0 a copied response earns the full reward.
  const auto members = b.groups[0].members();
  std::vector<const Document*> docs;
  for (const auto& id : members) docs.push_back(&b.corpus.at(id));
  for (std::size_t j = 0; j < docs.size(); ++j) {
    CHECK(full_reward(batched_mrr(rank_in_batch(docs[j]->tokens, docs, j, b.retriever)), -1.0, -2.0, 0.0) == 1.0);
  }
}

TEST_CASE("ppo_step no-ops") {
  scenario::Bandit b(1);
  b.config.max_response_length = 2;
  const auto ctx = b.context();
  auto vh = ValueHead::zeros(16);
  const auto roll = rollout_group(b.groups[0], b.init, b.init, vh, ctx, b.config, 3);

  auto cfg = b.config;
  cfg.ppo_epochs = 0;
  auto p = b.init;
  PpoOptimizer opt;
  ppo_step(p, vh, std::span(&roll, 1), cfg, opt);
  CHECK(p.hash() == b.init.hash());

  auto zero = roll;
  for (auto& s : zero.sequences) std::fill(s.advantages.begin(), s.advantages.end(), 0.0);
  cfg = b.config;
  cfg.normalize_advantages = false;
  auto p2 = b.init;
  auto vh2 = ValueHead::zeros(16);
  PpoOptimizer opt2;
  const auto st = ppo_step(p2, vh2, std::span(&zero, 1), cfg, opt2);
  CHECK(p2.hash() == b.init.hash());
  CHECK(st.value_loss > 0.0);
  CHECK((vh2.bias != 0.0 || !vh2.weight.isZero()));
}

TEST_CASE("train bookkeeping, frozen reference and resume") {
  scenario::Bandit b(2);
  b.config.total_steps = 6;
  b.config.checkpoint_interval = 3;
  const auto ctx = b.context();
  std::vector<RlcfState> snaps;
  std::size_t rows = 0;
  TrainHooks hooks{[&](const TrainLogRow&) { ++rows; }, [&](const RlcfState& s) { snaps.push_back(s); }};
  const auto full = train(b.groups, b.init, ctx, b.config, std::nullopt, hooks);
  CHECK(full.log.size() == 6);
  CHECK(rows == 6);
  CHECK(full.reference_hash_start == full.reference_hash_end);
  CHECK(full.reference_hash_start == b.init.hash());
  REQUIRE(snaps.size() == 2);
  CHECK(snaps[0].step == 3);

  const auto dir = std::filesystem::temp_directory_path() / "rlcf_unit_state";
  std::filesystem::remove_all(dir);
  save_rlcf_state(dir, snaps[0], b.tokenizer, {2});
  auto loaded = load_rlcf_state(dir, &b.tokenizer);
  CHECK(loaded.step == 3);
  CHECK(loaded.policy.hash() == snaps[0].policy.hash());
  const auto resumed = train(b.groups, b.init, ctx, b.config, std::move(loaded));
  CHECK(resumed.log.size() == 3);
  CHECK(resumed.state.policy.hash() == full.state.policy.hash());
  CHECK(resumed.state.value_head.weight == full.state.value_head.weight);

  const auto path = dir / "log.jsonl";
  {
    std::ofstream out(path);
    for (const auto& r : full.log) out << to_jsonl(r) << "\n";
  }
  const auto back = load_training_log(path);
  REQUIRE(back.size() == 6);
  CHECK(back[4].mean_kl == full.log[4].mean_kl);
}

TEST_CASE("fixed-reward bandit converges to the rewarded token") {
  scenario::FixedBandit b(0);
  CHECK(b.probability_a() < 0.3);
  for (std::size_t t = 0; t < 200; ++t) b.step(t);
  CHECK(b.probability_a() > 0.9);
}

TEST_CASE("KL is zero for identical policies") {
  scenario::Bandit b(0);
  CHECK(mean_kl_to_reference(b.init, b.init, {b.prompt(0), b.prompt(1)}, 3, 1.0, 0) == 0.0);
}
