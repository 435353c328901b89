// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// if any selected criterion fails.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "rlcf/augmentation.hpp"
#include "rlcf/error.hpp"
#include "rlcf/metrics.hpp"
#include "rlcf/pipeline.hpp"
#include "rlcf/policy.hpp"
#include "rlcf/rlcf.hpp"
#include "scenarios.hpp"

namespace fs = std::filesystem;
using namespace rlcf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void set_keys(RunConfig& c, const std::vector<std::pair<std::string, std::string>>& kv, const fs::path& base) {
  for (const auto& [k, v] : kv) {
    if (!set_run_key(c, k, v, base)) throw Error(ErrorKind::kConfig, "unknown key " + k);
  }
}

// Relative error with a floor for entries where both values are numerically zero.
bool grad_close(double analytic, double numeric, double rel) {
  return std::abs(analytic - numeric) <= rel * std::max(std::abs(analytic), std::abs(numeric)) + 1e-9;
}

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::size_t skip_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = oracle::random_ir_instance(rng, 1 + trial % 7, 20);
    for (std::size_t k : {1, 3, 5, 10, 20}) {
      worst = std::max(worst, std::abs(mrr_at_k(inst.run, inst.qrels, k) - oracle::mrr(inst.run, inst.qrels, k)));
      worst = std::max(worst, std::abs(recall_at_k(inst.run, inst.qrels, k) - oracle::recall(inst.run, inst.qrels, k)));
      std::size_t a = 0, b = 0;
      worst = std::max(worst, std::abs(ndcg_at_k(inst.run, inst.qrels, k, &a) - oracle::ndcg(inst.run, inst.qrels, k, &b)));
      skip_mismatch += a != b;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && skip_mismatch == 0 && secs < 10.0,
          "200 instances, max |diff| " + num(worst) + ", skip-count mismatches " + std::to_string(skip_mismatch) +
              ", " + num(secs, 3) + " s (limit 10 s)"};
}

Outcome group_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  std::size_t mismatches = 0, largest = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = trial == 0 ? 200 : std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    const std::size_t vocab = std::uniform_int_distribution<std::size_t>(5, 300)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    const auto corpus = oracle::random_corpus(n, vocab, 40, rng);
    const RetrieverModel m(vocab, 64, static_cast<std::uint64_t>(trial));
    mismatches += !oracle::same_groups(build_groups(corpus, k, m), oracle::all_pairs_groups(corpus, k, m));
    largest = std::max(largest, n);
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30.0, "20 corpora up to " + std::to_string(largest) + " docs, " +
                                              std::to_string(mismatches) + " mismatches, " + num(secs, 3) +
                                              " s (limit 30 s)"};
}

Outcome reward_exactness() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> beta(0.0, 1.0);
  std::size_t records = 0, nonzero = 0, off_grid = 0;
  std::set<std::size_t> ranks;
  for (std::uint64_t i = 0; records < 1000; ++i) {
    scenario::Bandit b(i % 5);
    b.config.max_response_length = 3;
    b.config.beta = beta(rng);
    const auto policy = oracle::jitter(b.init, 0.5, i);
    const auto batch = rollout_group(b.groups[i % b.groups.size()], policy, b.init, ValueHead::zeros(16), b.context(),
                                     b.config, i);
    const std::size_t B = batch.group.batch_size();
    for (const auto& s : batch.sequences) {
      const auto& r = s.reward;
      nonzero += r.full_reward - (r.batched_mrr - b.config.beta * r.kl_term) != 0.0;
      bool on_grid = false;
      for (std::size_t k = 1; k <= B; ++k) on_grid = on_grid || r.batched_mrr == 1.0 / static_cast<double>(k);
      off_grid += !on_grid;
      ranks.insert(r.rank);
      ++records;
    }
  }
  return {nonzero == 0 && off_grid == 0, std::to_string(records) + " records from rollouts, " + std::to_string(nonzero) +
                                             " nonzero residuals, " + std::to_string(off_grid) + " off-grid, " +
                                             std::to_string(ranks.size()) + " distinct ranks seen"};
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  std::size_t checked = 0, bad = 0, tiny = 0;
  double worst = 0.0;
  auto record = [&](double an, double fd) {
    ++checked;
    if (!grad_close(an, fd, 1e-4)) ++bad;
    const double scale = std::max(std::abs(an), std::abs(fd));
    if (scale > 1e-5) {
      worst = std::max(worst, std::abs(an - fd) / scale);
    } else {
      ++tiny;
    }
  };
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    std::mt19937_64 rng(inst);
    auto e = DualEncoderParams::init(10, 4, inst);
    e.table *= 3.0;
    const std::size_t bsz = 2 + inst % 3;
    std::uniform_int_distribution<TokenId> tok(0, 9);
    std::vector<TokenSeq> q(bsz), d(bsz);
    for (std::size_t i = 0; i < bsz; ++i) {
      for (std::size_t j = 0; j < 1 + inst % 3; ++j) q[i].push_back(tok(rng));
      for (std::size_t j = 0; j < 2 + i % 2; ++j) d[i].push_back(tok(rng));
    }
    const auto r = contrastive_loss(q, d, e);
    for (Eigen::Index i = 0; i < e.table.size(); ++i) {
      record(r.grad.data()[i],
             oracle::central_diff([&] { return contrastive_loss(q, d, e, false).loss; }, e.table.data()[i]));
    }
  }
  const auto tok = TokenizerSpec::build({"do it a b c d e f g h x y z"}, TokenScheme::kWhitespaceWord);
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    std::mt19937_64 rng(1000 + inst);
    ModelDescriptor md;
    md.layers = 1 + inst % 2;
    md.width = 8;
    md.heads = 2;
    md.vocab = tok.size();
    md.context = 24;
    auto p = oracle::jitter(PolicyParams::init(md, inst), 0.4, inst + 7);
    std::uniform_int_distribution<int> w(0, 7);
    const char* words[] = {"a", "b", "c", "d", "e", "f", "g", "h"};
    std::vector<SftPair> pairs;
    for (int i = 0; i < 2; ++i) {
      std::string doc_text, resp;
      for (int j = 0; j < 3; ++j) doc_text += std::string(words[w(rng)]) + " ";
      for (int j = 0; j <= i; ++j) resp += std::string(words[w(rng)]) + " ";
      pairs.push_back({Document{"p" + std::to_string(i), doc_text, tok.encode(doc_text)}, resp});
    }
    const auto ex = prepare_sft(pairs, PromptTemplate{"summarize", "do it", {}}, tok, PromptBudget{24, 4});
    auto grads = p.zeros_like();
    sft_loss(p, ex, &grads);
    for (int probe = 0; probe < 24; ++probe) {
      const auto ti = std::uniform_int_distribution<std::size_t>(0, p.tensors().size() - 1)(rng);
      auto& t = p.tensors()[ti];
      const auto ei = std::uniform_int_distribution<Eigen::Index>(0, t.size() - 1)(rng);
      record(grads[ti].data()[ei], oracle::central_diff([&] { return sft_loss(p, ex, nullptr); }, t.data()[ei]));
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 120.0, std::to_string(checked) + " entries over 50 contrastive + 50 SFT instances, " +
                                        std::to_string(bad) +  " over 1e-4, worst rel err " + num(worst, 3) + " where |g| > 1e-5 (" +
                                        std::to_string(tiny) + " smaller entries under a 1e-9 absolute floor), " +
                                        num(secs, 3) + " s (limit 120 s)"};
}

Outcome bandit() {
  const auto t0 = Clock::now();
  std::size_t ok = 0;
  std::string probs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    scenario::FixedBandit b(seed);
    for (std::size_t t = 0; t < 200; ++t) b.step(t);
    const double p = b.probability_a();
    ok += p > 0.9;
    probs += (seed ? ", " : "") + num(p);
  }
  const double secs = seconds_since(t0);
  return {ok == 3 && secs < 120.0, "P(optimal) after 200 steps: " + probs + " (" + std::to_string(ok) + "/3 > 0.9), " +
                                       num(secs, 3) + " s (limit 120 s)"};
}

Outcome kl_penalty() {
  std::size_t ok = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    scenario::KlPair k(seed);
    const double free = k.kl_after(k.config(0.0, seed));
    const double held = k.kl_after(k.config(100.0, seed));
    ok += held < free;
    detail += (seed ? ", " : "") + std::string("seed ") + std::to_string(seed) + " " + num(free) + " vs " + num(held);
  }
  return {ok == 3, "final KL beta 0 vs 100: " + detail + " (" + std::to_string(ok) + "/3 lower)"};
}

// Synthetic stock-report inputs and the training recipe shared by the RLCF runs.
RunConfig recipe(const fs::path& dir, const std::string& task, const std::string& seeds) {
  SynthOptions o;
  o.groups = 200;
  o.width = 4;
  o.seed = 7;
  o.template_examples = 0;
  cmd_synth(o, dir);
  RunConfig c = load_run_config(dir / "rlcf.conf");
  set_keys(c,
           {{"task", task},
            {"seeds", seeds},
            {"model.width", "128"},
            {"model.heads", "4"},
            {"model.layers", "2"},
            {"model.context", "128"},
            {"pretrain.epochs", "3"},
            {"sft.epochs", "4"},
            {"rlcf.beta", "0.2"},
            {"rlcf.groups_per_step", "2"},
            {"rlcf.total_steps", "300"}},
           dir);
  return c;
}

Outcome directional_rlcf(const fs::path& work) {
  const auto t0 = Clock::now();
  const RunConfig c = recipe(fresh(work / "c7"), "summarize", "0,1,2");
  CommandOptions opt;
  opt.log = &std::cerr;
  cmd_build_groups(c, opt);
  cmd_train(c, opt);
  CommandOptions ev = opt;
  ev.checkpoints = {c.out / "seed-{seed}" / "reference"};
  const auto sft = cmd_eval(c, ev);
  ev.checkpoints = {c.out / "seed-{seed}" / "final"};
  const auto rl = cmd_eval(c, ev);
  const double secs = seconds_since(t0);
  const double d_mrr = rl.metrics.at("batched_mrr").mean - sft.metrics.at("batched_mrr").mean;
  const double d_rd = rl.metrics.at("rouge_diff").mean - sft.metrics.at("rouge_diff").mean;
  return {d_mrr >= 0.05 && d_rd > 0.0 && secs <= 1800.0,
          "held-out Batched-MRR " + num(sft.metrics.at("batched_mrr").mean) + " -> " +
              num(rl.metrics.at("batched_mrr").mean) + " (delta " + num(d_mrr) + ", need >= 0.05), Rouge-diff " +
              num(sft.metrics.at("rouge_diff").mean) + " -> " + num(rl.metrics.at("rouge_diff").mean) + " (delta " +
              num(d_rd) + ", need > 0), 3 seeds, " + num(secs / 60.0, 3) + " min on " +
              std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " core(s) (limit 30 min)"};
}

Outcome directional_augmentation(const fs::path& work) {
  const auto t0 = Clock::now();
  RunConfig c = recipe(fresh(work / "c8"), "query", "0");
  CommandOptions opt;
  opt.log = &std::cerr;
  cmd_build_groups(c, opt);
  cmd_train(c, opt);
  c.seeds = {0, 1, 2};
  const fs::path vanilla = c.out / "seed-0" / "reference", tuned = c.out / "seed-0" / "final";
  CommandOptions cmp = opt;
  cmp.checkpoints = {vanilla, tuned};
  const auto r = cmd_compare_augmentation(c, cmp);
  cmp.checkpoints = {tuned, tuned};
  const auto control = cmd_compare_augmentation(c, cmp);
  const double secs = seconds_since(t0);
  std::size_t nonzero = 0;
  for (const auto& [name, m] : control.metrics) {
    if (name.rfind("delta.", 0) != 0) continue;
    nonzero += m.mean != 0.0;
    for (const auto& v : m.per_seed) nonzero += !v || *v != 0.0;
  }
  const double van = r.metrics.at("vanilla.mrr_at_10").mean, rl = r.metrics.at("rlcf.mrr_at_10").mean;
  return {rl >= van && nonzero == 0 && secs <= 900.0,
          "MRR@10 vanilla " + num(van) + " vs RLCF queries " + num(rl) + " over 3 seeds, control nonzero deltas " +
              std::to_string(nonzero) + ", " + num(secs / 60.0, 3) + " min (limit 15 min)"};
}

Outcome rouge_edges() {
  const auto tok = TokenizerSpec::build({"a b c d x"}, TokenScheme::kWhitespaceWord);
  auto doc = [&](const std::string& id, const std::string& t) { return Document{id, t, tok.encode(t)}; };
  const auto anchor = doc("d", "a b c d"), n1 = doc("n1", "b"), n2 = doc("n2", "c");
  const auto hand = rouge_diff(anchor, {&n1, &n2}, "a x", tok);
  const auto sub = doc("s", "b c");
  const auto undefined = rouge_diff(sub, {&n1, &n2}, "b c", tok);
  const auto report = aggregate_report({{"rouge_diff", {hand, undefined, 1.0}}});
  const auto& m = report.metrics.at("rouge_diff");
  const bool pass = hand && *hand == 0.5 && !undefined && m.mean == 0.75 && m.undefined_count == 1u;
  return {pass, "hand example " + (hand ? num(*hand) : std::string("undefined")) + " (want 0.5), subset case " +
                    (undefined ? num(*undefined) : std::string("undefined")) + ", aggregate mean " + num(m.mean) +
                    " with undefined_count " + std::to_string(m.undefined_count.value_or(0))};
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = fresh(work / "c10");
  SynthOptions o;
  o.groups = 30;
  o.seed = 11;
  o.template_examples = 0;
  cmd_synth(o, dir);
  RunConfig c = load_run_config(dir / "rlcf.conf");
  set_keys(c,
           {{"seeds", "0,1"},
            {"model.layers", "1"},
            {"model.width", "32"},
            {"model.heads", "2"},
            {"model.context", "96"},
            {"pretrain.epochs", "1"},
            {"sft.epochs", "2"},
            {"rlcf.total_steps", "5"}},
           dir);
  cmd_build_groups(c);
  const std::string groups1 = slurp(groups_path(c));
  cmd_build_groups(c);
  const std::string groups2 = slurp(groups_path(c));
  RunConfig other = c;
  other.out = dir / "run-b";
  cmd_build_groups(other);
  const std::string groups3 = slurp(groups_path(other));

  cmd_train(c);
  CommandOptions ev;
  ev.checkpoints = {c.out / "seed-{seed}" / "final"};
  cmd_eval(c, ev);
  const std::string report1 = slurp(c.out / "eval_report.json"), resp1 = slurp(c.out / "eval_responses.jsonl");
  cmd_eval(c, ev);
  const std::string report2 = slurp(c.out / "eval_report.json"), resp2 = slurp(c.out / "eval_responses.jsonl");
  const bool same_groups = groups1 == groups2 && groups1 == groups3;
  const bool same_eval = report1 == report2 && resp1 == resp2;
  return {same_groups && same_eval && !groups1.empty() && !report1.empty(),
          std::string("groups.jsonl ") + (same_groups ? "identical" : "DIFFERS") + " across 3 builds (" +
              std::to_string(groups1.size()) + " bytes), eval_report.json and eval_responses.jsonl " +
              (same_eval ? "identical" : "DIFFER") + " across 2 evals"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RLCF acceptance suite"};
  fs::path workdir = fs::temp_directory_path() / "rlcf-acceptance";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory for pipeline runs");
  app.add_option("--only", only, "Run only these criteria (1-10)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", metric_oracle},
      {"group construction oracle", group_oracle},
      {"reward exactness", reward_exactness},
      {"gradient checks", gradient_checks},
      {"PPO bandit sanity", bandit},
      {"KL penalty efficacy", kl_penalty},
      {"directional RLCF effect", [&] { return directional_rlcf(workdir); }},
      {"directional augmentation effect", [&] { return directional_augmentation(workdir); }},
      {"Rouge-diff edge behavior", rouge_edges},
      {"determinism", [&] { return determinism(workdir); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    failures += !out.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): " << (out.pass ? "PASS" : "FAIL") << ": "
              << out.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
