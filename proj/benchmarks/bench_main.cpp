#include <benchmark/benchmark.h>

#include <random>

#include "oracles.hpp"
#include "rlcf/metrics.hpp"
#include "rlcf/policy.hpp"
#include "rlcf/retriever.hpp"
#include "rlcf/transformer.hpp"

namespace {

using namespace rlcf;

void BM_BuildGroups(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto corpus = oracle::random_corpus(n, 2000, 200, rng);
  const RetrieverModel model(2000, 256, 0);
  for (auto _ : state) benchmark::DoNotOptimize(build_groups(corpus, 5, model));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BuildGroups)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

void BM_Embed(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto corpus = oracle::random_corpus(1, 2000, 512, rng);
  const RetrieverModel model(2000, 256, 0);
  for (auto _ : state) benchmark::DoNotOptimize(embed(corpus.documents().front(), model));
}
BENCHMARK(BM_Embed);

ModelDescriptor descriptor(std::size_t width) {
  ModelDescriptor md;
  md.width = width;
  md.heads = 4;
  md.vocab = 500;
  md.context = 256;
  return md;
}

void BM_Forward(benchmark::State& state) {
  const auto params = PolicyParams::init(descriptor(static_cast<std::size_t>(state.range(0))), 0);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<TokenId> tok(4, 499);
  TokenSeq tokens(128);
  for (auto& t : tokens) t = tok(rng);
  for (auto _ : state) benchmark::DoNotOptimize(position_log_distributions(params, tokens, 0, tokens.size()));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128);

void BM_Generate(benchmark::State& state) {
  const auto params = PolicyParams::init(descriptor(128), 0);
  TokenSeq prompt(64, 7);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate(params, prompt, DecodeMode::sampled(1.0, seed++), 32));
}
BENCHMARK(BM_Generate);

void BM_Metrics(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto inst = oracle::random_ir_instance(rng, 1000, 100);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mrr_at_k(inst.run, inst.qrels, 10));
    benchmark::DoNotOptimize(recall_at_k(inst.run, inst.qrels, 100));
    benchmark::DoNotOptimize(ndcg_at_k(inst.run, inst.qrels, 10));
  }
}
BENCHMARK(BM_Metrics);

}  // namespace

BENCHMARK_MAIN();
