#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "rlcf/error.hpp"
#include "rlcf/retriever.hpp"

using namespace rlcf;

namespace {

Embedding vec(std::initializer_list<double> v) {
  Embedding e;
  e.values = Eigen::Map<const Eigen::VectorXd>(v.begin(), static_cast<Eigen::Index>(v.size()));
  return e;
}

}  // namespace

TEST_CASE("token table is seeded and frozen") {
  const RetrieverModel a(20, 8, 3), b(20, 8, 3), c(20, 8, 4);
  CHECK(a.token_table() == b.token_table());
  CHECK(a.token_table() != c.token_table());
  CHECK(a.token_table().allFinite());
  CHECK_THROWS_AS(RetrieverModel(20, 0, 0), Error);
}

TEST_CASE("embed examples") {
  const RetrieverModel m(10, 16, 1);
  const TokenSeq one{4}, twice{4, 4};
  CHECK(embed(one, m).values == Eigen::VectorXd(m.token_table().row(4).transpose()));
  CHECK(embed(twice, m).values == embed(one, m).values);
  CHECK_THROWS_AS(embed(TokenSeq{}, m), Error);
  CHECK_THROWS_AS(embed(TokenSeq{10}, m), Error);
  // Permutations of a multiset differ at most by rounding of the summation order.
  const TokenSeq p{1, 2, 3}, q{3, 1, 2};
  CHECK((embed(p, m).values - embed(q, m).values).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("mean of two rows") {
  const RetrieverModel m(5, 4, 9);
  const TokenSeq s{0, 1};
  const Eigen::VectorXd want = (m.token_table().row(0) + m.token_table().row(1)).transpose() / 2.0;
  CHECK(embed(s, m).values == want);
}

TEST_CASE("similarity examples") {
  CHECK(similarity(vec({1, 0}), vec({0, 1})) == 0.0);
  CHECK(similarity(vec({1, 2}), vec({3, 4})) == 11.0);
  CHECK_THROWS_AS(similarity(vec({1}), vec({1, 2})), Error);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int t = 0; t < 50; ++t) {
    Embedding a, b;
    a.values.resize(33);
    b.values.resize(33);
    for (int i = 0; i < 33; ++i) {
      a.values[i] = n(rng);
      b.values[i] = n(rng);
    }
    CHECK(similarity(a, b) == similarity(b, a));
    CHECK(similarity(a, a) >= 0.0);
  }
}

TEST_CASE("build_groups on three documents") {
  const Corpus c({Document{"a", "", {0, 1}}, Document{"b", "", {1}}, Document{"c", "", {2, 3}}});
  const RetrieverModel m(4, 8, 2);
  const auto g = build_groups(c, 2, m);
  REQUIRE(g.size() == 3);
  for (const auto& grp : g) {
    CHECK(grp.neighbors.size() == 2);
    CHECK(std::find(grp.neighbors.begin(), grp.neighbors.end(), grp.anchor) == grp.neighbors.end());
    CHECK(grp.scores[0] >= grp.scores[1]);
  }
  CHECK(build_groups(c, 10, m)[0].neighbors.size() == 2);
  CHECK_THROWS_AS(build_groups(c, 0, m), Error);
  CHECK_THROWS_AS(build_groups(Corpus({Document{"a", "", {0}}}), 1, m), Error);
}

TEST_CASE("ties go to the earlier corpus position") {
  const Corpus c({Document{"x", "", {0}}, Document{"y", "", {1}}, Document{"y2", "", {1}}, Document{"z", "", {1}}});
  const RetrieverModel m(2, 8, 0);
  const auto g = build_groups(c, 2, m);
  CHECK(g[0].neighbors == std::vector<std::string>{"y", "y2"});
  CHECK(g[3].neighbors == std::vector<std::string>{"y", "y2"});
}

TEST_CASE("50 random documents, K = 5, match the all-pairs oracle") {
  std::mt19937_64 rng(11);
  const auto c = oracle::random_corpus(50, 40, 12, rng);
  const RetrieverModel m(40, 32, 7);
  CHECK(oracle::same_groups(build_groups(c, 5, m), oracle::all_pairs_groups(c, 5, m)));
}

TEST_CASE("rank_in_batch") {
  const RetrieverModel m(12, 64, 4);
  const Document a{"a", "", {0, 1, 2}}, b{"b", "", {3, 4, 5}}, c{"c", "", {6, 7, 8}};
  const std::vector<const Document*> single{&a};
  CHECK(rank_in_batch(a.tokens, single, 0, m) == 1);
  const std::vector<const Document*> batch{&b, &a, &c};
  CHECK(rank_in_batch(a.tokens, batch, 1, m) == 1);
  // Exhaustive check of the constructed batch: the anchor is strictly the most similar.
  const auto r = embed(a.tokens, m);
  CHECK(similarity(r, embed(a, m)) > similarity(r, embed(b, m)));
  CHECK(similarity(r, embed(a, m)) > similarity(r, embed(c, m)));
  // Competitor identical to the anchor ranks ahead of it.
  const Document twin{"t", "", {0, 1, 2}};
  const std::vector<const Document*> tied{&a, &twin};
  CHECK(rank_in_batch(a.tokens, tied, 0, m) == 2);
  CHECK(rank_in_batch(a.tokens, tied, 1, m) == 2);
  CHECK_THROWS_AS(rank_in_batch(TokenSeq{}, batch, 0, m), Error);
  CHECK_THROWS_AS(rank_in_batch(a.tokens, batch, 3, m), Error);
}

TEST_CASE("groups file round trip") {
  std::mt19937_64 rng(2);
  const auto c = oracle::random_corpus(12, 10, 5, rng);
  const RetrieverModel m(10, 16, 1);
  GroupsFile f{build_groups(c, 3, m), 3, 1, 16};
  const auto p = std::filesystem::temp_directory_path() / "rlcf_unit_groups.jsonl";
  save_groups(f, p);
  const auto back = load_groups(p);
  CHECK(back.k == 3);
  CHECK(back.retriever_seed == 1);
  CHECK(back.dim == 16);
  CHECK(oracle::same_groups(back.groups, f.groups));
  CHECK_THROWS_AS(load_groups(p.string() + ".missing"), Error);
}
