#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rlcf/corpus.hpp"
#include "rlcf/error.hpp"
#include "rlcf/text.hpp"

using namespace rlcf;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& body) {
  const fs::path dir = fs::temp_directory_path() / "rlcf_unit_corpus";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << body;
  return p;
}

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += "w" + std::to_string(i) + " ";
  return s;
}

}  // namespace

TEST_CASE("tokenizer round trip and reserved ids") {
  const auto tok = TokenizerSpec::build({"The cat  sat", "the DOG"}, TokenScheme::kWhitespaceWord);
  CHECK(tok.piece(TokenizerSpec::kEos) == "<eos>");
  CHECK(tok.size() == 4 + 4);
  const auto ids = tok.encode("the dog sat");
  CHECK(tok.decode(ids) == "the dog sat");
  CHECK(tok.encode("unseen")[0] == TokenizerSpec::kUnk);
  for (auto id : tok.encode("the cat sat the dog")) CHECK(static_cast<std::size_t>(id) < tok.size());
  // Reserved strings in text are ordinary unknown words, not control tokens.
  CHECK(tok.encode("<eos>")[0] == TokenizerSpec::kUnk);
}

TEST_CASE("character scheme") {
  const auto tok = TokenizerSpec::build({"ab ba"}, TokenScheme::kCharacter);
  const auto ids = tok.encode("ab ba");
  CHECK(ids.size() == 5);
  CHECK(tok.decode(ids) == "ab ba");
}

TEST_CASE("tokenizer save/load preserves ids and hash") {
  const auto tok = TokenizerSpec::build({"x y z"}, TokenScheme::kWhitespaceWord);
  const auto p = temp_file("vocab.json", "");
  tok.save(p);
  const auto back = TokenizerSpec::load(p);
  CHECK(back.hash() == tok.hash());
  CHECK(back.encode("z y") == tok.encode("z y"));
}

TEST_CASE("load_corpus keeps file order") {
  const auto p = temp_file("three.jsonl", R"({"id":"a","text":"one two"}
{"id":"b","text":"three"}
{"id":"c","text":"four five six"}
)");
  const auto tok = TokenizerSpec::build({"one two three four five six"}, TokenScheme::kWhitespaceWord);
  const Corpus c = load_corpus(p, tok);
  REQUIRE(c.size() == 3);
  CHECK(c[0].id == "a");
  CHECK(c[2].id == "c");
  CHECK(c.at("b").tokens.size() == 1);
}

TEST_CASE("load_corpus errors") {
  const auto tok = TokenizerSpec::build({"x"}, TokenScheme::kWhitespaceWord);
  const auto dup = temp_file("dup.jsonl", R"({"id":"d0","text":"x"}
{"id":"d1","text":"x"}
{"id":"d2","text":"x"}
{"id":"d3","text":"x"}
{"id":"d1","text":"x"}
)");
  CHECK_THROWS_WITH_AS(load_corpus(dup, tok), doctest::Contains("d1"), Error);
  const auto bad = temp_file("bad.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n");
  CHECK_THROWS_WITH_AS(load_corpus(bad, tok), doctest::Contains("2"), Error);
  const auto empty = temp_file("empty.jsonl", "");
  CHECK_THROWS_AS(load_corpus(empty, tok), Error);
}

TEST_CASE("600-token document truncated to 512 at ingestion") {
  const auto p = temp_file("long.jsonl", "{\"id\":\"long\",\"text\":\"" + words(600) + "\"}\n");
  const auto tok = TokenizerSpec::build({words(600)}, TokenScheme::kWhitespaceWord);
  const Corpus c = load_corpus(p, tok);
  CHECK(c[0].tokens.size() == 512);
  const TokenSeq all = tok.encode(words(600));
  CHECK(c[0].tokens == TokenSeq(all.begin(), all.begin() + 512));
}

TEST_CASE("truncate_tokens boundaries") {
  const auto tok = TokenizerSpec::build({words(600)}, TokenScheme::kWhitespaceWord);
  const Document d600{"a", words(600), tok.encode(words(600))};
  CHECK(truncate_tokens(d600).tokens.size() == 512);
  CHECK(truncate_tokens(d600).text == d600.text);
  const Document d10{"b", words(10), tok.encode(words(10))};
  CHECK(truncate_tokens(d10).tokens == d10.tokens);
  const Document d512{"c", words(512), tok.encode(words(512))};
  CHECK(truncate_tokens(d512).tokens == d512.tokens);
  CHECK_THROWS_AS(truncate_tokens(d10, 0), Error);
}

TEST_CASE("dedup_corpus") {
  const auto tok = TokenizerSpec::build({"a b"}, TokenScheme::kWhitespaceWord);
  auto doc = [&](const std::string& id, const std::string& t) { return Document{id, t, tok.encode(t)}; };
  const auto r1 = dedup_corpus(Corpus({doc("A", "a b"), doc("B", "b"), doc("A2", "A  B")}));
  CHECK(r1.removed == 1);
  CHECK(r1.corpus.size() == 2);
  CHECK(r1.corpus[1].id == "B");
  const auto r2 = dedup_corpus(Corpus({doc("A", "a"), doc("B", "b")}));
  CHECK(r2.removed == 0);
  const auto r3 = dedup_corpus(Corpus({doc("A", "a"), doc("A1", "a"), doc("A2", " a ")}));
  CHECK(r3.removed == 2);
  CHECK(r3.corpus.size() == 1);
}

TEST_CASE("corpus rejects duplicate or empty ids") {
  CHECK_THROWS_AS(Corpus({Document{"x", "a", {}}, Document{"x", "b", {}}}), Error);
  CHECK_THROWS_AS(Corpus({Document{"", "a", {}}}), Error);
}

TEST_CASE("save and reload corpus is identical") {
  const auto tok = TokenizerSpec::build({"p q r"}, TokenScheme::kWhitespaceWord);
  const Corpus c = make_corpus({{"a", "p q"}, {"b", "r"}}, tok);
  const auto p = temp_file("roundtrip.jsonl", "");
  save_corpus(c, p);
  const Corpus back = load_corpus(p, tok);
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(back[i].id == c[i].id);
    CHECK(back[i].text == c[i].text);
    CHECK(back[i].tokens == c[i].tokens);
  }
}
