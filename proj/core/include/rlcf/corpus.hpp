#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rlcf {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::size_t kMaxDocumentTokens = 512;

enum class TokenScheme { kWhitespaceWord, kCharacter };

std::string_view scheme_name(TokenScheme scheme);
TokenScheme parse_scheme(std::string_view name);

// Vocabulary plus the encode/decode rules. Ids 0..3 are reserved: unknown,
// end-of-sequence, and the two prompt separators.
class TokenizerSpec {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kResp = 3;
  static constexpr TokenId kNumReserved = 4;

  TokenizerSpec() : TokenizerSpec(TokenScheme::kWhitespaceWord) {}
  explicit TokenizerSpec(TokenScheme scheme);

  // Vocabulary in first-seen order over the normalized texts.
  static TokenizerSpec build(const std::vector<std::string>& texts, TokenScheme scheme);
  static TokenizerSpec from_tokens(TokenScheme scheme, const std::vector<std::string>& tokens);

  TokenScheme scheme() const { return scheme_; }
  std::size_t size() const { return vocab_.size(); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  // Adds pieces not yet in the vocabulary; existing ids are stable.
  void extend(const std::vector<std::string>& texts);

  // Splits already-normalized text into pieces for this scheme.
  std::vector<std::string> pieces(std::string_view normalized) const;

  TokenSeq encode(std::string_view text) const;
  // End-of-sequence and separator ids are dropped.
  std::string decode(const TokenSeq& tokens) const;
  std::optional<TokenId> lookup(std::string_view piece) const;
  const std::string& piece(TokenId id) const;

  std::uint64_t hash() const;

  void save(const std::filesystem::path& path) const;
  static TokenizerSpec load(const std::filesystem::path& path);

 private:
  TokenScheme scheme_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;

  void add_piece(const std::string& piece);
};

struct Document {
  std::string id;
  std::string text;
  TokenSeq tokens;
};

class Corpus {
 public:
  Corpus() = default;
  // Throws if any id is empty or duplicated.
  explicit Corpus(std::vector<Document> documents);

  std::size_t size() const { return documents_.size(); }
  bool empty() const { return documents_.empty(); }
  const Document& operator[](std::size_t i) const { return documents_[i]; }
  const Document& at(std::string_view id) const;
  std::optional<std::size_t> position(std::string_view id) const;
  bool contains(std::string_view id) const { return position(id).has_value(); }

  const std::vector<Document>& documents() const { return documents_; }
  auto begin() const { return documents_.begin(); }
  auto end() const { return documents_.end(); }

 private:
  std::vector<Document> documents_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct CorpusRecord {
  std::string id;
  std::string text;
};

// Reads a line-delimited {"id","text"} file. Errors name the offending line.
std::vector<CorpusRecord> read_corpus_records(const std::filesystem::path& path);

Corpus load_corpus(const std::filesystem::path& path, const TokenizerSpec& tokenizer,
                   std::size_t limit = kMaxDocumentTokens);
Corpus make_corpus(const std::vector<CorpusRecord>& records, const TokenizerSpec& tokenizer,
                   std::size_t limit = kMaxDocumentTokens);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

Document truncate_tokens(const Document& doc, std::size_t limit = kMaxDocumentTokens);

struct DedupResult {
  Corpus corpus;
  std::size_t removed = 0;
};
DedupResult dedup_corpus(const Corpus& corpus);

}  // namespace rlcf
