#include "rlcf/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "rlcf/error.hpp"
#include "rlcf/text.hpp"

namespace rlcf {

namespace {

const std::vector<std::string>& reserved_pieces() {
  static const std::vector<std::string> pieces = {"<unk>", "<eos>", "<sep>", "<resp>"};
  return pieces;
}

}  // namespace

std::string_view scheme_name(TokenScheme scheme) {
  return scheme == TokenScheme::kCharacter ? "character" : "whitespace-word";
}

TokenScheme parse_scheme(std::string_view name) {
  if (name == "whitespace-word" || name == "word") return TokenScheme::kWhitespaceWord;
  if (name == "character" || name == "char") return TokenScheme::kCharacter;
  throw Error(ErrorKind::kConfig, "unknown tokenizer scheme '" + std::string(name) +
                                      "' (expected whitespace-word or character)");
}

TokenizerSpec::TokenizerSpec(TokenScheme scheme) : scheme_(scheme), vocab_(reserved_pieces()) {}

TokenizerSpec TokenizerSpec::build(const std::vector<std::string>& texts, TokenScheme scheme) {
  TokenizerSpec spec(scheme);
  spec.extend(texts);
  return spec;
}

TokenizerSpec TokenizerSpec::from_tokens(TokenScheme scheme, const std::vector<std::string>& tokens) {
  if (tokens.size() < static_cast<size_t>(kNumReserved) ||
      !std::equal(reserved_pieces().begin(), reserved_pieces().end(), tokens.begin())) {
    throw Error("vocabulary does not start with the reserved tokens");
  }
  TokenizerSpec spec(scheme);
  for (size_t i = kNumReserved; i < tokens.size(); ++i) {
    if (spec.index_.count(tokens[i]) != 0) throw Error("duplicate vocabulary entry '" + tokens[i] + "'");
    spec.add_piece(tokens[i]);
  }
  return spec;
}

void TokenizerSpec::add_piece(const std::string& piece) {
  index_.emplace(piece, static_cast<TokenId>(vocab_.size()));
  vocab_.push_back(piece);
}

void TokenizerSpec::extend(const std::vector<std::string>& texts) {
  for (const auto& text : texts) {
    for (auto& piece : pieces(normalize_text(text))) {
      if (index_.count(piece) == 0) add_piece(piece);
    }
  }
}

std::vector<std::string> TokenizerSpec::pieces(std::string_view normalized) const {
  return scheme_ == TokenScheme::kCharacter ? utf8_code_points(normalized) : split_words(normalized);
}

TokenSeq TokenizerSpec::encode(std::string_view text) const {
  TokenSeq out;
  for (const auto& piece : pieces(normalize_text(text))) {
    out.push_back(lookup(piece).value_or(kUnk));
  }
  return out;
}

std::string TokenizerSpec::decode(const TokenSeq& tokens) const {
  std::string out;
  bool first = true;
  for (const TokenId id : tokens) {
    if (id == kEos || id == kSep || id == kResp) continue;
    if (scheme_ == TokenScheme::kWhitespaceWord && !first) out.push_back(' ');
    out += piece(id);
    first = false;
  }
  return out;
}

std::optional<TokenId> TokenizerSpec::lookup(std::string_view piece) const {
  const auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& TokenizerSpec::piece(TokenId id) const {
  if (id < 0 || static_cast<size_t>(id) >= vocab_.size()) {
    throw Error("token id " + std::to_string(id) + " outside vocabulary of size " +
                std::to_string(vocab_.size()));
  }
  return vocab_[static_cast<size_t>(id)];
}

std::uint64_t TokenizerSpec::hash() const {
  std::uint64_t h = fnv1a64(scheme_name(scheme_));
  for (const auto& piece : vocab_) {
    h = fnv1a64(piece, h);
    h = fnv1a64(std::string_view("\0", 1), h);
  }
  return h;
}

void TokenizerSpec::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["scheme"] = scheme_name(scheme_);
  j["tokens"] = vocab_;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write vocabulary " + path.string());
  out << j.dump() << '\n';
}

TokenizerSpec TokenizerSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot read vocabulary " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return from_tokens(parse_scheme(j.at("scheme").get<std::string>()),
                       j.at("tokens").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed vocabulary " + path.string() + ": " + e.what());
  }
}

Corpus::Corpus(std::vector<Document> documents) : documents_(std::move(documents)) {
  index_.reserve(documents_.size());
  for (size_t i = 0; i < documents_.size(); ++i) {
    const auto& id = documents_[i].id;
    if (id.empty()) throw Error("document at position " + std::to_string(i) + " has an empty id");
    if (!index_.emplace(id, i).second) throw Error("duplicate document id '" + id + "'");
  }
}

const Document& Corpus::at(std::string_view id) const {
  const auto pos = position(id);
  if (!pos) throw Error("unknown document id '" + std::string(id) + "'");
  return documents_[*pos];
}

std::optional<std::size_t> Corpus::position(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<CorpusRecord> read_corpus_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open corpus file " + path.string());
  std::vector<CorpusRecord> records;
  std::unordered_map<std::string, size_t> first_line;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    CorpusRecord record;
    try {
      const auto j = nlohmann::json::parse(line);
      record.id = j.at("id").get<std::string>();
      record.text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    if (record.id.empty()) throw Error(path.string() + ":" + std::to_string(line_no) + ": empty id");
    const auto [it, inserted] = first_line.emplace(record.id, line_no);
    if (!inserted) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" + record.id +
                  "' (first seen on line " + std::to_string(it->second) + ")");
    }
    records.push_back(std::move(record));
  }
  if (records.empty()) throw Error(path.string() + ": corpus file is empty");
  return records;
}

Corpus make_corpus(const std::vector<CorpusRecord>& records, const TokenizerSpec& tokenizer,
                   std::size_t limit) {
  std::vector<Document> docs;
  docs.reserve(records.size());
  for (const auto& r : records) {
    docs.push_back(truncate_tokens(Document{r.id, r.text, tokenizer.encode(r.text)}, limit));
  }
  return Corpus(std::move(docs));
}

Corpus load_corpus(const std::filesystem::path& path, const TokenizerSpec& tokenizer,
                   std::size_t limit) {
  return make_corpus(read_corpus_records(path), tokenizer, limit);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write corpus file " + path.string());
  for (const auto& doc : corpus) {
    out << nlohmann::json{{"id", doc.id}, {"text", doc.text}}.dump() << '\n';
  }
}

Document truncate_tokens(const Document& doc, std::size_t limit) {
  if (limit == 0) throw Error("truncation limit must be positive");
  Document out = doc;
  if (out.tokens.size() > limit) out.tokens.resize(limit);
  return out;
}

DedupResult dedup_corpus(const Corpus& corpus) {
  std::unordered_set<std::string> seen;
  std::vector<Document> kept;
  for (const auto& doc : corpus) {
    if (seen.insert(normalize_text(doc.text)).second) kept.push_back(doc);
  }
  DedupResult result;
  result.removed = corpus.size() - kept.size();
  result.corpus = Corpus(std::move(kept));
  return result;
}

}  // namespace rlcf
