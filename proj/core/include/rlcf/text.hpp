#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rlcf {

// NFC, full Unicode case folding, whitespace runs collapsed to one ASCII
// space, leading/trailing whitespace removed. Throws on invalid UTF-8.
std::string normalize_text(std::string_view text);

// Splits UTF-8 text into code points, each returned as its own UTF-8 string.
std::vector<std::string> utf8_code_points(std::string_view text);

// Splits on ASCII spaces; empty pieces are dropped.
std::vector<std::string> split_words(std::string_view text);

// FNV-1a, used for content hashes in manifests and reports.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace rlcf
