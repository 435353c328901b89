#include "doctest.h"
#include "rlcf/error.hpp"
#include "rlcf/text.hpp"

using namespace rlcf;

TEST_CASE("normalize folds case, composes and collapses whitespace") {
  CHECK(normalize_text("  Hello   WORLD\t\n") == "hello world");
  // e + combining acute composes to U+00E9
  CHECK(normalize_text("Caf\x65\xCC\x81") == "caf\xC3\xA9");
  CHECK(normalize_text("STRASSE") == "strasse");
  CHECK(normalize_text("") == "");
  CHECK(normalize_text(normalize_text(" A  b ")) == normalize_text(" A  b "));
}

TEST_CASE("normalize rejects invalid utf-8") {
  CHECK_THROWS_AS(normalize_text("\xff\xfe"), Error);
}

TEST_CASE("split_words and code points") {
  CHECK(split_words("a  b c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_words("").empty());
  CHECK(utf8_code_points("a\xC3\xA9z") == std::vector<std::string>{"a", "\xC3\xA9", "z"});
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}
