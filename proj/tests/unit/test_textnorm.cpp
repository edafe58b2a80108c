#include <doctest.h>


#include "elnkit/errors.hpp"
#include "elnkit/rng.hpp"
#include "elnkit/textnorm.hpp"
#include "support.hpp"

using namespace elnkit;
using namespace elnkit::textnorm;

namespace {
const NormalizationConfig& cfg() {
  static const auto c = NormalizationConfig::defaults();
  return c;
}
std::string norm(std::string_view s) { return normalize(s, cfg()); }
const std::string zwnj = "\u200C";
}  // namespace

TEST_CASE("normalize: empty and punctuation-only input") {
  CHECK(norm("") == "");
  CHECK(norm("!!!،؛؟«»...") == "");
  CHECK(norm("   \t\n ") == "");
}

TEST_CASE("normalize: punctuation stripped and whitespace collapsed") {
  CHECK(norm("سلام  ،  دنیا!") == "سلام دنیا");
  CHECK(norm("  a\t\tb \n c  ") == "a b c");
  CHECK(norm("a\u2014b") == "a b");
}

TEST_CASE("normalize: Arabic letters unified to Persian") {
  CHECK(norm("كتابي") == "کتابی");
  CHECK(norm("ى") == "ی");
  CHECK(norm("\u0640\u0640سلام\u0640") == "سلام");
}

TEST_CASE("normalize: small numbers become words") {
  CHECK(norm("0") == "صفر");
  CHECK(norm("21") == "بیست و یک");
  CHECK(norm("99") == "نود و نه");
  CHECK(norm("من 3 کتاب دارم") == "من سه کتاب دارم");
  CHECK(norm("١٢") == "دوازده");
  CHECK(norm("۴۵") == "چهل و پنج");
}

TEST_CASE("normalize: numbers at or above the limit keep Persian digits") {
  CHECK(norm("100") == "۱۰۰");
  CHECK(norm("2024") == "۲۰۲۴");
  CHECK(norm("١٢٣") == "۱۲۳");
  auto wide = cfg();
  wide.small_number_limit = 0;
  CHECK(normalize("7", wide) == "۷");
  wide.small_number_limit = 1'000'000;
  CHECK(normalize("2001", wide) == "دو هزار و یک");
  CHECK(normalize("12,345", wide) == "دوازده هزار و سیصد و چهل و پنج");
  CHECK(normalize("3.14", wide) == "سه ممیز چهارده");
}

TEST_CASE("number_to_words: composition") {
  const auto& w = cfg().number_words;
  CHECK(number_to_words(0, w) == "صفر");
  CHECK(number_to_words(110, w) == "صد و ده");
  CHECK(number_to_words(1000, w) == "هزار");
  CHECK(number_to_words(1234567, w) == "یک میلیون و دویست و سی و چهار هزار و پانصد و شصت و هفت");
}

TEST_CASE("normalize: half-space repair") {
  CHECK(norm("مي روم") == "می" + zwnj + "روم");
  CHECK(norm("نمی روم") == "نمی" + zwnj + "روم");
  CHECK(norm("کتاب ها") == "کتاب" + zwnj + "ها");
  CHECK(norm("خانه ام") == "خانه" + zwnj + "ام");
  CHECK(norm("کتاب ام") == "کتاب ام");
  CHECK(norm(zwnj + zwnj + "سلام" + zwnj + zwnj + zwnj + "دنیا" + zwnj) == "سلام" + zwnj + "دنیا");
  CHECK(norm("سلام " + zwnj + " دنیا") == "سلام دنیا");
}

TEST_CASE("normalize: bidi and format controls are removed") {
  CHECK(norm("\u200Fسلام\u200E") == "سلام");
  CHECK(norm("a\u200Bb") == "ab");
  CHECK(norm("\uFEFFa") == "a");
  CHECK(norm("\u202Ba\u202C") == "a");
}

TEST_CASE("normalize: invalid UTF-8 is a decode error") {
  CHECK_THROWS_AS(norm("abc\xff"), DecodeError);
  CHECK_THROWS_AS(norm("\xc3"), DecodeError);
  CHECK_THROWS_AS(norm("\xed\xa0\x80"), DecodeError);
}

TEST_CASE("normalize: canonical composition") {
  CHECK(norm("\u0627\u0653") == "\u0622");
  auto nfd = cfg();
  nfd.unicode_form = UnicodeForm::nfd;
  CHECK(normalize("\u0622", nfd) == "\u0627\u0653");
}

TEST_CASE("tokenize") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("a b") == std::vector<std::string>{"a", "b"});
  CHECK(tokenize("می" + zwnj + "رود").size() == 1);
  const std::string s = norm("من به مدرسه   مي روم.");
  std::string joined;
  for (const auto& t : tokenize(s)) joined += (joined.empty() ? "" : " ") + t;
  CHECK(joined == s);
}

TEST_CASE("config: invariants") {
  CHECK_NOTHROW(validate(cfg()));
  CHECK_FALSE(cfg().punctuation_set.contains(kZwnj));
  auto bad = cfg();
  bad.digit_map[3] = bad.digit_map[4];
  CHECK_THROWS_AS(validate(bad), DataError);
  bad = cfg();
  bad.punctuation_set = CodepointSet({{kZwnj, kZwnj}});
  CHECK_THROWS_AS(validate(bad), DataError);
  bad = cfg();
  bad.small_number_limit = kMaxSmallNumberLimit + 1;
  CHECK_THROWS_AS(validate(bad), DataError);
}

TEST_CASE("config: shipped punctuation covers the Arabic-script marks") {
  for (char32_t cp : {U'،', U'؛', U'؟', U'«', U'»', U'!', U'.', U'٪', U'۔'}) {
    CHECK(cfg().punctuation_set.contains(cp));
  }
  for (char32_t cp : {U'a', U'\u0627', U' ', U'\u200C', U'\u06F1'}) CHECK_FALSE(cfg().punctuation_set.contains(cp));
}

TEST_CASE("config: table parsers reject malformed lines with a line number") {
  try {
    parse_char_map("U+0643\tU+06A9\nbogus\n");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_punctuation_table("U+0021..U+0010\n"), FormatError);
  CHECK(parse_punctuation_table("# c\nU+0021\nU+0023..U+0025\n").size() == 4);
}

TEST_CASE("config: directory override replaces one table") {
  testsupport::TempDir dir;
  testsupport::write_file(dir / "char_map.txt", "# test\nU+0061\tU+0062\n");
  const auto c = NormalizationConfig::from_directory(dir.path());
  CHECK(normalize("aa", c) == "bb");
  CHECK(normalize("كتاب", c) == "كتاب");
  CHECK(normalize("x!", c) == "x");
}

TEST_CASE("normalize: seeded fuzz keeps idempotence and purity") {
  const std::vector<std::string> pieces = {
      "a", "Z", " ", "  ", "\t", "\n", "0", "7", "12", "100", "3.5", "1,000", "\u0661", "\u0662\u0663",
      "\u06F4", "\u06F5\u06F6", "\u060C", "\u061B", "\u061F", "\u00AB", "\u00BB", "!", ".", "-", "(", ")",
      "\u066B", "\u066C", "\u064A", "\u0643", "\u06CC", "\u06A9", "\u0640", "\u200C", "\u200C\u200C",
      "\u200D", "\u200F", "\u0627", "\u0653", "می", "نمی", "ها", "های", "ترین", "ام", "خانه", "کتاب",
      "\u0629", "\u00E9", "e\u0301", "\uFEFF", "\u0669", "\u0966"};
  Rng rng(1234);
  for (int k = 0; k < 2000; ++k) {
    std::string s;
    const auto len = rng.below(12);
    for (std::uint64_t i = 0; i < len; ++i) s += pieces[rng.below(pieces.size())];
    const auto once = norm(s);
    REQUIRE(norm(once) == once);
    for (char32_t cp : utf8_decode(once)) {
      REQUIRE_FALSE(cfg().punctuation_set.contains(cp));
      REQUIRE_FALSE((cp >= U'0' && cp <= U'9'));
      REQUIRE_FALSE((cp >= 0x0660 && cp <= 0x0669));
    }
  }
}
