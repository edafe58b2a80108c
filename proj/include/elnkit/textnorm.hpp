#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace elnkit::textnorm {

inline constexpr char32_t kZwnj = U'\u200C';

// Sorted, non-overlapping inclusive code point ranges.
class CodepointSet {
 public:
  CodepointSet() = default;
  explicit CodepointSet(std::vector<std::pair<char32_t, char32_t>> ranges);

  bool contains(char32_t cp) const;
  const std::vector<std::pair<char32_t, char32_t>>& ranges() const { return ranges_; }
  std::size_t size() const;

 private:
  std::vector<std::pair<char32_t, char32_t>> ranges_;
};

enum class UnicodeForm { nfc, nfd, nfkc, nfkd, none };

std::string_view to_string(UnicodeForm f);
UnicodeForm parse_unicode_form(std::string_view name);

struct AffixRule {
  enum class Kind { prefix, suffix };
  Kind kind = Kind::prefix;
  std::u32string form;
  // Suffix rules only: the preceding word must end in one of these letters.
  // Empty means unconstrained.
  std::u32string after_letters;
};

struct NumberWords {
  std::map<std::uint64_t, std::string> words;
  std::string conjunction;
  std::string decimal_point;
};

// Rule tables shipped under data/textnorm. Each parser accepts the plain-text
// format documented at the top of the corresponding file and throws
// FormatError with a line number on malformed input.
CodepointSet parse_punctuation_table(std::string_view text);
std::map<char32_t, std::u32string> parse_char_map(std::string_view text);
std::vector<AffixRule> parse_affix_rules(std::string_view text);
NumberWords parse_number_words(std::string_view text);

struct NormalizationConfig {
  // Integers strictly below this become words; 0 disables the conversion.
  std::uint64_t small_number_limit = 100;
  CodepointSet punctuation_set;
  std::array<char32_t, 10> digit_map{};
  UnicodeForm unicode_form = UnicodeForm::nfc;
  std::map<char32_t, std::u32string> char_map;
  std::vector<AffixRule> affix_rules;
  NumberWords number_words;

  // Built-in tables, Persian digits, NFC, limit 100.
  static NormalizationConfig defaults();
  // Same defaults, with any of punctuation.txt, char_map.txt, affixes.txt and
  // number_words.txt present in `dir` replacing the built-in table.
  static NormalizationConfig from_directory(const std::filesystem::path& dir);
};

// Throws DataError if the config breaks an invariant: digit_map not a
// bijection onto decimal digits, ZWNJ in the punctuation set, incomplete
// number words, or a limit beyond what the number words can spell.
void validate(const NormalizationConfig& cfg);

// Largest supported small_number_limit (numbers below 10^12 can be spelled).
inline constexpr std::uint64_t kMaxSmallNumberLimit = 1'000'000'000'000ULL;

// Runs the six normalization steps in order:
//   (i)   integers below small_number_limit become Persian words,
//   (ii)  Unicode canonicalization plus the character map,
//   (iii) ZWNJ clean-up and affix joining,
//   (iv)  ASCII digits through digit_map,
//   (v)   punctuation replaced by spaces,
//   (vi)  whitespace runs collapsed, ends trimmed.
// Step (v) can expose new material for earlier steps ("می،رود"), so the
// sequence repeats until the text stops changing; the result is a fixed point.
// Throws DecodeError on invalid UTF-8.
std::string normalize(std::string_view text, const NormalizationConfig& cfg);

// Spells n in Persian using cfg.number_words. n < 10^12.
std::string number_to_words(std::uint64_t n, const NumberWords& words);

// Splits on single spaces. Empty input yields no tokens.
std::vector<std::string> tokenize(std::string_view normalized);

// UTF-8 helpers. decode throws DecodeError naming the byte offset.
std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);

}  // namespace elnkit::textnorm
