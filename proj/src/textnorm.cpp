#include "elnkit/textnorm.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "elnkit/errors.hpp"

namespace elnkit::textnorm {

namespace tables {
extern const std::string_view kPunctuation;
extern const std::string_view kCharMap;
extern const std::string_view kAffixes;
extern const std::string_view kNumberWords;
}  // namespace tables

namespace {

constexpr int kMaxPasses = 16;

[[noreturn]] void table_error(std::string_view table, std::size_t line_no, const std::string& what) {
  throw FormatError(std::string(table) + " line " + std::to_string(line_no) + ": " + what);
}

// Calls fn(line_no, fields) for every non-comment line, fields split on TAB.
template <typename Fn>
void for_each_row(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.remove_suffix(1);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    fn(line_no, fields);
  }
}

bool parse_codepoint(std::string_view s, char32_t& cp) {
  if (s.size() < 3 || s.substr(0, 2) != "U+") return false;
  std::uint32_t v = 0;
  const auto* first = s.data() + 2;
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v, 16);
  if (ec != std::errc() || ptr != last || v > 0x10FFFF) return false;
  cp = static_cast<char32_t>(v);
  return true;
}

bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

bool is_digit(char32_t c) { return u_charType(static_cast<UChar32>(c)) == U_DECIMAL_DIGIT_NUMBER; }

int digit_value(char32_t c) { return u_charDigitValue(static_cast<UChar32>(c)); }

bool is_group_separator(char32_t c) { return c == U',' || c == U'٬'; }
bool is_decimal_separator(char32_t c) { return c == U'.' || c == U'٫'; }

// Step (i).
std::u32string convert_numbers(const std::u32string& in, const NormalizationConfig& cfg) {
  if (cfg.small_number_limit == 0) return in;
  const std::u32string space = U" ";
  const std::u32string point = utf8_decode(cfg.number_words.decimal_point);

  auto digits_at = [&](std::size_t pos) {
    std::size_t end = pos;
    while (end < in.size() && is_digit(in[end])) ++end;
    return end;
  };
  // Small values become words padded with spaces, others keep their digits.
  auto spell_or_keep = [&](const std::u32string& digits) -> std::u32string {
    std::uint64_t value = 0;
    bool fits = true;
    for (char32_t d : digits) {
      const auto v = static_cast<std::uint64_t>(digit_value(d));
      if (value > (kMaxSmallNumberLimit - v) / 10) {
        fits = false;
        break;
      }
      value = value * 10 + v;
    }
    if (!fits || value >= cfg.small_number_limit) return digits;
    return space + utf8_decode(number_to_words(value, cfg.number_words)) + space;
  };

  std::u32string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    if (!is_digit(in[i])) {
      out.push_back(in[i++]);
      continue;
    }
    std::size_t end = digits_at(i);
    std::u32string integer(in, i, end - i);
    // 1,234,567 style grouping: 1-3 leading digits, then groups of exactly 3.
    if (integer.size() <= 3) {
      while (end + 4 <= in.size() && is_group_separator(in[end]) && digits_at(end + 1) == end + 4) {
        integer.append(in, end + 1, 3);
        end += 4;
      }
    }
    std::u32string piece = spell_or_keep(integer);
    if (end + 1 < in.size() && is_decimal_separator(in[end]) && is_digit(in[end + 1])) {
      const std::size_t frac_end = digits_at(end + 1);
      piece += space + point + space + spell_or_keep(std::u32string(in, end + 1, frac_end - end - 1));
      end = frac_end;
    }
    out += piece;
    i = end;
  }
  return out;
}

// Step (ii).
std::u32string canonicalize(const std::u32string& in, const NormalizationConfig& cfg) {
  std::u32string composed = in;
  if (cfg.unicode_form != UnicodeForm::none) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* n2 = nullptr;
    switch (cfg.unicode_form) {
      case UnicodeForm::nfc: n2 = icu::Normalizer2::getNFCInstance(status); break;
      case UnicodeForm::nfd: n2 = icu::Normalizer2::getNFDInstance(status); break;
      case UnicodeForm::nfkc: n2 = icu::Normalizer2::getNFKCInstance(status); break;
      case UnicodeForm::nfkd: n2 = icu::Normalizer2::getNFKDInstance(status); break;
      case UnicodeForm::none: break;
    }
    if (U_FAILURE(status)) throw Error("ICU normalizer unavailable");
    const auto src = icu::UnicodeString::fromUTF32(reinterpret_cast<const UChar32*>(in.data()),
                                                   static_cast<int32_t>(in.size()));
    const icu::UnicodeString dst = n2->normalize(src, status);
    if (U_FAILURE(status)) throw Error("ICU normalization failed");
    composed.assign(static_cast<std::size_t>(dst.countChar32()), U'\0');
    dst.toUTF32(reinterpret_cast<UChar32*>(composed.data()), static_cast<int32_t>(composed.size()),
                status);
    if (U_FAILURE(status)) throw Error("ICU UTF-32 conversion failed");
  }
  if (cfg.char_map.empty()) return composed;
  std::u32string out;
  out.reserve(composed.size());
  for (char32_t c : composed) {
    auto it = cfg.char_map.find(c);
    if (it == cfg.char_map.end()) {
      out.push_back(c);
    } else {
      out += it->second;
    }
  }
  return out;
}

std::vector<std::u32string> split_whitespace(const std::u32string& in) {
  std::vector<std::u32string> tokens;
  std::u32string cur;
  for (char32_t c : in) {
    if (is_space(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// Step (iii).
std::u32string repair_spacing(const std::u32string& in, const NormalizationConfig& cfg) {
  // Collapse ZWNJ runs and drop ZWNJ touching whitespace or either end.
  std::u32string cleaned;
  cleaned.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] != kZwnj) {
      cleaned.push_back(in[i]);
      continue;
    }
    if (!cleaned.empty() && cleaned.back() == kZwnj) continue;
    const bool at_start = cleaned.empty() || is_space(cleaned.back());
    std::size_t j = i;
    while (j < in.size() && in[j] == kZwnj) ++j;
    const bool at_end = j == in.size() || is_space(in[j]);
    if (!at_start && !at_end) cleaned.push_back(kZwnj);
    i = j - 1;
  }

  auto is_prefix = [&](const std::u32string& tok) {
    return std::any_of(cfg.affix_rules.begin(), cfg.affix_rules.end(), [&](const AffixRule& r) {
      return r.kind == AffixRule::Kind::prefix && r.form == tok;
    });
  };
  auto is_suffix_of = [&](const std::u32string& tok, const std::u32string& prev) {
    return std::any_of(cfg.affix_rules.begin(), cfg.affix_rules.end(), [&](const AffixRule& r) {
      if (r.kind != AffixRule::Kind::suffix || r.form != tok) return false;
      return r.after_letters.empty() || r.after_letters.find(prev.back()) != std::u32string::npos;
    });
  };

  // Decisions look only at the merged token built so far, so a second pass
  // over the output joins nothing new.
  std::vector<std::u32string> merged;
  for (auto& tok : split_whitespace(cleaned)) {
    if (!merged.empty() && (is_prefix(merged.back()) || is_suffix_of(tok, merged.back()))) {
      merged.back().push_back(kZwnj);
      merged.back() += tok;
    } else {
      merged.push_back(std::move(tok));
    }
  }
  std::u32string out;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    if (i) out.push_back(U' ');
    out += merged[i];
  }
  return out;
}

// Steps (iv)-(vi).
std::u32string map_digits(std::u32string s, const NormalizationConfig& cfg) {
  for (auto& c : s) {
    if (c >= U'0' && c <= U'9') c = cfg.digit_map[c - U'0'];
  }
  return s;
}

std::u32string strip_punctuation(std::u32string s, const NormalizationConfig& cfg) {
  for (auto& c : s) {
    if (cfg.punctuation_set.contains(c)) c = U' ';
  }
  return s;
}

std::u32string collapse_whitespace(const std::u32string& in) {
  std::u32string out;
  out.reserve(in.size());
  bool pending_space = false;
  for (char32_t c : in) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::u32string run_steps(const std::u32string& text, const NormalizationConfig& cfg) {
  std::u32string s = convert_numbers(text, cfg);
  s = canonicalize(s, cfg);
  s = repair_spacing(s, cfg);
  s = map_digits(std::move(s), cfg);
  s = strip_punctuation(std::move(s), cfg);
  return collapse_whitespace(s);
}

std::u32string spell_below_thousand(std::uint64_t n, const NumberWords& w) {
  std::u32string out;
  const auto word = [&](std::uint64_t v) { return utf8_decode(w.words.at(v)); };
  const std::u32string conj = U" " + utf8_decode(w.conjunction) + U" ";
  if (n >= 100) out = word(n / 100 * 100);
  const std::uint64_t rest = n % 100;
  if (rest == 0) return out;
  if (!out.empty()) out += conj;
  if (rest < 20) return out + word(rest);
  out += word(rest / 10 * 10);
  if (rest % 10) out += conj + word(rest % 10);
  return out;
}

}  // namespace

CodepointSet::CodepointSet(std::vector<std::pair<char32_t, char32_t>> ranges) {
  std::sort(ranges.begin(), ranges.end());
  for (const auto& r : ranges) {
    if (!ranges_.empty() && r.first <= ranges_.back().second + 1) {
      ranges_.back().second = std::max(ranges_.back().second, r.second);
    } else {
      ranges_.push_back(r);
    }
  }
}

bool CodepointSet::contains(char32_t cp) const {
  auto it = std::upper_bound(ranges_.begin(), ranges_.end(), cp,
                             [](char32_t v, const auto& r) { return v < r.first; });
  if (it == ranges_.begin()) return false;
  --it;
  return cp <= it->second;
}

std::size_t CodepointSet::size() const {
  std::size_t n = 0;
  for (const auto& r : ranges_) n += r.second - r.first + 1;
  return n;
}

std::string_view to_string(UnicodeForm f) {
  switch (f) {
    case UnicodeForm::nfc: return "NFC";
    case UnicodeForm::nfd: return "NFD";
    case UnicodeForm::nfkc: return "NFKC";
    case UnicodeForm::nfkd: return "NFKD";
    case UnicodeForm::none: return "none";
  }
  return "none";
}

UnicodeForm parse_unicode_form(std::string_view name) {
  for (auto f : {UnicodeForm::nfc, UnicodeForm::nfd, UnicodeForm::nfkc, UnicodeForm::nfkd,
                 UnicodeForm::none}) {
    if (to_string(f) == name) return f;
  }
  throw DataError("unknown Unicode form \"" + std::string(name) + "\"");
}

CodepointSet parse_punctuation_table(std::string_view text) {
  std::vector<std::pair<char32_t, char32_t>> ranges;
  for_each_row(text, [&](std::size_t line_no, const std::vector<std::string_view>& f) {
    if (f.size() != 1) table_error("punctuation", line_no, "expected one field");
    char32_t lo = 0, hi = 0;
    const auto dots = f[0].find("..");
    if (dots == std::string_view::npos) {
      if (!parse_codepoint(f[0], lo)) table_error("punctuation", line_no, "bad code point");
      hi = lo;
    } else if (!parse_codepoint(f[0].substr(0, dots), lo) ||
               !parse_codepoint(f[0].substr(dots + 2), hi) || hi < lo) {
      table_error("punctuation", line_no, "bad range");
    }
    ranges.emplace_back(lo, hi);
  });
  return CodepointSet(std::move(ranges));
}

std::map<char32_t, std::u32string> parse_char_map(std::string_view text) {
  std::map<char32_t, std::u32string> map;
  for_each_row(text, [&](std::size_t line_no, const std::vector<std::string_view>& f) {
    if (f.size() != 2) table_error("char_map", line_no, "expected two fields");
    char32_t from = 0, to = 0;
    if (!parse_codepoint(f[0], from)) table_error("char_map", line_no, "bad source code point");
    if (f[1] == "-") {
      map[from] = U"";
    } else if (parse_codepoint(f[1], to)) {
      map[from] = std::u32string(1, to);
    } else {
      table_error("char_map", line_no, "bad target (expected U+XXXX or -)");
    }
  });
  return map;
}

std::vector<AffixRule> parse_affix_rules(std::string_view text) {
  std::vector<AffixRule> rules;
  for_each_row(text, [&](std::size_t line_no, const std::vector<std::string_view>& f) {
    if (f.size() < 2 || f.size() > 3) table_error("affixes", line_no, "expected two or three fields");
    AffixRule r;
    if (f[0] == "prefix") {
      r.kind = AffixRule::Kind::prefix;
    } else if (f[0] == "suffix") {
      r.kind = AffixRule::Kind::suffix;
    } else {
      table_error("affixes", line_no, "kind must be prefix or suffix");
    }
    r.form = utf8_decode(f[1]);
    if (r.form.empty()) table_error("affixes", line_no, "empty form");
    for (char32_t c : r.form) {
      if (c == kZwnj || is_space(c)) table_error("affixes", line_no, "form contains whitespace or ZWNJ");
    }
    if (f.size() == 3) {
      if (r.kind == AffixRule::Kind::prefix) table_error("affixes", line_no, "letter condition on a prefix");
      r.after_letters = utf8_decode(f[2]);
    }
    rules.push_back(std::move(r));
  });
  return rules;
}

NumberWords parse_number_words(std::string_view text) {
  NumberWords w;
  for_each_row(text, [&](std::size_t line_no, const std::vector<std::string_view>& f) {
    if (f.size() != 2 || f[1].empty()) table_error("number_words", line_no, "expected KEY<TAB>WORD");
    if (f[0] == "and") {
      w.conjunction = std::string(f[1]);
      return;
    }
    if (f[0] == "point") {
      w.decimal_point = std::string(f[1]);
      return;
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), v);
    if (ec != std::errc() || ptr != f[0].data() + f[0].size()) {
      table_error("number_words", line_no, "bad numeric key");
    }
    w.words[v] = std::string(f[1]);
  });
  return w;
}

NormalizationConfig NormalizationConfig::defaults() {
  static const NormalizationConfig base = [] {
    NormalizationConfig c;
    c.punctuation_set = parse_punctuation_table(tables::kPunctuation);
    c.char_map = parse_char_map(tables::kCharMap);
    c.affix_rules = parse_affix_rules(tables::kAffixes);
    c.number_words = parse_number_words(tables::kNumberWords);
    for (int i = 0; i < 10; ++i) c.digit_map[static_cast<std::size_t>(i)] = U'۰' + static_cast<char32_t>(i);
    validate(c);
    return c;
  }();
  return base;
}

NormalizationConfig NormalizationConfig::from_directory(const std::filesystem::path& dir) {
  auto read = [&](const char* name) -> std::optional<std::string> {
    const auto p = dir / name;
    if (!std::filesystem::exists(p)) return std::nullopt;
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  NormalizationConfig c = defaults();
  if (auto t = read("punctuation.txt")) c.punctuation_set = parse_punctuation_table(*t);
  if (auto t = read("char_map.txt")) c.char_map = parse_char_map(*t);
  if (auto t = read("affixes.txt")) c.affix_rules = parse_affix_rules(*t);
  if (auto t = read("number_words.txt")) c.number_words = parse_number_words(*t);
  validate(c);
  return c;
}

void validate(const NormalizationConfig& cfg) {
  for (std::size_t i = 0; i < 10; ++i) {
    const char32_t t = cfg.digit_map[i];
    if (digit_value(t) != static_cast<int>(i) || !is_digit(t)) {
      throw DataError("digit_map: entry " + std::to_string(i) + " is not a decimal digit of that value");
    }
    if (t >= U'0' && t <= U'9') throw DataError("digit_map: targets must not be ASCII digits");
    if (cfg.punctuation_set.contains(t)) throw DataError("digit_map: target listed as punctuation");
  }
  // Equal digit values at distinct indices are impossible, so the map is a
  // bijection once every value checks out.
  if (cfg.punctuation_set.contains(kZwnj)) throw DataError("punctuation_set must not contain U+200C");
  if (cfg.small_number_limit > kMaxSmallNumberLimit) {
    throw DataError("small_number_limit exceeds 10^12");
  }
  const auto& w = cfg.number_words;
  std::vector<std::uint64_t> required;
  for (std::uint64_t v = 0; v < 20; ++v) required.push_back(v);
  for (std::uint64_t v = 20; v < 100; v += 10) required.push_back(v);
  for (std::uint64_t v = 100; v < 1000; v += 100) required.push_back(v);
  required.insert(required.end(), {1000, 1000000, 1000000000});
  for (auto v : required) {
    if (!w.words.contains(v)) throw DataError("number_words: missing " + std::to_string(v));
  }
  if (w.conjunction.empty() || w.decimal_point.empty()) {
    throw DataError("number_words: \"and\" and \"point\" entries are required");
  }
}

std::string number_to_words(std::uint64_t n, const NumberWords& w) {
  if (n >= kMaxSmallNumberLimit) throw DataError("number too large to spell: " + std::to_string(n));
  if (n == 0) return w.words.at(0);
  static constexpr std::uint64_t kScales[] = {1000000000, 1000000, 1000, 1};
  const std::u32string conj = U" " + utf8_decode(w.conjunction) + U" ";
  std::u32string out;
  for (auto scale : kScales) {
    const std::uint64_t group = n / scale % 1000;
    if (group == 0) continue;
    if (!out.empty()) out += conj;
    if (scale == 1) {
      out += spell_below_thousand(group, w);
    } else if (scale == 1000 && group == 1) {
      out += utf8_decode(w.words.at(1000));
    } else {
      out += spell_below_thousand(group, w) + U" " + utf8_decode(w.words.at(scale));
    }
  }
  return utf8_encode(out);
}

std::string normalize(std::string_view text, const NormalizationConfig& cfg) {
  std::u32string current = utf8_decode(text);
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    std::u32string next = run_steps(current, cfg);
    if (next == current) return utf8_encode(next);
    current = std::move(next);
  }
  throw Error("normalization did not reach a fixed point");
}

std::vector<std::string> tokenize(std::string_view normalized) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < normalized.size()) {
    const auto sp = normalized.find(' ', pos);
    const auto end = sp == std::string_view::npos ? normalized.size() : sp;
    if (end > pos) tokens.emplace_back(normalized.substr(pos, end - pos));
    pos = end + 1;
  }
  return tokens;
}

std::u32string utf8_decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    const int32_t at = i;
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c < 0) throw DecodeError("invalid UTF-8 at byte " + std::to_string(at));
    out.push_back(static_cast<char32_t>(c));
  }
  return out;
}

std::string utf8_encode(std::u32string_view text) {
  std::string out;
  out.reserve(text.size() * 2);
  for (char32_t c : text) {
    uint8_t buf[U8_MAX_LENGTH];
    int32_t n = 0;
    U8_APPEND_UNSAFE(buf, n, static_cast<UChar32>(c));
    out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
  }
  return out;
}

}  // namespace elnkit::textnorm
