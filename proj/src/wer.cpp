#include "elnkit/wer.hpp"

#include <algorithm>
#include <compare>

#include "elnkit/errors.hpp"

namespace elnkit::wer {

namespace {

// Path cost ordered by edit count, then by insertions plus deletions.
struct Key {
  std::size_t edits = 0;
  std::size_t indels = 0;
  auto operator<=>(const Key&) const = default;
};

}  // namespace

Alignment align(const std::vector<std::string>& reference,
                const std::vector<std::string>& hypothesis) {
  const std::size_t n = reference.size();
  const std::size_t m = hypothesis.size();
  const std::size_t width = m + 1;
  // key[i * width + j]: best key between reference[:i] and hypothesis[:j].
  std::vector<Key> key((n + 1) * width);
  for (std::size_t i = 0; i <= n; ++i) key[i * width] = {i, i};
  for (std::size_t j = 0; j <= m; ++j) key[j] = {j, j};
  auto diag_key = [&](std::size_t i, std::size_t j) {
    Key k = key[(i - 1) * width + j - 1];
    k.edits += reference[i - 1] == hypothesis[j - 1] ? 0 : 1;
    return k;
  };
  auto gap_key = [](Key k) { return Key{k.edits + 1, k.indels + 1}; };
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      key[i * width + j] = std::min({diag_key(i, j), gap_key(key[(i - 1) * width + j]),
                                     gap_key(key[i * width + j - 1])});
    }
  }

  Alignment out;
  std::size_t s = 0, d = 0, ins = 0;
  std::size_t i = n, j = m;
  using Kind = AlignmentOp::Kind;
  while (i > 0 || j > 0) {
    const Key here = key[i * width + j];
    if (i > 0 && j > 0 && here == diag_key(i, j)) {
      if (reference[i - 1] == hypothesis[j - 1]) {
        out.ops.push_back({Kind::match, i - 1, j - 1});
      } else {
        out.ops.push_back({Kind::substitute, i - 1, j - 1});
        ++s;
      }
      --i, --j;
    } else if (i > 0 && here == gap_key(key[(i - 1) * width + j])) {
      out.ops.push_back({Kind::del, i - 1, std::nullopt});
      ++d;
      --i;
    } else {
      out.ops.push_back({Kind::insert, std::nullopt, j - 1});
      ++ins;
      --j;
    }
  }
  std::reverse(out.ops.begin(), out.ops.end());
  out.breakdown = make_breakdown(s, d, ins, n);
  return out;
}

CorpusResult corpus_wer(const std::vector<TokenPair>& pairs, Averaging averaging) {
  if (pairs.empty()) throw DataError("corpus_wer: empty corpus");
  CorpusResult result;
  result.averaging = averaging;
  std::size_t s = 0, d = 0, i = 0, n = 0;
  double percent_sum = 0.0;
  for (const auto& [ref, hyp] : pairs) {
    auto b = align(ref, hyp).breakdown;
    s += b.substitutions;
    d += b.deletions;
    i += b.insertions;
    n += b.reference_words;
    percent_sum += b.wer_percent;
    result.per_utterance.push_back(b);
  }
  result.pooled = make_breakdown(s, d, i, n);
  if (averaging == Averaging::macro) {
    result.pooled.wer_percent = percent_sum / static_cast<double>(pairs.size());
  }
  return result;
}

}  // namespace elnkit::wer
