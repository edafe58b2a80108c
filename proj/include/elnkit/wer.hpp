#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "elnkit/types.hpp"

namespace elnkit::wer {

struct AlignmentOp {
  enum class Kind { match, substitute, del, insert };
  Kind kind = Kind::match;
  std::optional<std::size_t> ref_index;
  std::optional<std::size_t> hyp_index;

  bool operator==(const AlignmentOp&) const = default;
};

struct Alignment {
  WERBreakdown breakdown;
  std::vector<AlignmentOp> ops;
};

// Unit-cost Levenshtein alignment over word tokens. Among minimum-cost paths
// those with the fewest insertions plus deletions win, which makes the S/D/I
// counts symmetric under swapping the two sides. Remaining ties are broken
// in the backtrace (from the end of both sequences) by
// match > substitute > delete > insert, so the op list is reproducible.
Alignment align(const std::vector<std::string>& reference,
                const std::vector<std::string>& hypothesis);

enum class Averaging { micro, macro };

struct CorpusResult {
  WERBreakdown pooled;
  std::vector<WERBreakdown> per_utterance;
  Averaging averaging = Averaging::micro;
};

using TokenPair = std::pair<std::vector<std::string>, std::vector<std::string>>;

// Micro averaging pools S, D, I and N before dividing. Macro averaging reports
// the mean of per-utterance percentages (pooled counts are still summed).
// Throws DataError on an empty corpus.
CorpusResult corpus_wer(const std::vector<TokenPair>& pairs,
                        Averaging averaging = Averaging::micro);

}  // namespace elnkit::wer
