#include "elnkit/nbest.hpp"

#include <algorithm>

#include "elnkit/errors.hpp"

namespace elnkit {

std::vector<std::string> dedup_and_pad(const std::vector<std::string>& hypotheses, std::size_t n,
                                       Rng& rng, PadSampling sampling) {
  std::vector<std::string> kept;
  for (const auto& h : hypotheses) {
    if (kept.size() == n) break;
    if (std::find(kept.begin(), kept.end(), h) == kept.end()) kept.push_back(h);
  }
  if (kept.empty()) throw DataError("cannot pad an empty hypothesis list");

  const std::size_t unique = kept.size();
  std::vector<std::size_t> pool;
  while (kept.size() < n) {
    if (sampling == PadSampling::with_replacement) {
      kept.push_back(kept[rng.below(unique)]);
      continue;
    }
    if (pool.empty()) {
      pool.resize(unique);
      for (std::size_t i = 0; i < unique; ++i) pool[i] = i;
    }
    const std::size_t pick = rng.below(pool.size());
    kept.push_back(kept[pool[pick]]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return kept;
}

}  // namespace elnkit
