#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "elnkit/rng.hpp"

namespace elnkit {

enum class PadSampling { with_replacement, without_replacement };

// Keeps the first occurrence of each distinct hypothesis (up to n), then
// fills the remaining slots with randomly chosen copies of the kept ones.
// without_replacement draws each kept hypothesis at most once per round.
// Throws DataError when `hypotheses` is empty.
std::vector<std::string> dedup_and_pad(const std::vector<std::string>& hypotheses,
                                       std::size_t n, Rng& rng,
                                       PadSampling sampling = PadSampling::with_replacement);

}  // namespace elnkit
