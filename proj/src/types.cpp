#include "elnkit/types.hpp"

#include <cmath>
#include <string>

#include "elnkit/errors.hpp"

namespace elnkit {

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::clean: return "clean";
    case Condition::mixed: return "mixed";
    case Condition::snr5: return "snr5";
    case Condition::snr10: return "snr10";
  }
  return "clean";
}

Condition parse_condition(std::string_view name) {
  for (auto c : kAllConditions) {
    if (to_string(c) == name) return c;
  }
  throw DataError("unknown condition \"" + std::string(name) + "\"");
}

void validate_condition(const UtteranceRecord& r) {
  if (r.hypotheses.size() != kHypothesisCount) {
    throw DataError("field \"hypotheses\": expected " + std::to_string(kHypothesisCount) +
                    " entries, got " + std::to_string(r.hypotheses.size()));
  }
  switch (r.condition) {
    case Condition::clean:
      if (r.snr_db) throw DataError("field \"snr_db\": must be null for condition clean");
      break;
    case Condition::snr5:
    case Condition::snr10: {
      const double want = r.condition == Condition::snr5 ? 5.0 : 10.0;
      if (!r.snr_db || *r.snr_db != want) {
        throw DataError(std::string("field \"snr_db\": must be ") + (want == 5.0 ? "5.0" : "10.0") +
                        " for condition " + std::string(to_string(r.condition)));
      }
      break;
    }
    case Condition::mixed:
      if (!r.snr_db || !(*r.snr_db >= 0.0 && *r.snr_db <= 15.0)) {
        throw DataError("field \"snr_db\": must lie in [0, 15] for condition mixed");
      }
      break;
  }
}

void validate(const NoiseSpec& spec) {
  if (!std::isfinite(spec.snr_db)) throw DataError("NoiseSpec: snr_db must be finite");
  const double a = spec.gaussian_amplitude;
  if (!(a == 0.0 || (a >= kGaussianAmplitudeMin && a <= kGaussianAmplitudeMax))) {
    throw DataError("NoiseSpec: gaussian_amplitude must be 0 or within [0.001, 0.015]");
  }
}

WERBreakdown make_breakdown(std::size_t s, std::size_t d, std::size_t i, std::size_t n) {
  WERBreakdown b{s, d, i, n, 0.0, false};
  if (n > 0) {
    b.wer_percent = static_cast<double>(s + d + i) / static_cast<double>(n) * 100.0;
  } else {
    b.wer_percent = static_cast<double>(i) * 100.0;
    b.empty_reference = i > 0;
  }
  return b;
}

}  // namespace elnkit
