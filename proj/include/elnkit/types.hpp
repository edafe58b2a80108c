#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace elnkit {

inline constexpr std::size_t kHypothesisCount = 5;

enum class Condition { clean, mixed, snr5, snr10 };

std::string_view to_string(Condition c);
// Throws DataError on an unknown name.
Condition parse_condition(std::string_view name);
inline constexpr Condition kAllConditions[] = {Condition::clean, Condition::mixed,
                                               Condition::snr5, Condition::snr10};

struct UtteranceRecord {
  std::string id;
  std::optional<std::string> audio_path;
  std::string reference;
  std::vector<std::string> hypotheses;
  Condition condition = Condition::clean;
  std::optional<double> snr_db;
  std::uint64_t seed = 0;

  bool operator==(const UtteranceRecord&) const = default;
};

// Checks the condition/snr_db pairing and the hypothesis count. Throws
// DataError naming the offending field.
void validate_condition(const UtteranceRecord& r);

struct NoiseSpec {
  std::optional<std::string> ambient_source;
  double snr_db = 0.0;
  // 0 means no Gaussian component; otherwise within [0.001, 0.015].
  double gaussian_amplitude = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const NoiseSpec&) const = default;
};

inline constexpr double kGaussianAmplitudeMin = 0.001;
inline constexpr double kGaussianAmplitudeMax = 0.015;

void validate(const NoiseSpec& spec);

struct WERBreakdown {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_words = 0;
  double wer_percent = 0.0;
  // Set when reference_words == 0 and the hypothesis is not empty; the
  // percentage is then insertions * 100.
  bool empty_reference = false;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  bool operator==(const WERBreakdown&) const = default;
};

// Builds a breakdown from counts, applying the empty-reference convention.
WERBreakdown make_breakdown(std::size_t s, std::size_t d, std::size_t i, std::size_t n);

}  // namespace elnkit
