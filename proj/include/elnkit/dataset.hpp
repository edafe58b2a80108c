#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "elnkit/nbest.hpp"
#include "elnkit/textnorm.hpp"
#include "elnkit/types.hpp"

namespace elnkit {

inline constexpr int kDatasetSchemaVersion = 1;

struct LoadOptions {
  // Reject records whose reference or hypotheses are not normalization
  // fixed points under `normalization`.
  bool require_normalized = true;
  const textnorm::NormalizationConfig* normalization = nullptr;
  // Sampling scheme for records carrying "pad": true.
  PadSampling pad_sampling = PadSampling::with_replacement;
};

// Parses one JSONL record. `line_no` is only used in error messages.
// Records may carry "pad": true with 1..5 hypotheses; they are deduplicated
// and padded to five with an Rng seeded from the record's seed.
UtteranceRecord parse_record(std::string_view line, std::size_t line_no,
                             const LoadOptions& opts = {});
nlohmann::ordered_json to_json(const UtteranceRecord& r);
std::string to_json_line(const UtteranceRecord& r);

// Blank lines are skipped. Errors carry "line N" and the field name.
std::vector<UtteranceRecord> load_dataset(const std::filesystem::path& path,
                                          const LoadOptions& opts = {});
std::vector<UtteranceRecord> read_dataset(std::istream& in, const LoadOptions& opts = {});
void save_dataset(const std::vector<UtteranceRecord>& records, const std::filesystem::path& path);

}  // namespace elnkit
