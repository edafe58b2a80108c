#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "elnkit/dataset.hpp"
#include "elnkit/embed.hpp"
#include "elnkit/eln.hpp"
#include "elnkit/projector.hpp"
#include "elnkit/errors.hpp"
#include "elnkit/wer.hpp"
#include "elnkit/analysis.hpp"
#include "elnkit/types.hpp"

namespace elnkit::pipeline {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct MixConfig {
  std::string clean_manifest;
  std::string noise_dir;
  std::vector<Condition> conditions;
  std::size_t count = 0;
  std::uint64_t seed = 0;

  bool operator==(const MixConfig&) const = default;
};

struct ProviderConfig {
  std::string kind = "test";  // test | file | service
  std::size_t sentence_dim = 384;
  std::size_t token_dim = 300;
  std::string sentence_archive;
  std::string token_archive;
  std::string url;

  bool operator==(const ProviderConfig&) const = default;
};

// One declarative document. Precedence when the CLI builds it: built-in
// defaults, then the --config file, then explicit flags.
struct PipelineConfig {
  std::string dataset;  // raw N-best JSONL
  std::string out_dir;
  std::uint64_t seed = 0;
  std::optional<MixConfig> mix;
  ProviderConfig provider;
  std::string endpoint = "mock";
  std::string weights;  // optional projector weights
  std::string system = "corrected";
  unsigned jobs = 1;
  std::uint64_t small_number_limit = 100;
  std::string rules_dir;  // optional normalization table overrides
  std::string bin_edges = "0,5,10,20,40,inf";
  int max_tokens = 256;
  double temperature = 0.0;

  bool operator==(const PipelineConfig&) const = default;
};

nlohmann::ordered_json to_json(const PipelineConfig& c);
// Unknown keys are a DataError; missing keys keep their defaults, so a
// partial document can be layered over an existing config.
void merge_json(PipelineConfig& c, const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& c, const std::filesystem::path& path);

// Checks every referenced path and value before anything runs.
void validate(const PipelineConfig& c);

// Raised for any failure inside a stage. exit_code follows the CLI mapping of
// the underlying error (2 data, 3 transport).
class StageError : public Error {
 public:
  StageError(std::string stage, std::string record_id, const std::string& what, int exit_code);
  const std::string& stage() const { return stage_; }
  const std::string& record_id() const { return record_id_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string stage_;
  std::string record_id_;
  int exit_code_;
};

struct StageOutcome {
  std::string name;
  std::string input_hash;
  bool skipped = false;
};

struct RunResult {
  std::vector<StageOutcome> stages;
  std::string manifest_hash;
  std::filesystem::path manifest_path;
};

struct Providers {
  std::shared_ptr<embed::Provider> sentence;
  std::shared_ptr<embed::Provider> token;
};
Providers make_providers(const ProviderConfig& p);

// One line of eln.jsonl.
struct ElnRow {
  std::string id;
  Condition condition = Condition::clean;
  double magnitude = 0.0;
  double sentence_l2 = 0.0;
  double token_l2 = 0.0;
  std::size_t n_hypotheses = 0;
  std::size_t l_max = 0;
  std::size_t d = 0;
  std::size_t d_prime = 0;
};
nlohmann::ordered_json to_json(const ElnRow& r);
std::vector<ElnRow> read_eln_rows(const std::filesystem::path& path);
void write_eln_rows(const std::vector<ElnRow>& rows, const std::filesystem::path& path);

struct ElnBatch {
  std::vector<ElnRow> rows;
  std::vector<eln::ELNVector> vectors;
};
// Record-parallel ELN over a dataset. Throws StageError naming the record.
ElnBatch compute_batch(const std::vector<UtteranceRecord>& records, const Providers& providers, unsigned jobs);
// Full vectors (sentence part, then token part) keyed by text_key(id), in the
// embedding archive format.
embed::Archive vectors_archive(const ElnBatch& batch);
// Projects the archived vector of every row. Throws StageError naming the id.
std::vector<projector::PrefixEntry> project_rows(const std::vector<ElnRow>& rows, const embed::Archive& vectors,
                                                 const projector::ProjectorWeights& w, unsigned jobs);

// One line of per_utt.csv: id,condition,system,S,D,I,N,wer_percent
struct WerRow {
  std::string id;
  Condition condition = Condition::clean;
  std::string system;
  WERBreakdown breakdown;
};
void write_wer_rows(const std::vector<WerRow>& rows, const std::filesystem::path& path);
// A non-empty `system_override` replaces the system column.
std::vector<WerRow> read_wer_rows(const std::filesystem::path& path, const std::string& system_override = {});

// Pooled reports per (system, condition), with each utterance's ELN
// magnitude when `eln` has it.
std::vector<analysis::ConditionReport> build_reports(const std::vector<WerRow>& wer,
                                                     const std::vector<ElnRow>& eln);
// (magnitude, wer_percent) for every utterance of `system` that has an ELN row.
std::vector<std::pair<double, double>> study_pairs(const std::vector<WerRow>& wer,
                                                   const std::vector<ElnRow>& eln,
                                                   const std::string& system);

// Stages, in dependency order: mix (only with a mix section), normalize, eln,
// project (only with weights), correct, wer, analyze. Each stage writes under
// <out_dir>/<stage>/ and a stamp holding its input hash and output digests;
// a stage whose input hash and outputs are unchanged is skipped. Writes
// <out_dir>/manifest.json. Throws StageError.
RunResult run_pipeline(const PipelineConfig& cfg, std::ostream& log);

}  // namespace elnkit::pipeline
