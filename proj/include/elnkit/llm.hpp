#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "elnkit/projector.hpp"
#include "elnkit/textnorm.hpp"

namespace elnkit::llm {

// Instruction paragraph of the correction prompt.
extern const std::string_view kInstruction;

// Instruction, a blank line, "Hypotheses:", five numbered lines, a blank line
// and the answer cue "Corrected transcription:". Inside each hypothesis
// backslash, LF and CR are written as \\, \n and \r so every hypothesis stays
// on its own line. Throws DataError unless exactly five hypotheses are given.
std::string render_prompt(const std::vector<std::string>& hypotheses);

// Inverse of the hypothesis block of render_prompt.
std::vector<std::string> parse_prompt_hypotheses(const std::string& prompt);

struct Decoding {
  int max_tokens = 256;
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

struct CorrectionRequest {
  std::string id;
  std::string prompt;
  std::vector<std::string> hypotheses;
  std::shared_ptr<const projector::PrefixMatrix> prefix;
  Decoding decoding;
};

CorrectionRequest make_request(std::string id, const std::vector<std::string>& hypotheses,
                               std::shared_ptr<const projector::PrefixMatrix> prefix = nullptr,
                               Decoding decoding = {});

// Wire body for POST /correct:
//   {"id":str,"prompt":str,"prefix_b64":str|null,"prefix_shape":[rows,cols]|null,
//    "decoding":{"max_tokens":int,"temperature":num,"seed":uint}}
// Response: {"text":str}.
nlohmann::json request_body(const CorrectionRequest& req);

// Returns the raw completion text. Throws TransportError for a failure that
// is worth retrying, ProtocolError for a malformed answer.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const CorrectionRequest& req) = 0;
};

// Offline backend. Echoes hypothesis 1 unless a fixture answer exists for the
// request id. Ids in `timeouts` always fail with TransportError; ids in
// `empty` answer with an empty string.
class MockBackend final : public Backend {
 public:
  MockBackend() = default;
  explicit MockBackend(std::map<std::string, std::string> fixture) : fixture_(std::move(fixture)) {}
  // JSONL lines {"id":str,"text":str}; {"id":str,"fail":"timeout"} adds the
  // id to `timeouts`.
  static MockBackend from_fixture_file(const std::filesystem::path& jsonl);

  std::set<std::string> timeouts;
  std::set<std::string> empty;

  std::string complete(const CorrectionRequest& req) override;

 private:
  std::map<std::string, std::string> fixture_;
};

struct HttpOptions {
  std::string url;  // base URL, the client posts to <url>/correct
  std::optional<std::string> auth_token;
  int timeout_ms = 60000;
};

// Reads the bearer token from ELNKIT_LLM_TOKEN when auth_token is unset.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpOptions opts);
  std::string complete(const CorrectionRequest& req) override;

 private:
  HttpOptions opts_;
};

struct RetryPolicy {
  int max_retries = 3;
  int initial_backoff_ms = 100;
  int max_backoff_ms = 5000;
};

enum class Status { ok, empty, failed };
std::string_view to_string(Status s);

struct CorrectionResult {
  std::string id;
  std::string text;  // normalized
  Status status = Status::ok;
  int attempts = 0;
  std::string error;
};

// Calls the backend, retrying transport failures with exponential backoff.
// An empty answer or exhausted retries produce a flagged result instead of
// an exception. ProtocolError is not retried and is flagged as failed.
CorrectionResult correct(const CorrectionRequest& req, Backend& backend,
                         const textnorm::NormalizationConfig& norm, const RetryPolicy& retry = {});

// Runs up to `jobs` requests at a time; results come back in request order.
std::vector<CorrectionResult> correct_batch(const std::vector<CorrectionRequest>& requests,
                                            Backend& backend,
                                            const textnorm::NormalizationConfig& norm,
                                            const RetryPolicy& retry = {}, unsigned jobs = 4);

nlohmann::ordered_json to_json(const CorrectionResult& r);
CorrectionResult correction_from_json(const nlohmann::json& j);

// "mock", "mock:echo", "mock:fixture=PATH" or an http:// URL.
std::unique_ptr<Backend> make_backend(const std::string& endpoint);

}  // namespace elnkit::llm
