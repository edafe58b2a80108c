#include "elnkit/llm.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include "elnkit/errors.hpp"
#include "elnkit/hash.hpp"
#include "elnkit/parallel.hpp"
#include "elnkit/types.hpp"

namespace elnkit::llm {

const std::string_view kInstruction =
    "You are a transcription error correction assistant and linguistics expert specializing in improving "
    "transcriptions produced by Automatic Speech Recognition (ASR) systems. Your task is to perform error "
    "correction based on the words in top 5 hypotheses generated by the ASR system. You can also correct the "
    "sentences yourself based on their meaning, ensuring spelling is correct. Do not use synonyms. Analyze "
    "linguistic context and provide corrected ASR hypothesis directly.";

namespace {

constexpr std::string_view kHypHeader = "Hypotheses:\n";
constexpr std::string_view kAnswerCue = "Corrected transcription:";

std::string escape_line(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_line(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (++i == s.size()) throw DataError("prompt: dangling escape");
    switch (s[i]) {
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      default: throw DataError(std::string("prompt: unknown escape \\") + s[i]);
    }
  }
  return out;
}

}  // namespace

std::string render_prompt(const std::vector<std::string>& hypotheses) {
  if (hypotheses.size() != kHypothesisCount) {
    throw DataError("prompt needs exactly " + std::to_string(kHypothesisCount) + " hypotheses, got " +
                    std::to_string(hypotheses.size()));
  }
  std::string out(kInstruction);
  out += "\n\n";
  out += kHypHeader;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    out += std::to_string(i + 1) + ". " + escape_line(hypotheses[i]) + "\n";
  }
  out += "\n";
  out += kAnswerCue;
  return out;
}

std::vector<std::string> parse_prompt_hypotheses(const std::string& prompt) {
  auto pos = prompt.find(std::string("\n\n") + std::string(kHypHeader));
  if (pos == std::string::npos) throw DataError("prompt: no hypothesis block");
  pos += 2 + kHypHeader.size();
  std::vector<std::string> out;
  for (std::size_t k = 1;; ++k) {
    const auto end = prompt.find('\n', pos);
    if (end == std::string::npos) throw DataError("prompt: unterminated hypothesis block");
    const std::string_view line(prompt.data() + pos, end - pos);
    if (line.empty()) break;
    const std::string label = std::to_string(k) + ". ";
    if (line.substr(0, label.size()) != label) throw DataError("prompt: expected hypothesis line " + label);
    out.push_back(unescape_line(line.substr(label.size())));
    pos = end + 1;
  }
  return out;
}

CorrectionRequest make_request(std::string id, const std::vector<std::string>& hypotheses,
                               std::shared_ptr<const projector::PrefixMatrix> prefix, Decoding decoding) {
  CorrectionRequest req;
  req.id = std::move(id);
  req.prompt = render_prompt(hypotheses);
  req.hypotheses = hypotheses;
  req.prefix = std::move(prefix);
  req.decoding = decoding;
  return req;
}

nlohmann::json request_body(const CorrectionRequest& req) {
  nlohmann::json body;
  body["id"] = req.id;
  body["prompt"] = req.prompt;
  if (req.prefix) {
    body["prefix_b64"] = base64_encode(projector::matrix_bytes(*req.prefix));
    body["prefix_shape"] = {req.prefix->rows, req.prefix->cols};
  } else {
    body["prefix_b64"] = nullptr;
    body["prefix_shape"] = nullptr;
  }
  body["decoding"] = {{"max_tokens", req.decoding.max_tokens},
                      {"temperature", req.decoding.temperature},
                      {"seed", req.decoding.seed}};
  return body;
}

MockBackend MockBackend::from_fixture_file(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw DataError("cannot read mock fixture " + jsonl.string());
  std::map<std::string, std::string> fixture;
  std::set<std::string> timeouts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto id = j.at("id").get<std::string>();
      if (j.contains("fail")) {
        if (j["fail"] != "timeout") throw DataError("unknown \"fail\" value " + j["fail"].dump());
        timeouts.insert(id);
      } else {
        fixture[id] = j.at("text").get<std::string>();
      }
    } catch (const std::exception& e) {
      throw FormatError(jsonl.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  MockBackend mock(std::move(fixture));
  mock.timeouts = std::move(timeouts);
  return mock;
}

std::string MockBackend::complete(const CorrectionRequest& req) {
  if (timeouts.count(req.id)) throw TransportError("mock: simulated timeout for " + req.id, 1);
  if (empty.count(req.id)) return {};
  if (auto it = fixture_.find(req.id); it != fixture_.end()) return it->second;
  if (req.hypotheses.empty()) throw ProtocolError("mock: request has no hypotheses");
  return req.hypotheses.front();
}

std::string_view to_string(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::empty: return "empty";
    case Status::failed: return "failed";
  }
  return "failed";
}

CorrectionResult correct(const CorrectionRequest& req, Backend& backend, const textnorm::NormalizationConfig& norm,
                         const RetryPolicy& retry) {
  CorrectionResult r;
  r.id = req.id;
  int backoff = std::max(0, retry.initial_backoff_ms);
  const int attempts = std::max(0, retry.max_retries) + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    r.attempts = attempt;
    try {
      r.text = textnorm::normalize(backend.complete(req), norm);
      r.status = r.text.empty() ? Status::empty : Status::ok;
      r.error = r.text.empty() ? "empty response" : "";
      return r;
    } catch (const TransportError& e) {
      r.error = e.what();
    } catch (const ProtocolError& e) {
      r.error = e.what();
      break;
    } catch (const DecodeError& e) {
      r.error = std::string("response: ") + e.what();
      break;
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff = std::min(backoff * 2, retry.max_backoff_ms);
    }
  }
  r.text.clear();
  r.status = Status::failed;
  return r;
}

std::vector<CorrectionResult> correct_batch(const std::vector<CorrectionRequest>& requests, Backend& backend,
                                            const textnorm::NormalizationConfig& norm, const RetryPolicy& retry,
                                            unsigned jobs) {
  std::vector<CorrectionResult> out(requests.size());
  parallel_for(requests.size(), jobs, [&](std::size_t i) { out[i] = correct(requests[i], backend, norm, retry); });
  return out;
}

nlohmann::ordered_json to_json(const CorrectionResult& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["text"] = r.text;
  j["status"] = std::string(to_string(r.status));
  j["attempts"] = r.attempts;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

CorrectionResult correction_from_json(const nlohmann::json& j) {
  CorrectionResult r;
  try {
    r.id = j.at("id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    const auto status = j.value("status", std::string("ok"));
    if (status == "ok") {
      r.status = Status::ok;
    } else if (status == "empty") {
      r.status = Status::empty;
    } else if (status == "failed") {
      r.status = Status::failed;
    } else {
      throw DataError("correction: unknown status \"" + status + "\"");
    }
    r.attempts = j.value("attempts", 0);
    r.error = j.value("error", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("correction record: ") + e.what());
  }
  return r;
}

std::unique_ptr<Backend> make_backend(const std::string& endpoint) {
  if (endpoint == "mock" || endpoint == "mock:echo") return std::make_unique<MockBackend>();
  constexpr std::string_view kFixture = "mock:fixture=";
  if (endpoint.rfind(kFixture, 0) == 0) {
    return std::make_unique<MockBackend>(MockBackend::from_fixture_file(endpoint.substr(kFixture.size())));
  }
  if (endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0) {
    return std::make_unique<HttpBackend>(HttpOptions{endpoint, std::nullopt});
  }
  throw UsageError("unknown endpoint \"" + endpoint + "\" (expected mock, mock:echo, mock:fixture=PATH or a URL)");
}

}  // namespace elnkit::llm
