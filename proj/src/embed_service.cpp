#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "elnkit/embed.hpp"
#include "elnkit/errors.hpp"

namespace elnkit::embed {

namespace {

std::vector<double> parse_vector(const nlohmann::json& j, std::size_t dim, const char* what) {
  if (!j.is_array() || j.size() != dim) {
    throw ProtocolError(std::string("embedding service: ") + what + " has the wrong dimension");
  }
  std::vector<double> v;
  v.reserve(dim);
  for (const auto& x : j) {
    if (!x.is_number()) throw ProtocolError(std::string("embedding service: non-numeric entry in ") + what);
    // The wire carries f32 values.
    const double d = static_cast<float>(x.get<double>());
    if (!std::isfinite(d)) throw ProtocolError(std::string("embedding service: non-finite entry in ") + what);
    v.push_back(d);
  }
  return v;
}

std::size_t parse_dim(const nlohmann::json& j) {
  if (!j.contains("dim") || !j["dim"].is_number_unsigned()) {
    throw ProtocolError("embedding service: response lacks a non-negative integer \"dim\"");
  }
  return j["dim"].get<std::size_t>();
}

}  // namespace

ServiceProvider::ServiceProvider(ServiceOptions opts)
    : opts_(std::move(opts)), in_flight_(std::max<std::ptrdiff_t>(1, opts_.max_in_flight)) {
  while (!opts_.url.empty() && opts_.url.back() == '/') opts_.url.pop_back();
  if (opts_.url.empty()) throw UsageError("embedding service: empty URL");
  if (opts_.url.rfind("http://", 0) != 0) {
    throw UsageError("embedding service: only http:// URLs are supported (built without TLS): " + opts_.url);
  }
}

nlohmann::json ServiceProvider::post(const nlohmann::json& body) {
  const std::string payload = body.dump();
  std::string last_error;
  int backoff = opts_.initial_backoff_ms;
  const int attempts = opts_.max_retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Result res = [&] {
      in_flight_.acquire();
      httplib::Client client(opts_.url);
      const auto timeout = std::chrono::milliseconds(opts_.timeout_ms);
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      auto r = client.Post("/embed", payload, "application/json");
      in_flight_.release();
      return r;
    }();
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status == 200) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::parse_error&) {
        throw ProtocolError("embedding service: response is not JSON");
      }
    } else {
      std::string message = "HTTP " + std::to_string(res->status);
      try {
        const auto err = nlohmann::json::parse(res->body);
        if (err.contains("error") && err["error"].is_string()) message += ": " + err["error"].get<std::string>();
      } catch (const nlohmann::json::parse_error&) {
      }
      if (res->status < 500 && res->status != 429) throw ProtocolError("embedding service: " + message);
      last_error = message;
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff = std::min(backoff * 2, opts_.max_backoff_ms);
    }
  }
  throw TransportError("embedding service at " + opts_.url + " unavailable after " + std::to_string(attempts) +
                           " attempts: " + last_error,
                       attempts);
}

std::vector<SentenceEmbedding> ServiceProvider::embed_sentences(const std::vector<std::string>& texts) {
  std::vector<SentenceEmbedding> out;
  std::size_t batch_dim = 0;
  const std::size_t step = std::max<std::size_t>(1, opts_.batch_size);
  for (std::size_t start = 0; start < texts.size(); start += step) {
    const std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                         texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), start + step)));
    const auto res = post({{"level", "sentence"}, {"texts", chunk}});
    const std::size_t dim = parse_dim(res);
    if (dim == 0) throw ProtocolError("embedding service: zero dimension");
    if (batch_dim != 0 && dim != batch_dim) throw ProtocolError("embedding service: dimension changed within a batch");
    batch_dim = dim;
    if (!res.contains("vectors") || !res["vectors"].is_array() || res["vectors"].size() != chunk.size()) {
      throw ProtocolError("embedding service: expected one vector per text");
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.push_back({parse_vector(res["vectors"][i], dim, "vector"), chunk[i], id()});
    }
  }
  return out;
}

std::vector<TokenEmbeddingSequence> ServiceProvider::embed_tokens(const std::vector<std::string>& texts) {
  std::vector<TokenEmbeddingSequence> out;
  std::size_t batch_dim = 0;
  const std::size_t step = std::max<std::size_t>(1, opts_.batch_size);
  for (std::size_t start = 0; start < texts.size(); start += step) {
    const std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                         texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), start + step)));
    const auto res = post({{"level", "token"}, {"texts", chunk}});
    const std::size_t dim = parse_dim(res);
    if (!res.contains("sequences") || !res["sequences"].is_array() || res["sequences"].size() != chunk.size() ||
        !res.contains("tokens") || !res["tokens"].is_array() || res["tokens"].size() != chunk.size()) {
      throw ProtocolError("embedding service: expected one sequence and token list per text");
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& seq = res["sequences"][i];
      const auto& toks = res["tokens"][i];
      if (!seq.is_array() || !toks.is_array() || seq.size() != toks.size()) {
        throw ProtocolError("embedding service: sequence and token counts differ");
      }
      if (!seq.empty()) {
        if (dim == 0) throw ProtocolError("embedding service: zero dimension");
        if (batch_dim != 0 && dim != batch_dim) throw ProtocolError("embedding service: dimension changed within a batch");
        batch_dim = dim;
      }
      TokenEmbeddingSequence s;
      s.provider_id = id();
      for (std::size_t k = 0; k < seq.size(); ++k) {
        if (!toks[k].is_string()) throw ProtocolError("embedding service: token is not a string");
        s.tokens.push_back(toks[k].get<std::string>());
        s.vectors.push_back(parse_vector(seq[k], dim, "token vector"));
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace elnkit::embed
