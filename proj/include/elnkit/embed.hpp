#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <memory>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace elnkit::embed {

struct SentenceEmbedding {
  std::vector<double> vector;
  std::string source_text;
  std::string provider_id;
};

struct TokenEmbeddingSequence {
  std::vector<std::vector<double>> vectors;
  std::vector<std::string> tokens;
  std::string provider_id;
};

// A backend that maps texts to sentence vectors and texts to per-token vector
// sequences. Implementations preserve input order and batch size, and are
// safe to call from several threads at once.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string id() const = 0;
  virtual std::vector<SentenceEmbedding> embed_sentences(const std::vector<std::string>& texts) = 0;
  virtual std::vector<TokenEmbeddingSequence> embed_tokens(const std::vector<std::string>& texts) = 0;
};

// Deterministic, dependency-free provider. A text (or token) is hashed with
// SHA-256 under a level tag; the digest seeds an Rng whose normal draws form
// a vector that is then scaled to unit L2 norm. Tokens come from
// textnorm::tokenize.
class TestEmbedder final : public Provider {
 public:
  // Throws UsageError when dim == 0.
  explicit TestEmbedder(std::size_t dim);
  std::string id() const override;
  std::vector<SentenceEmbedding> embed_sentences(const std::vector<std::string>& texts) override;
  std::vector<TokenEmbeddingSequence> embed_tokens(const std::vector<std::string>& texts) override;

  std::vector<double> sentence_vector(const std::string& text) const;
  std::vector<double> token_vector(const std::string& token) const;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
};

std::unique_ptr<Provider> test_embedder(std::size_t dim);

// Embedding archive, little-endian throughout:
//   magic   "ELNE"            4 bytes
//   version u32               currently 1
//   dim     u32
//   count   u64
//   count x { key u64, dim x f32 }
// key = text_key(text): the first 8 bytes of SHA-256(UTF-8 text) read as a
// little-endian u64.
inline constexpr std::uint32_t kArchiveVersion = 1;

class Archive {
 public:
  Archive() = default;
  explicit Archive(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return keys_.size(); }
  // Adds or replaces. Throws DataError on a dimension mismatch.
  void put(std::uint64_t key, const std::vector<float>& vector);
  void put_text(const std::string& text, const std::vector<double>& vector);
  const std::vector<float>* find(std::uint64_t key) const;
  const std::vector<std::uint64_t>& keys() const { return keys_; }

  std::vector<std::uint8_t> serialize() const;
  static Archive deserialize(const std::vector<std::uint8_t>& bytes);
  void save(const std::filesystem::path& path) const;
  // Throws FormatError on bad magic, version, truncation or trailing bytes.
  static Archive load(const std::filesystem::path& path);

 private:
  std::uint32_t dim_ = 0;
  std::vector<std::uint64_t> keys_;
  std::unordered_map<std::uint64_t, std::vector<float>> vectors_;
};

// Serves precomputed vectors. Sentence lookups use the whole text as key;
// token lookups use each token from textnorm::tokenize. A missing key is a
// DataError naming the text.
class FileProvider final : public Provider {
 public:
  FileProvider(std::optional<Archive> sentences, std::optional<Archive> tokens);
  static std::unique_ptr<FileProvider> open(const std::filesystem::path& sentence_archive,
                                            const std::filesystem::path& token_archive);
  std::string id() const override { return "file"; }
  std::vector<SentenceEmbedding> embed_sentences(const std::vector<std::string>& texts) override;
  std::vector<TokenEmbeddingSequence> embed_tokens(const std::vector<std::string>& texts) override;

 private:
  std::optional<Archive> sentences_;
  std::optional<Archive> tokens_;
};

struct ServiceOptions {
  std::string url;  // e.g. "http://127.0.0.1:8000"
  int max_retries = 3;
  int initial_backoff_ms = 50;
  int max_backoff_ms = 2000;
  int timeout_ms = 30000;
  std::size_t batch_size = 64;
  std::ptrdiff_t max_in_flight = 4;
};

// Client for the embedding service:
//   POST /embed {"level":"sentence"|"token","texts":[...]}
//   sentence -> {"dim":int,"vectors":[[f32,...],...]}
//   token    -> {"dim":int,"sequences":[[[f32,...],...],...],"tokens":[[str,...],...]}
//   failure  -> non-200 with {"error":str}
// Unreachable service: TransportError carrying the attempt count. Malformed
// responses or a dimension change within a batch: ProtocolError.
class ServiceProvider final : public Provider {
 public:
  explicit ServiceProvider(ServiceOptions opts);
  std::string id() const override { return "service:" + opts_.url; }
  std::vector<SentenceEmbedding> embed_sentences(const std::vector<std::string>& texts) override;
  std::vector<TokenEmbeddingSequence> embed_tokens(const std::vector<std::string>& texts) override;

 private:
  nlohmann::json post(const nlohmann::json& body);

  ServiceOptions opts_;
  std::counting_semaphore<> in_flight_;
};

// Wire-format helpers shared by the client and test servers.
nlohmann::json sentence_response(const std::vector<SentenceEmbedding>& embeddings);
nlohmann::json token_response(const std::vector<TokenEmbeddingSequence>& sequences);

}  // namespace elnkit::embed
