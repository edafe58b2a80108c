#include "elnkit/embed.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "elnkit/errors.hpp"
#include "elnkit/hash.hpp"
#include "elnkit/rng.hpp"
#include "elnkit/textnorm.hpp"

namespace elnkit::embed {

namespace {

constexpr char kArchiveMagic[4] = {'E', 'L', 'N', 'E'};

std::vector<double> hashed_unit_vector(std::string_view level, const std::string& text, std::size_t dim) {
  std::string material(level);
  material.push_back('\x1f');
  material += text;
  Rng rng(text_key(material));
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("embedding archive truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::vector<double> widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

TestEmbedder::TestEmbedder(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw UsageError("test embedder: dimension must be positive");
}

std::string TestEmbedder::id() const { return "test:" + std::to_string(dim_); }

std::vector<double> TestEmbedder::sentence_vector(const std::string& text) const {
  return hashed_unit_vector("sentence", text, dim_);
}

std::vector<double> TestEmbedder::token_vector(const std::string& token) const {
  return hashed_unit_vector("token", token, dim_);
}

std::vector<SentenceEmbedding> TestEmbedder::embed_sentences(const std::vector<std::string>& texts) {
  std::vector<SentenceEmbedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back({sentence_vector(t), t, id()});
  return out;
}

std::vector<TokenEmbeddingSequence> TestEmbedder::embed_tokens(const std::vector<std::string>& texts) {
  std::vector<TokenEmbeddingSequence> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    TokenEmbeddingSequence seq;
    seq.tokens = textnorm::tokenize(t);
    for (const auto& tok : seq.tokens) seq.vectors.push_back(token_vector(tok));
    seq.provider_id = id();
    out.push_back(std::move(seq));
  }
  return out;
}

std::unique_ptr<Provider> test_embedder(std::size_t dim) { return std::make_unique<TestEmbedder>(dim); }

void Archive::put(std::uint64_t key, const std::vector<float>& vector) {
  if (dim_ == 0) dim_ = static_cast<std::uint32_t>(vector.size());
  if (vector.size() != dim_) {
    throw DataError("embedding archive: vector of dimension " + std::to_string(vector.size()) +
                    " in an archive of dimension " + std::to_string(dim_));
  }
  if (!vectors_.contains(key)) keys_.push_back(key);
  vectors_[key] = vector;
}

void Archive::put_text(const std::string& text, const std::vector<double>& vector) {
  put(text_key(text), std::vector<float>(vector.begin(), vector.end()));
}

const std::vector<float>* Archive::find(std::uint64_t key) const {
  auto it = vectors_.find(key);
  return it == vectors_.end() ? nullptr : &it->second;
}

std::vector<std::uint8_t> Archive::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kArchiveMagic), std::end(kArchiveMagic));
  put_le<std::uint32_t>(out, kArchiveVersion);
  put_le<std::uint32_t>(out, dim_);
  put_le<std::uint64_t>(out, keys_.size());
  for (auto key : keys_) {
    put_le<std::uint64_t>(out, key);
    for (float x : vectors_.at(key)) put_le<float>(out, x);
  }
  return out;
}

Archive Archive::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kArchiveMagic, 4) != 0) {
    throw FormatError("embedding archive: bad magic");
  }
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kArchiveVersion) throw FormatError("embedding archive: unsupported version " + std::to_string(version));
  Archive a(get_le<std::uint32_t>(bytes, pos));
  const auto count = get_le<std::uint64_t>(bytes, pos);
  const std::size_t entry = 8 + 4 * static_cast<std::size_t>(a.dim_);
  if (count > (bytes.size() - pos) / entry || bytes.size() - pos != count * entry) {
    throw FormatError("embedding archive: header count and dimension disagree with the payload size");
  }
  if (count > 0 && a.dim_ == 0) throw FormatError("embedding archive: zero dimension");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto key = get_le<std::uint64_t>(bytes, pos);
    std::vector<float> v(a.dim_);
    for (auto& x : v) x = get_le<float>(bytes, pos);
    a.put(key, v);
  }
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read embedding archive " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

FileProvider::FileProvider(std::optional<Archive> sentences, std::optional<Archive> tokens)
    : sentences_(std::move(sentences)), tokens_(std::move(tokens)) {}

std::unique_ptr<FileProvider> FileProvider::open(const std::filesystem::path& sentence_archive,
                                                 const std::filesystem::path& token_archive) {
  std::optional<Archive> s, t;
  if (!sentence_archive.empty()) s = Archive::load(sentence_archive);
  if (!token_archive.empty()) t = Archive::load(token_archive);
  return std::make_unique<FileProvider>(std::move(s), std::move(t));
}

std::vector<SentenceEmbedding> FileProvider::embed_sentences(const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  if (!sentences_) throw UsageError("file provider: no sentence archive loaded");
  std::vector<SentenceEmbedding> out;
  for (const auto& t : texts) {
    const auto* v = sentences_->find(text_key(t));
    if (!v) throw DataError("file provider: no sentence embedding for \"" + t + "\"");
    out.push_back({widen(*v), t, id()});
  }
  return out;
}

std::vector<TokenEmbeddingSequence> FileProvider::embed_tokens(const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  if (!tokens_) throw UsageError("file provider: no token archive loaded");
  std::vector<TokenEmbeddingSequence> out;
  for (const auto& t : texts) {
    TokenEmbeddingSequence seq;
    seq.provider_id = id();
    seq.tokens = textnorm::tokenize(t);
    for (const auto& tok : seq.tokens) {
      const auto* v = tokens_->find(text_key(tok));
      if (!v) throw DataError("file provider: no token embedding for \"" + tok + "\"");
      seq.vectors.push_back(widen(*v));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

nlohmann::json sentence_response(const std::vector<SentenceEmbedding>& embeddings) {
  nlohmann::json j;
  j["dim"] = embeddings.empty() ? 0 : embeddings.front().vector.size();
  j["vectors"] = nlohmann::json::array();
  for (const auto& e : embeddings) {
    j["vectors"].push_back(std::vector<float>(e.vector.begin(), e.vector.end()));
  }
  return j;
}

nlohmann::json token_response(const std::vector<TokenEmbeddingSequence>& sequences) {
  nlohmann::json j;
  std::size_t dim = 0;
  for (const auto& s : sequences) {
    if (!s.vectors.empty()) dim = s.vectors.front().size();
  }
  j["dim"] = dim;
  j["sequences"] = nlohmann::json::array();
  j["tokens"] = nlohmann::json::array();
  for (const auto& s : sequences) {
    nlohmann::json seq = nlohmann::json::array();
    for (const auto& v : s.vectors) seq.push_back(std::vector<float>(v.begin(), v.end()));
    j["sequences"].push_back(std::move(seq));
    j["tokens"].push_back(s.tokens);
  }
  return j;
}

}  // namespace elnkit::embed
