#include "elnkit/eln.hpp"

#include <algorithm>
#include <cmath>

#include "elnkit/errors.hpp"

namespace elnkit::eln {

double ELNVector::sentence_l2() const { return l2_norm(sentence_part); }
double ELNVector::token_l2() const { return l2_norm(token_part); }

std::vector<double> ELNVector::concatenated() const {
  std::vector<double> out(sentence_part);
  out.insert(out.end(), token_part.begin(), token_part.end());
  return out;
}

double l2_norm(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (double x : a) sum += x * x;
  for (double x : b) sum += x * x;
  return std::sqrt(sum);
}

std::vector<double> mean_pairwise_sq_diff(std::span<const std::span<const double>> vectors) {
  const std::size_t n = vectors.size();
  if (n < 2) throw DataError("ELN needs at least two hypotheses, got " + std::to_string(n));
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim) {
      throw DataError("ELN: embedding dimensions differ (" + std::to_string(dim) + " vs " +
                      std::to_string(v.size()) + ")");
    }
    for (double x : v) {
      if (!std::isfinite(x)) throw DataError("ELN: non-finite embedding entry");
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  std::vector<double> out(dim);
  std::vector<double> column(n);
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t i = 0; i < n; ++i) column[i] = vectors[i][c];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double diff = column[i] - column[j];
        sum += diff * diff;
      }
    }
    out[c] = sum / pairs;
  }
  return out;
}

std::vector<double> sentence_eln(const std::vector<embed::SentenceEmbedding>& embeddings) {
  std::vector<std::span<const double>> views;
  views.reserve(embeddings.size());
  for (const auto& e : embeddings) views.emplace_back(e.vector);
  return mean_pairwise_sq_diff(views);
}

std::vector<double> token_eln(const std::vector<embed::TokenEmbeddingSequence>& sequences) {
  const std::size_t n = sequences.size();
  if (n < 2) throw DataError("ELN needs at least two hypotheses, got " + std::to_string(n));
  std::size_t l_max = 0;
  std::size_t dim = 0;
  for (const auto& s : sequences) {
    if (s.vectors.size() != s.tokens.size()) throw DataError("ELN: token and vector counts differ");
    l_max = std::max(l_max, s.vectors.size());
    if (dim == 0 && !s.vectors.empty()) dim = s.vectors.front().size();
  }
  if (l_max == 0) throw DataError("ELN: every hypothesis is empty (L_max = 0)");

  const std::vector<double> zero(dim, 0.0);
  std::vector<double> total(dim, 0.0);
  std::vector<std::span<const double>> views(n);
  for (std::size_t k = 0; k < l_max; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      views[i] = k < sequences[i].vectors.size() ? std::span<const double>(sequences[i].vectors[k])
                                                 : std::span<const double>(zero);
    }
    const auto at_k = mean_pairwise_sq_diff(views);
    for (std::size_t c = 0; c < dim; ++c) total[c] += at_k[c];
  }
  for (auto& x : total) x /= static_cast<double>(l_max);
  return total;
}

ELNVector compute_eln(const std::vector<std::string>& hypotheses, embed::Provider& sentence_provider,
                      embed::Provider& token_provider, const ElnOptions& opts) {
  if (opts.expected_hypotheses < 2) throw UsageError("ELN: expected_hypotheses must be >= 2");
  if (hypotheses.size() != opts.expected_hypotheses) {
    throw DataError("ELN: expected " + std::to_string(opts.expected_hypotheses) + " hypotheses, got " +
                    std::to_string(hypotheses.size()));
  }
  const auto sentences = sentence_provider.embed_sentences(hypotheses);
  const auto tokens = token_provider.embed_tokens(hypotheses);
  if (sentences.size() != hypotheses.size() || tokens.size() != hypotheses.size()) {
    throw ProtocolError("ELN: provider returned a different batch size");
  }
  ELNVector v;
  v.sentence_part = sentence_eln(sentences);
  v.token_part = token_eln(tokens);
  v.n_hypotheses = hypotheses.size();
  for (const auto& s : tokens) v.l_max = std::max(v.l_max, s.vectors.size());
  v.magnitude = l2_norm(v.sentence_part, v.token_part);
  return v;
}

}  // namespace elnkit::eln
