#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "elnkit/embed.hpp"

namespace elnkit::eln {

struct ELNVector {
  std::vector<double> sentence_part;  // length d
  std::vector<double> token_part;     // length d'
  double magnitude = 0.0;             // L2 norm of sentence_part || token_part
  std::size_t n_hypotheses = 0;
  std::size_t l_max = 0;

  double sentence_l2() const;
  double token_l2() const;
  // sentence_part followed by token_part.
  std::vector<double> concatenated() const;

  bool operator==(const ELNVector&) const = default;
};

// Mean over the n(n-1)/2 unordered pairs of element-wise squared
// differences. Every coordinate's pair sum runs over that coordinate's
// values in sorted order, so the result is bit-identical under any
// permutation of the inputs. Throws DataError for n < 2 or ragged dimensions.
std::vector<double> mean_pairwise_sq_diff(std::span<const std::span<const double>> vectors);

std::vector<double> sentence_eln(const std::vector<embed::SentenceEmbedding>& embeddings);

// Sequences are padded with zero vectors to L_max = max length; every
// position, padded or not, contributes equally to the 1/L_max average.
// Throws DataError when every sequence is empty, for n < 2, or for ragged
// dimensions.
std::vector<double> token_eln(const std::vector<embed::TokenEmbeddingSequence>& sequences);

double l2_norm(std::span<const double> a, std::span<const double> b = {});

struct ElnOptions {
  std::size_t expected_hypotheses = 5;  // must be >= 2
};

ELNVector compute_eln(const std::vector<std::string>& hypotheses, embed::Provider& sentence_provider,
                      embed::Provider& token_provider, const ElnOptions& opts = {});

}  // namespace elnkit::eln
