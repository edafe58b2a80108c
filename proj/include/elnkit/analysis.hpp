#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "elnkit/types.hpp"

namespace elnkit::analysis {

struct UtteranceRow {
  std::string id;
  double wer_percent = 0.0;
  double eln_magnitude = 0.0;
};

struct ConditionReport {
  Condition condition = Condition::clean;
  std::string system;
  WERBreakdown pooled;
  std::vector<UtteranceRow> per_utterance;
};

struct ConditionTable {
  std::vector<std::string> systems;       // row order: first appearance
  std::vector<Condition> conditions;      // present ones, in the order clean, mixed, snr5, snr10
  // cells[row][col]; nullopt marks a missing (system, condition) pair.
  std::vector<std::vector<std::optional<double>>> cells;

  std::optional<double> at(const std::string& system, Condition c) const;
};

// Throws DataError on a duplicate (system, condition).
ConditionTable condition_table(const std::vector<ConditionReport>& reports);
// Header "system,<condition>,..."; missing cells are written as NA.
std::string to_csv(const ConditionTable& t);

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline const std::vector<double> kDefaultBinEdges = {0.0, 5.0, 10.0, 20.0, 40.0, kInf};

struct BinStats {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::optional<double> median_wer;
  std::optional<double> q1;
  std::optional<double> q3;
  std::optional<double> iqr;
  std::size_t outlier_count = 0;  // WER > Q3 + 1.5 IQR
};

struct StudyResult {
  std::vector<BinStats> bins;
  std::size_t total = 0;
  std::optional<double> pearson;   // nullopt when either variable is constant
  std::optional<double> spearman;
};

// Bins are [e_k, e_k+1) except the last, which is closed. Quantiles use linear
// interpolation between order statistics. Throws DataError for fewer than two
// pairs, edges that are not strictly increasing, or a magnitude outside the
// edges.
StudyResult magnitude_wer_study(const std::vector<std::pair<double, double>>& pairs,
                                const std::vector<double>& bin_edges = kDefaultBinEdges);

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);
// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(const std::vector<double>& v);
// Linear-interpolation quantile of sorted data, q in [0, 1].
double quantile_sorted(const std::vector<double>& sorted, double q);

nlohmann::ordered_json to_json(const StudyResult& s);

// Parses "0,5,10,20,40,inf".
std::vector<double> parse_bin_edges(const std::string& text);

}  // namespace elnkit::analysis
