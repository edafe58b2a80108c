#include "elnkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "elnkit/errors.hpp"

namespace elnkit::analysis {

std::optional<double> ConditionTable::at(const std::string& system, Condition c) const {
  const auto row = std::find(systems.begin(), systems.end(), system);
  const auto col = std::find(conditions.begin(), conditions.end(), c);
  if (row == systems.end() || col == conditions.end()) return std::nullopt;
  return cells[static_cast<std::size_t>(row - systems.begin())][static_cast<std::size_t>(col - conditions.begin())];
}

ConditionTable condition_table(const std::vector<ConditionReport>& reports) {
  ConditionTable t;
  for (auto c : kAllConditions) {
    if (std::any_of(reports.begin(), reports.end(), [&](const ConditionReport& r) { return r.condition == c; })) {
      t.conditions.push_back(c);
    }
  }
  for (const auto& r : reports) {
    if (std::find(t.systems.begin(), t.systems.end(), r.system) == t.systems.end()) {
      t.systems.push_back(r.system);
      t.cells.emplace_back(t.conditions.size());
    }
  }
  for (const auto& r : reports) {
    const auto row = static_cast<std::size_t>(std::find(t.systems.begin(), t.systems.end(), r.system) - t.systems.begin());
    const auto col = static_cast<std::size_t>(
        std::find(t.conditions.begin(), t.conditions.end(), r.condition) - t.conditions.begin());
    auto& cell = t.cells[row][col];
    if (cell) {
      throw DataError("condition table: duplicate report for system \"" + r.system + "\", condition " +
                      std::string(to_string(r.condition)));
    }
    cell = r.pooled.wer_percent;
  }
  return t;
}

std::string to_csv(const ConditionTable& t) {
  std::ostringstream out;
  out.precision(17);
  out << "system";
  for (auto c : t.conditions) out << ',' << to_string(c);
  out << '\n';
  for (std::size_t r = 0; r < t.systems.size(); ++r) {
    out << t.systems[r];
    for (const auto& cell : t.cells[r]) {
      out << ',';
      if (cell) {
        out << *cell;
      } else {
        out << "NA";
      }
    }
    out << '\n';
  }
  return out.str();
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw UsageError("quantile outside [0, 1]");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DataError("correlation: samples differ in length");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DataError("correlation: samples differ in length");
  return pearson(average_ranks(x), average_ranks(y));
}

StudyResult magnitude_wer_study(const std::vector<std::pair<double, double>>& pairs,
                                const std::vector<double>& bin_edges) {
  if (pairs.size() < 2) throw DataError("magnitude study needs at least two pairs, got " + std::to_string(pairs.size()));
  if (bin_edges.size() < 2) throw DataError("magnitude study needs at least two bin edges");
  for (std::size_t i = 0; i < bin_edges.size(); ++i) {
    if (std::isnan(bin_edges[i]) || (i > 0 && !(bin_edges[i] > bin_edges[i - 1]))) {
      throw DataError("bin edges must be strictly increasing");
    }
  }
  std::vector<std::vector<double>> per_bin(bin_edges.size() - 1);
  std::vector<double> mags;
  std::vector<double> wers;
  for (const auto& [mag, wer] : pairs) {
    if (!std::isfinite(mag) || !std::isfinite(wer)) throw DataError("magnitude study: non-finite value");
    if (mag < bin_edges.front() || mag > bin_edges.back()) {
      throw DataError("magnitude " + std::to_string(mag) + " lies outside the bin edges");
    }
    auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), mag);
    auto bin = static_cast<std::size_t>(it - bin_edges.begin()) - 1;
    if (bin == per_bin.size()) --bin;  // closed last bin
    per_bin[bin].push_back(wer);
    mags.push_back(mag);
    wers.push_back(wer);
  }
  StudyResult s;
  s.total = pairs.size();
  for (std::size_t b = 0; b < per_bin.size(); ++b) {
    BinStats st;
    st.lo = bin_edges[b];
    st.hi = bin_edges[b + 1];
    auto& v = per_bin[b];
    st.count = v.size();
    if (!v.empty()) {
      std::sort(v.begin(), v.end());
      st.median_wer = quantile_sorted(v, 0.5);
      st.q1 = quantile_sorted(v, 0.25);
      st.q3 = quantile_sorted(v, 0.75);
      st.iqr = *st.q3 - *st.q1;
      const double fence = *st.q3 + 1.5 * *st.iqr;
      st.outlier_count = static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [&](double w) { return w > fence; }));
    }
    s.bins.push_back(st);
  }
  s.pearson = pearson(mags, wers);
  s.spearman = spearman(mags, wers);
  return s;
}

namespace {
nlohmann::ordered_json number_or_null(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}
nlohmann::ordered_json edge(double e) {
  if (std::isinf(e)) return e > 0 ? "inf" : "-inf";
  return e;
}
}  // namespace

nlohmann::ordered_json to_json(const StudyResult& s) {
  nlohmann::ordered_json j;
  j["total"] = s.total;
  j["pearson"] = number_or_null(s.pearson);
  j["spearman"] = number_or_null(s.spearman);
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : s.bins) {
    nlohmann::ordered_json o;
    o["lo"] = edge(b.lo);
    o["hi"] = edge(b.hi);
    o["count"] = b.count;
    o["median_wer"] = number_or_null(b.median_wer);
    o["q1"] = number_or_null(b.q1);
    o["q3"] = number_or_null(b.q3);
    o["iqr"] = number_or_null(b.iqr);
    o["outlier_count"] = b.outlier_count;
    bins.push_back(std::move(o));
  }
  j["bins"] = std::move(bins);
  return j;
}

std::vector<double> parse_bin_edges(const std::string& text) {
  std::vector<double> edges;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item == "inf" || item == "+inf") {
      edges.push_back(kInf);
      continue;
    }
    try {
      std::size_t used = 0;
      edges.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad bin edge \"" + item + "\"");
    }
  }
  if (edges.size() < 2) throw UsageError("need at least two bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw UsageError("bin edges must be strictly increasing");
  }
  return edges;
}

}  // namespace elnkit::analysis
