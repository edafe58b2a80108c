#include "elnkit/dataset.hpp"

#include <fstream>
#include <istream>
#include <limits>

#include "elnkit/errors.hpp"
#include "elnkit/rng.hpp"

namespace elnkit {

namespace {

using nlohmann::json;

constexpr std::uint64_t kPadStream = 0x7061640000000000ULL;  // "pad"

[[noreturn]] void field_error(std::size_t line_no, std::string_view field, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": field \"" + std::string(field) + "\": " + what);
}

const json& require(const json& obj, std::size_t line_no, std::string_view field) {
  auto it = obj.find(field);
  if (it == obj.end()) field_error(line_no, field, "missing");
  return *it;
}

std::string require_string(const json& obj, std::size_t line_no, std::string_view field) {
  const json& v = require(obj, line_no, field);
  if (!v.is_string()) field_error(line_no, field, "expected a string");
  return v.get<std::string>();
}

}  // namespace

UtteranceRecord parse_record(std::string_view line, std::size_t line_no, const LoadOptions& opts) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
  }
  if (!obj.is_object()) throw DataError("line " + std::to_string(line_no) + ": expected a JSON object");

  const json& schema = require(obj, line_no, "schema");
  if (!schema.is_number_integer() || schema.get<int>() != kDatasetSchemaVersion) {
    field_error(line_no, "schema", "unsupported version (expected 1)");
  }

  UtteranceRecord r;
  r.id = require_string(obj, line_no, "id");
  if (r.id.empty()) field_error(line_no, "id", "must not be empty");

  if (auto it = obj.find("audio_path"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) field_error(line_no, "audio_path", "expected a string or null");
    r.audio_path = it->get<std::string>();
  }
  r.reference = require_string(obj, line_no, "reference");

  const json& hyps = require(obj, line_no, "hypotheses");
  if (!hyps.is_array()) field_error(line_no, "hypotheses", "expected an array");
  for (const auto& h : hyps) {
    if (!h.is_string()) field_error(line_no, "hypotheses", "entries must be strings");
    r.hypotheses.push_back(h.get<std::string>());
  }

  r.condition = [&] {
    const auto name = require_string(obj, line_no, "condition");
    try {
      return parse_condition(name);
    } catch (const DataError& e) {
      field_error(line_no, "condition", e.what());
    }
  }();

  if (auto it = obj.find("snr_db"); it != obj.end() && !it->is_null()) {
    if (!it->is_number()) field_error(line_no, "snr_db", "expected a number or null");
    r.snr_db = it->get<double>();
  }

  const json& seed = require(obj, line_no, "seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
    field_error(line_no, "seed", "expected an unsigned integer");
  }
  r.seed = seed.get<std::uint64_t>();

  bool pad = false;
  if (auto it = obj.find("pad"); it != obj.end()) {
    if (!it->is_boolean()) field_error(line_no, "pad", "expected a boolean");
    pad = it->get<bool>();
  }
  if (pad && !r.hypotheses.empty() && r.hypotheses.size() <= kHypothesisCount) {
    Rng rng(derive_seed(r.seed, kPadStream));
    r.hypotheses = dedup_and_pad(r.hypotheses, kHypothesisCount, rng, opts.pad_sampling);
  }

  try {
    validate_condition(r);
  } catch (const DataError& e) {
    throw DataError("line " + std::to_string(line_no) + ": " + e.what());
  }

  if (opts.require_normalized) {
    static const auto kDefaults = textnorm::NormalizationConfig::defaults();
    const auto& cfg = opts.normalization ? *opts.normalization : kDefaults;
    auto check = [&](std::string_view field, const std::string& s) {
      if (textnorm::normalize(s, cfg) != s) field_error(line_no, field, "text is not normalized");
    };
    check("reference", r.reference);
    for (const auto& h : r.hypotheses) check("hypotheses", h);
  }
  return r;
}

nlohmann::ordered_json to_json(const UtteranceRecord& r) {
  nlohmann::ordered_json j;
  j["schema"] = kDatasetSchemaVersion;
  j["id"] = r.id;
  j["audio_path"] = r.audio_path ? nlohmann::ordered_json(*r.audio_path) : nlohmann::ordered_json(nullptr);
  j["reference"] = r.reference;
  j["hypotheses"] = r.hypotheses;
  j["condition"] = to_string(r.condition);
  j["snr_db"] = r.snr_db ? nlohmann::ordered_json(*r.snr_db) : nlohmann::ordered_json(nullptr);
  j["seed"] = r.seed;
  return j;
}

std::string to_json_line(const UtteranceRecord& r) { return to_json(r).dump(); }

std::vector<UtteranceRecord> read_dataset(std::istream& in, const LoadOptions& opts) {
  // Parse the default tables once rather than per record.
  LoadOptions local = opts;
  textnorm::NormalizationConfig defaults;
  if (local.require_normalized && !local.normalization) {
    defaults = textnorm::NormalizationConfig::defaults();
    local.normalization = &defaults;
  }
  std::vector<UtteranceRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_record(line, line_no, local));
  }
  return out;
}

std::vector<UtteranceRecord> load_dataset(const std::filesystem::path& path, const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_dataset(in, opts);
}

void save_dataset(const std::vector<UtteranceRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << to_json_line(r) << '\n';
}

}  // namespace elnkit
