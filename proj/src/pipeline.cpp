#include "elnkit/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "elnkit/audio.hpp"
#include "elnkit/dataset.hpp"
#include "elnkit/eln.hpp"
#include "elnkit/hash.hpp"
#include "elnkit/llm.hpp"
#include "elnkit/parallel.hpp"
#include "elnkit/projector.hpp"
#include "elnkit/textnorm.hpp"

namespace elnkit::pipeline {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

StageError::StageError(std::string stage, std::string record_id, const std::string& what, int exit_code)
    : Error("stage " + stage + (record_id.empty() ? "" : ", record " + record_id) + ": " + what),
      stage_(std::move(stage)),
      record_id_(std::move(record_id)),
      exit_code_(exit_code) {}

// ---------------------------------------------------------------- config

namespace {

ojson mix_json(const MixConfig& m) {
  ojson j;
  j["clean_manifest"] = m.clean_manifest;
  j["noise_dir"] = m.noise_dir;
  auto conds = ojson::array();
  for (auto c : m.conditions) conds.push_back(std::string(to_string(c)));
  j["conditions"] = conds;
  j["count"] = m.count;
  j["seed"] = m.seed;
  return j;
}

ojson provider_json(const ProviderConfig& p) {
  ojson j;
  j["kind"] = p.kind;
  j["sentence_dim"] = p.sentence_dim;
  j["token_dim"] = p.token_dim;
  j["sentence_archive"] = p.sentence_archive;
  j["token_archive"] = p.token_archive;
  j["url"] = p.url;
  return j;
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  try {
    out = j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("config: " + where + key + " has the wrong type");
  }
}

void take_seed(const nlohmann::json& j, const char* key, std::uint64_t& out, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    throw DataError("config: " + where + key + " must be an unsigned integer");
  }
  out = j.get<std::uint64_t>();
}

void merge_mix(MixConfig& m, const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("config: mix must be an object or null");
  for (const auto& [key, v] : j.items()) {
    if (key == "clean_manifest") {
      take(v, "clean_manifest", m.clean_manifest, "mix.");
    } else if (key == "noise_dir") {
      take(v, "noise_dir", m.noise_dir, "mix.");
    } else if (key == "conditions") {
      std::vector<std::string> names;
      take(v, "conditions", names, "mix.");
      m.conditions.clear();
      for (const auto& n : names) m.conditions.push_back(parse_condition(n));
    } else if (key == "count") {
      take(v, "count", m.count, "mix.");
    } else if (key == "seed") {
      take_seed(v, "seed", m.seed, "mix.");
    } else {
      throw DataError("config: unknown key mix." + key);
    }
  }
}

void merge_provider(ProviderConfig& p, const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("config: provider must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "kind") {
      take(v, "kind", p.kind, "provider.");
    } else if (key == "sentence_dim") {
      take(v, "sentence_dim", p.sentence_dim, "provider.");
    } else if (key == "token_dim") {
      take(v, "token_dim", p.token_dim, "provider.");
    } else if (key == "sentence_archive") {
      take(v, "sentence_archive", p.sentence_archive, "provider.");
    } else if (key == "token_archive") {
      take(v, "token_archive", p.token_archive, "provider.");
    } else if (key == "url") {
      take(v, "url", p.url, "provider.");
    } else {
      throw DataError("config: unknown key provider." + key);
    }
  }
}

}  // namespace

ojson to_json(const PipelineConfig& c) {
  ojson j;
  j["dataset"] = c.dataset;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["mix"] = c.mix ? mix_json(*c.mix) : ojson(nullptr);
  j["provider"] = provider_json(c.provider);
  j["endpoint"] = c.endpoint;
  j["weights"] = c.weights;
  j["system"] = c.system;
  j["jobs"] = c.jobs;
  j["small_number_limit"] = c.small_number_limit;
  j["rules_dir"] = c.rules_dir;
  j["bin_edges"] = c.bin_edges;
  j["max_tokens"] = c.max_tokens;
  j["temperature"] = c.temperature;
  return j;
}

void merge_json(PipelineConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("config: top level must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "dataset") {
      take(v, "dataset", c.dataset, "");
    } else if (key == "out_dir") {
      take(v, "out_dir", c.out_dir, "");
    } else if (key == "seed") {
      take_seed(v, "seed", c.seed, "");
    } else if (key == "mix") {
      if (v.is_null()) {
        c.mix.reset();
      } else {
        if (!c.mix) c.mix.emplace();
        merge_mix(*c.mix, v);
      }
    } else if (key == "provider") {
      merge_provider(c.provider, v);
    } else if (key == "endpoint") {
      take(v, "endpoint", c.endpoint, "");
    } else if (key == "weights") {
      take(v, "weights", c.weights, "");
    } else if (key == "system") {
      take(v, "system", c.system, "");
    } else if (key == "jobs") {
      take(v, "jobs", c.jobs, "");
    } else if (key == "small_number_limit") {
      take_seed(v, "small_number_limit", c.small_number_limit, "");
    } else if (key == "rules_dir") {
      take(v, "rules_dir", c.rules_dir, "");
    } else if (key == "bin_edges") {
      take(v, "bin_edges", c.bin_edges, "");
    } else if (key == "max_tokens") {
      take(v, "max_tokens", c.max_tokens, "");
    } else if (key == "temperature") {
      take(v, "temperature", c.temperature, "");
    } else {
      throw DataError("config: unknown key " + key);
    }
  }
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  PipelineConfig c;
  merge_json(c, j);
  return c;
}

void save_config(const PipelineConfig& c, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

namespace {

void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) throw UsageError(what + " is not set");
  if (!fs::is_regular_file(path)) throw UsageError(what + " " + path + " is not a readable file");
}

void require_dir(const std::string& what, const std::string& path) {
  if (!fs::is_directory(path)) throw UsageError(what + " " + path + " is not a directory");
}

constexpr std::string_view kFixturePrefix = "mock:fixture=";

}  // namespace

void validate(const PipelineConfig& c) {
  require_file("dataset", c.dataset);
  if (c.out_dir.empty()) throw UsageError("out_dir is not set");
  if (c.mix) {
    require_file("mix.clean_manifest", c.mix->clean_manifest);
    if (c.mix->conditions.empty()) throw UsageError("mix.conditions is empty");
    if (c.mix->count == 0) throw UsageError("mix.count must be positive");
    const bool needs_noise = std::any_of(c.mix->conditions.begin(), c.mix->conditions.end(),
                                         [](Condition k) { return k != Condition::clean; });
    if (needs_noise) {
      require_dir("mix.noise_dir", c.mix->noise_dir);
      if (audio::list_noise_files(c.mix->noise_dir).empty()) {
        throw UsageError("mix.noise_dir " + c.mix->noise_dir + " holds no .wav files");
      }
    }
  }
  const auto& p = c.provider;
  if (p.kind == "test") {
    if (p.sentence_dim == 0 || p.token_dim == 0) throw UsageError("provider dimensions must be positive");
  } else if (p.kind == "file") {
    require_file("provider.sentence_archive", p.sentence_archive);
    require_file("provider.token_archive", p.token_archive);
  } else if (p.kind == "service") {
    if (p.url.empty()) throw UsageError("provider.url is not set");
  } else {
    throw UsageError("provider.kind must be test, file or service, got \"" + p.kind + "\"");
  }
  if (c.endpoint.rfind(kFixturePrefix, 0) == 0) {
    require_file("endpoint fixture", c.endpoint.substr(kFixturePrefix.size()));
  } else if (c.endpoint != "mock" && c.endpoint != "mock:echo" && c.endpoint.rfind("http://", 0) != 0) {
    throw UsageError("endpoint must be mock, mock:echo, mock:fixture=PATH or an http:// URL, got \"" + c.endpoint + "\"");
  }
  if (!c.weights.empty()) require_file("weights", c.weights);
  if (!c.rules_dir.empty()) require_dir("rules_dir", c.rules_dir);
  if (c.system.empty() || c.system == "raw") throw UsageError("system label must be non-empty and not \"raw\"");
  if (c.system.find_first_of(",\"\n") != std::string::npos) throw UsageError("system label holds a CSV delimiter");
  if (c.jobs == 0) throw UsageError("jobs must be at least 1");
  if (c.small_number_limit > textnorm::kMaxSmallNumberLimit) throw UsageError("small_number_limit is too large");
  analysis::parse_bin_edges(c.bin_edges);
  if (c.max_tokens <= 0) throw UsageError("max_tokens must be positive");
  if (!(c.temperature >= 0.0)) throw UsageError("temperature must be >= 0");
}

// ---------------------------------------------------------------- artifacts

Providers make_providers(const ProviderConfig& p) {
  if (p.kind == "test") {
    return {std::make_shared<embed::TestEmbedder>(p.sentence_dim), std::make_shared<embed::TestEmbedder>(p.token_dim)};
  }
  if (p.kind == "file") {
    std::shared_ptr<embed::Provider> f = embed::FileProvider::open(p.sentence_archive, p.token_archive);
    return {f, f};
  }
  if (p.kind == "service") {
    std::shared_ptr<embed::Provider> s = std::make_shared<embed::ServiceProvider>(embed::ServiceOptions{p.url});
    return {s, s};
  }
  throw UsageError("unknown provider kind \"" + p.kind + "\"");
}

ojson to_json(const ElnRow& r) {
  ojson j;
  j["id"] = r.id;
  j["condition"] = std::string(to_string(r.condition));
  j["magnitude"] = r.magnitude;
  j["sentence_l2"] = r.sentence_l2;
  j["token_l2"] = r.token_l2;
  j["n_hypotheses"] = r.n_hypotheses;
  j["l_max"] = r.l_max;
  j["d"] = r.d;
  j["d_prime"] = r.d_prime;
  return j;
}

std::vector<ElnRow> read_eln_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<ElnRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ElnRow r;
      r.id = j.at("id").get<std::string>();
      r.condition = parse_condition(j.at("condition").get<std::string>());
      r.magnitude = j.at("magnitude").get<double>();
      r.sentence_l2 = j.value("sentence_l2", 0.0);
      r.token_l2 = j.value("token_l2", 0.0);
      r.n_hypotheses = j.value("n_hypotheses", std::size_t{0});
      r.l_max = j.value("l_max", std::size_t{0});
      r.d = j.value("d", std::size_t{0});
      r.d_prime = j.value("d_prime", std::size_t{0});
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write_eln_rows(const std::vector<ElnRow>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : rows) out << to_json(r).dump() << '\n';
}

namespace {
constexpr std::string_view kWerHeader = "id,condition,system,S,D,I,N,wer_percent";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace

void write_wer_rows(const std::vector<WerRow>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << kWerHeader << '\n';
  out << std::setprecision(17);
  for (const auto& r : rows) {
    if (r.id.find_first_of(",\"\n") != std::string::npos) throw DataError("record id " + r.id + " holds a CSV delimiter");
    const auto& b = r.breakdown;
    out << r.id << ',' << to_string(r.condition) << ',' << r.system << ',' << b.substitutions << ',' << b.deletions
        << ',' << b.insertions << ',' << b.reference_words << ',' << b.wer_percent << '\n';
  }
}

std::vector<WerRow> read_wer_rows(const fs::path& path, const std::string& system_override) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kWerHeader) throw DataError(path.string() + ": unexpected header \"" + line + "\"");
  std::vector<WerRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ": line " + std::to_string(line_no) + ": ";
    if (f.size() != 8) throw DataError(where + "expected 8 fields");
    try {
      std::size_t counts[4];
      for (int k = 0; k < 4; ++k) {
        std::size_t used = 0;
        const auto v = std::stoull(f[3 + k], &used);
        if (used != f[3 + k].size() || f[3 + k].front() == '-') throw std::invalid_argument(f[3 + k]);
        counts[k] = v;
      }
      WerRow r;
      r.id = f[0];
      r.condition = parse_condition(f[1]);
      r.system = system_override.empty() ? f[2] : system_override;
      r.breakdown = make_breakdown(counts[0], counts[1], counts[2], counts[3]);
      rows.push_back(std::move(r));
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    } catch (const std::exception&) {
      throw DataError(where + "bad count");
    }
  }
  return rows;
}

std::vector<analysis::ConditionReport> build_reports(const std::vector<WerRow>& wer, const std::vector<ElnRow>& eln) {
  std::map<std::string, double> magnitude;
  for (const auto& e : eln) magnitude[e.id] = e.magnitude;
  std::vector<analysis::ConditionReport> reports;
  std::map<std::pair<std::string, Condition>, std::size_t> index;
  std::map<std::pair<std::string, Condition>, std::set<std::string>> seen;
  for (const auto& r : wer) {
    const auto key = std::make_pair(r.system, r.condition);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, reports.size()).first;
      analysis::ConditionReport rep;
      rep.condition = r.condition;
      rep.system = r.system;
      reports.push_back(std::move(rep));
    }
    if (!seen[key].insert(r.id).second) {
      throw DataError("duplicate utterance " + r.id + " for system " + r.system);
    }
    auto& rep = reports[it->second];
    const auto m = magnitude.find(r.id);
    rep.per_utterance.push_back({r.id, r.breakdown.wer_percent, m == magnitude.end() ? 0.0 : m->second});
    const auto& p = rep.pooled;
    rep.pooled = make_breakdown(p.substitutions + r.breakdown.substitutions, p.deletions + r.breakdown.deletions,
                                p.insertions + r.breakdown.insertions, p.reference_words + r.breakdown.reference_words);
  }
  return reports;
}

std::vector<std::pair<double, double>> study_pairs(const std::vector<WerRow>& wer, const std::vector<ElnRow>& eln,
                                                   const std::string& system) {
  std::map<std::string, double> magnitude;
  for (const auto& e : eln) magnitude[e.id] = e.magnitude;
  std::vector<std::pair<double, double>> pairs;
  for (const auto& r : wer) {
    if (r.system != system) continue;
    if (auto m = magnitude.find(r.id); m != magnitude.end()) pairs.emplace_back(m->second, r.breakdown.wer_percent);
  }
  return pairs;
}

ElnBatch compute_batch(const std::vector<UtteranceRecord>& records, const Providers& providers, unsigned jobs) {
  ElnBatch batch;
  batch.vectors.resize(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    try {
      batch.vectors[i] = eln::compute_eln(records[i].hypotheses, *providers.sentence, *providers.token);
    } catch (const std::exception& e) {
      throw StageError("eln", records[i].id, e.what(), exit_code_for(e));
    }
  });
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& v = batch.vectors[i];
    batch.rows.push_back({records[i].id, records[i].condition, v.magnitude, v.sentence_l2(), v.token_l2(),
                          v.n_hypotheses, v.l_max, v.sentence_part.size(), v.token_part.size()});
  }
  return batch;
}

embed::Archive vectors_archive(const ElnBatch& batch) {
  const std::size_t dim = batch.vectors.empty() ? 0 : batch.vectors.front().concatenated().size();
  embed::Archive archive(static_cast<std::uint32_t>(dim));
  std::set<std::uint64_t> keys;
  for (std::size_t i = 0; i < batch.rows.size(); ++i) {
    const auto key = text_key(batch.rows[i].id);
    if (!keys.insert(key).second) throw DataError("record id " + batch.rows[i].id + " repeats a vector key");
    archive.put_text(batch.rows[i].id, batch.vectors[i].concatenated());
  }
  return archive;
}

std::vector<projector::PrefixEntry> project_rows(const std::vector<ElnRow>& rows, const embed::Archive& vectors,
                                                 const projector::ProjectorWeights& w, unsigned jobs) {
  std::vector<projector::PrefixEntry> out(rows.size());
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    try {
      const auto* v = vectors.find(text_key(rows[i].id));
      if (!v) throw DataError("no ELN vector in the archive");
      const std::vector<double> input(v->begin(), v->end());
      out[i] = {rows[i].id, projector::project(input, w)};
    } catch (const std::exception& e) {
      throw StageError("project", rows[i].id, e.what(), exit_code_for(e));
    }
  });
  return out;
}

// ---------------------------------------------------------------- stages

namespace {

std::vector<std::string> files_under(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "stamp.json") out.push_back(std::move(rel));
  }
  std::sort(out.begin(), out.end());
  return out;
}

ojson digest_dir(const fs::path& dir) {
  ojson out = ojson::object();
  for (const auto& rel : files_under(dir)) out[rel] = sha256_file_hex(dir / rel);
  return out;
}

std::string hash_json(const ojson& j) { return sha256_hex(j.dump()); }

struct StageRun {
  std::string name;
  fs::path dir;
  std::string input_hash;
  ojson outputs;  // relative path -> sha256
  bool skipped = false;

  std::string output_hash() const { return hash_json(outputs); }
};

// Returns the stamp's outputs when the stage is up to date.
std::optional<ojson> fresh_outputs(const fs::path& dir, const std::string& input_hash) {
  const auto stamp_path = dir / "stamp.json";
  if (!fs::is_regular_file(stamp_path)) return std::nullopt;
  try {
    std::ifstream in(stamp_path);
    const auto stamp = ojson::parse(in);
    if (stamp.at("input_hash").get<std::string>() != input_hash) return std::nullopt;
    const auto outputs = stamp.at("outputs");
    if (digest_dir(dir) != outputs) return std::nullopt;
    return outputs;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

class Runner {
 public:
  Runner(const PipelineConfig& cfg, std::ostream& log) : cfg_(cfg), log_(log), root_(cfg.out_dir) {}

  template <typename Body>
  StageRun stage(const std::string& name, const ojson& inputs, Body&& body) {
    StageRun run;
    run.name = name;
    run.dir = root_ / name;
    ojson keyed = inputs;
    keyed["stage"] = name;
    keyed["tool_version"] = std::string(kToolVersion);
    run.input_hash = hash_json(keyed);
    if (auto outputs = fresh_outputs(run.dir, run.input_hash)) {
      run.outputs = std::move(*outputs);
      run.skipped = true;
      log_ << "[" << name << "] up to date, skipped\n";
      return run;
    }
    log_ << "[" << name << "] running\n";
    try {
      fs::remove_all(run.dir);
      fs::create_directories(run.dir);
      body(run.dir);
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, "", e.what(), exit_code_for(e));
    }
    run.outputs = digest_dir(run.dir);
    ojson stamp;
    stamp["stage"] = name;
    stamp["input_hash"] = run.input_hash;
    stamp["outputs"] = run.outputs;
    std::ofstream out(run.dir / "stamp.json", std::ios::trunc);
    out << stamp.dump(2) << '\n';
    if (!out) throw StageError(name, "", "cannot write stamp", 2);
    return run;
  }

 private:
  const PipelineConfig& cfg_;
  std::ostream& log_;
  fs::path root_;
};

// Rethrows a per-record failure as a StageError naming the record.
template <typename Fn>
void per_record(const std::string& stage, const std::vector<UtteranceRecord>& records, unsigned jobs, Fn&& fn) {
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    try {
      fn(i);
    } catch (const std::exception& e) {
      throw StageError(stage, records[i].id, e.what(), exit_code_for(e));
    }
  });
}

ojson rules_inputs(const PipelineConfig& cfg) {
  ojson j = ojson::object();
  if (cfg.rules_dir.empty()) return j;
  for (const char* name : {"punctuation.txt", "char_map.txt", "affixes.txt", "number_words.txt"}) {
    const fs::path p = fs::path(cfg.rules_dir) / name;
    if (fs::is_regular_file(p)) j[name] = sha256_file_hex(p);
  }
  return j;
}

textnorm::NormalizationConfig normalization_config(const PipelineConfig& cfg) {
  auto norm = cfg.rules_dir.empty() ? textnorm::NormalizationConfig::defaults()
                                    : textnorm::NormalizationConfig::from_directory(cfg.rules_dir);
  norm.small_number_limit = cfg.small_number_limit;
  textnorm::validate(norm);
  return norm;
}

std::vector<UtteranceRecord> load_normalized(const fs::path& path, const textnorm::NormalizationConfig& norm) {
  LoadOptions opts;
  opts.normalization = &norm;
  return load_dataset(path, opts);
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

}  // namespace

RunResult run_pipeline(const PipelineConfig& cfg, std::ostream& log) {
  validate(cfg);
  fs::create_directories(cfg.out_dir);
  const fs::path root(cfg.out_dir);
  Runner runner(cfg, log);
  std::vector<StageRun> runs;

  if (cfg.mix) {
    ojson inputs;
    inputs["mix"] = mix_json(*cfg.mix);
    inputs["clean_manifest"] = sha256_file_hex(cfg.mix->clean_manifest);
    ojson noise = ojson::object();
    if (fs::is_directory(cfg.mix->noise_dir)) {
      for (const auto& f : audio::list_noise_files(cfg.mix->noise_dir)) {
        noise[fs::relative(f, cfg.mix->noise_dir).generic_string()] = sha256_file_hex(f);
      }
    }
    inputs["noise"] = noise;
    runs.push_back(runner.stage("mix", inputs, [&](const fs::path& dir) {
      for (auto condition : cfg.mix->conditions) {
        audio::CorpusOptions opts;
        opts.clean_manifest = cfg.mix->clean_manifest;
        opts.noise_dir = cfg.mix->noise_dir;
        opts.condition = condition;
        opts.count = cfg.mix->count;
        opts.seed = derive_seed(cfg.mix->seed, static_cast<std::uint64_t>(condition));
        opts.out_dir = dir / std::string(to_string(condition));
        opts.jobs = cfg.jobs;
        audio::build_condition_corpus(opts);
      }
    }));
  }

  const auto norm = normalization_config(cfg);

  ojson norm_inputs;
  norm_inputs["dataset"] = sha256_file_hex(cfg.dataset);
  norm_inputs["rules"] = rules_inputs(cfg);
  norm_inputs["small_number_limit"] = cfg.small_number_limit;
  const auto& normalize_run = runs.emplace_back(runner.stage("normalize", norm_inputs, [&](const fs::path& dir) {
    LoadOptions opts;
    opts.require_normalized = false;
    auto records = load_dataset(cfg.dataset, opts);
    std::set<std::string> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.id).second) throw StageError("normalize", r.id, "duplicate record id", 2);
    }
    per_record("normalize", records, cfg.jobs, [&](std::size_t i) {
      auto& r = records[i];
      r.reference = textnorm::normalize(r.reference, norm);
      for (auto& h : r.hypotheses) h = textnorm::normalize(h, norm);
    });
    save_dataset(records, dir / "dataset.jsonl");
  }));
  const std::string normalize_hash = normalize_run.output_hash();
  const fs::path dataset_path = root / "normalize" / "dataset.jsonl";

  ojson eln_inputs;
  eln_inputs["normalize"] = normalize_hash;
  eln_inputs["provider"] = provider_json(cfg.provider);
  if (cfg.provider.kind == "file") {
    eln_inputs["sentence_archive_sha256"] = sha256_file_hex(cfg.provider.sentence_archive);
    eln_inputs["token_archive_sha256"] = sha256_file_hex(cfg.provider.token_archive);
  }
  const std::string eln_hash = runs.emplace_back(runner.stage("eln", eln_inputs, [&](const fs::path& dir) {
    const auto records = load_normalized(dataset_path, norm);
    const auto batch = compute_batch(records, make_providers(cfg.provider), cfg.jobs);
    write_eln_rows(batch.rows, dir / "eln.jsonl");
    vectors_archive(batch).save(dir / "vectors.bin");
  })).output_hash();

  std::optional<std::string> project_hash;
  if (!cfg.weights.empty()) {
    ojson inputs;
    inputs["eln"] = eln_hash;
    inputs["weights_sha256"] = sha256_file_hex(cfg.weights);
    project_hash = runs.emplace_back(runner.stage("project", inputs, [&](const fs::path& dir) {
      const auto weights = projector::load_weights(cfg.weights);
      const auto rows = read_eln_rows(root / "eln" / "eln.jsonl");
      const auto entries = project_rows(rows, embed::Archive::load(root / "eln" / "vectors.bin"), weights, cfg.jobs);
      projector::save_prefixes(entries, dir / "prefixes.bin");
    })).output_hash();
  }

  ojson correct_inputs;
  correct_inputs["normalize"] = normalize_hash;
  correct_inputs["project"] = project_hash ? ojson(*project_hash) : ojson(nullptr);
  correct_inputs["endpoint"] = cfg.endpoint;
  if (cfg.endpoint.rfind(kFixturePrefix, 0) == 0) {
    correct_inputs["fixture_sha256"] = sha256_file_hex(cfg.endpoint.substr(kFixturePrefix.size()));
  }
  correct_inputs["max_tokens"] = cfg.max_tokens;
  correct_inputs["temperature"] = cfg.temperature;
  correct_inputs["seed"] = cfg.seed;
  const std::string correct_hash = runs.emplace_back(runner.stage("correct", correct_inputs, [&](const fs::path& dir) {
    const auto records = load_normalized(dataset_path, norm);
    std::map<std::string, std::shared_ptr<const projector::PrefixMatrix>> prefixes;
    if (project_hash) {
      for (auto& e : projector::load_prefixes(root / "project" / "prefixes.bin")) {
        prefixes[e.id] = std::make_shared<const projector::PrefixMatrix>(std::move(e.matrix));
      }
    }
    std::vector<llm::CorrectionRequest> requests;
    for (const auto& r : records) {
      const auto p = prefixes.find(r.id);
      llm::Decoding decoding{cfg.max_tokens, cfg.temperature, derive_seed(cfg.seed, r.seed)};
      try {
        requests.push_back(llm::make_request(r.id, r.hypotheses, p == prefixes.end() ? nullptr : p->second, decoding));
      } catch (const std::exception& e) {
        throw StageError("correct", r.id, e.what(), exit_code_for(e));
      }
    }
    auto backend = llm::make_backend(cfg.endpoint);
    const auto results = llm::correct_batch(requests, *backend, norm, {}, cfg.jobs);
    std::ofstream out(dir / "hyp.jsonl", std::ios::trunc);
    for (const auto& res : results) {
      if (res.status != llm::Status::ok) {
        log << "[correct] record " << res.id << " flagged " << llm::to_string(res.status) << ": " << res.error << '\n';
      }
      auto j = llm::to_json(res);
      j.erase("error");  // messages can carry host-specific detail
      out << j.dump() << '\n';
    }
    if (!out) throw DataError("cannot write hyp.jsonl");
  })).output_hash();

  ojson wer_inputs;
  wer_inputs["normalize"] = normalize_hash;
  wer_inputs["correct"] = correct_hash;
  wer_inputs["system"] = cfg.system;
  const std::string wer_hash = runs.emplace_back(runner.stage("wer", wer_inputs, [&](const fs::path& dir) {
    const auto records = load_normalized(dataset_path, norm);
    std::map<std::string, llm::CorrectionResult> corrections;
    {
      std::ifstream in(root / "correct" / "hyp.jsonl");
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto c = llm::correction_from_json(nlohmann::json::parse(line));
        corrections[c.id] = std::move(c);
      }
    }
    std::vector<WerRow> corrected_rows(records.size());
    std::vector<WerRow> raw_rows(records.size());
    per_record("wer", records, cfg.jobs, [&](std::size_t i) {
      const auto& r = records[i];
      const auto c = corrections.find(r.id);
      if (c == corrections.end()) throw DataError("no correction for this record");
      const auto ref = textnorm::tokenize(r.reference);
      corrected_rows[i] = {r.id, r.condition, cfg.system, wer::align(ref, textnorm::tokenize(c->second.text)).breakdown};
      raw_rows[i] = {r.id, r.condition, "raw", wer::align(ref, textnorm::tokenize(r.hypotheses.front())).breakdown};
    });
    write_wer_rows(corrected_rows, dir / "per_utt.csv");
    write_wer_rows(raw_rows, dir / "per_utt_raw.csv");

    ojson summary;
    auto systems = ojson::object();
    for (const auto* rows : {&raw_rows, &corrected_rows}) {
      for (const auto& rep : build_reports(*rows, {})) {
        ojson cell;
        cell["substitutions"] = rep.pooled.substitutions;
        cell["deletions"] = rep.pooled.deletions;
        cell["insertions"] = rep.pooled.insertions;
        cell["ref_words"] = rep.pooled.reference_words;
        cell["wer_percent"] = rep.pooled.wer_percent;
        cell["utterances"] = rep.per_utterance.size();
        systems[rep.system][std::string(to_string(rep.condition))] = cell;
      }
    }
    summary["systems"] = systems;
    auto flagged = ojson::array();
    for (const auto& [id, c] : corrections) {
      if (c.status != llm::Status::ok) flagged.push_back({{"id", id}, {"status", std::string(llm::to_string(c.status))}});
    }
    summary["flagged"] = flagged;
    std::ofstream(dir / "summary.json", std::ios::trunc) << summary.dump(2) << '\n';
  })).output_hash();

  ojson analyze_inputs;
  analyze_inputs["wer"] = wer_hash;
  analyze_inputs["eln"] = eln_hash;
  analyze_inputs["bin_edges"] = cfg.bin_edges;
  runs.push_back(runner.stage("analyze", analyze_inputs, [&](const fs::path& dir) {
    auto rows = read_wer_rows(root / "wer" / "per_utt_raw.csv");
    const auto corrected = read_wer_rows(root / "wer" / "per_utt.csv");
    rows.insert(rows.end(), corrected.begin(), corrected.end());
    const auto eln_rows = read_eln_rows(root / "eln" / "eln.jsonl");
    std::ofstream(dir / "table.csv", std::ios::trunc) << analysis::to_csv(analysis::condition_table(build_reports(rows, eln_rows)));
    const auto pairs = study_pairs(rows, eln_rows, "raw");
    ojson study = pairs.size() >= 2 ? analysis::to_json(analysis::magnitude_wer_study(pairs, analysis::parse_bin_edges(cfg.bin_edges)))
                                    : ojson{{"total", pairs.size()}, {"error", "fewer than two utterances"}};
    std::ofstream(dir / "study.json", std::ios::trunc) << study.dump(2) << '\n';
  }));

  ojson manifest;
  manifest["tool_version"] = std::string(kToolVersion);
  manifest["seed"] = cfg.seed;
  manifest["config"] = to_json(cfg);
  auto stages = ojson::array();
  for (const auto& r : runs) {
    stages.push_back({{"name", r.name}, {"input_hash", r.input_hash}, {"outputs", r.outputs}});
  }
  manifest["stages"] = stages;
  RunResult result;
  result.manifest_hash = hash_json(manifest);
  manifest["manifest_hash"] = result.manifest_hash;
  manifest["created"] = timestamp_utc();
  result.manifest_path = root / "manifest.json";
  std::ofstream(result.manifest_path, std::ios::trunc) << manifest.dump(2) << '\n';
  for (const auto& r : runs) result.stages.push_back({r.name, r.input_hash, r.skipped});
  log << "manifest " << result.manifest_hash << '\n';
  return result;
}

}  // namespace elnkit::pipeline
