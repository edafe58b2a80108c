#include <doctest.h>

#include <map>
#include <set>
#include <sstream>

#include "elnkit/audio.hpp"
#include "elnkit/cli.hpp"
#include "elnkit/pipeline.hpp"
#include "elnkit/rng.hpp"
#include "elnkit/textnorm.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace elnkit;
using namespace elnkit::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kVocab = {"من", "تو", "خانه", "کتاب", "رفت", "آمد", "دیروز", "امروز",
                                         "خوب", "بود", "را", "به", "از", "در", "با", "این"};

std::vector<std::string> words(Rng& rng, std::size_t n) {
  std::vector<std::string> w(n);
  for (auto& x : w) x = kVocab[rng.below(kVocab.size())];
  return w;
}

std::string join(const std::vector<std::string>& w) {
  std::string s;
  for (const auto& x : w) s += (s.empty() ? "" : " ") + x;
  return s;
}

std::vector<std::string> corrupt(Rng& rng, std::vector<std::string> w, int edits) {
  for (int e = 0; e < edits; ++e) {
    const auto op = rng.below(3);
    if (op == 0 && !w.empty()) {
      w[rng.below(w.size())] = kVocab[rng.below(kVocab.size())];
    } else if (op == 1 && w.size() > 1) {
      w.erase(w.begin() + static_cast<std::ptrdiff_t>(rng.below(w.size())));
    } else {
      w.insert(w.begin() + static_cast<std::ptrdiff_t>(rng.below(w.size() + 1)), kVocab[rng.below(kVocab.size())]);
    }
  }
  return w;
}

struct Row {
  std::string id, reference;
  std::vector<std::string> hyps;
  Condition condition;
};

json record_json(const Row& r, std::uint64_t seed) {
  json j;
  j["schema"] = 1;
  j["id"] = r.id;
  j["audio_path"] = nullptr;
  j["reference"] = r.reference;
  j["hypotheses"] = r.hyps;
  j["condition"] = std::string(to_string(r.condition));
  j["snr_db"] = r.condition == Condition::clean   ? json(nullptr)
                : r.condition == Condition::snr5  ? json(5.0)
                : r.condition == Condition::snr10 ? json(10.0)
                                                  : json(7.25);
  j["seed"] = seed;
  return j;
}

std::vector<Row> make_rows(std::uint64_t seed, std::size_t n, const std::vector<Condition>& conditions) {
  Rng rng(seed);
  std::vector<Row> rows;
  for (std::size_t i = 0; i < n; ++i) {
    Row r;
    r.id = "utt" + std::to_string(100 + i);
    const auto ref = words(rng, 3 + rng.below(6));
    r.reference = join(ref);
    for (int k = 0; k < 5; ++k) r.hyps.push_back(join(corrupt(rng, ref, static_cast<int>(rng.below(4)))));
    r.condition = conditions[i % conditions.size()];
    rows.push_back(r);
  }
  return rows;
}

void write_rows(const std::vector<Row>& rows, const fs::path& p) {
  std::string text;
  for (std::size_t i = 0; i < rows.size(); ++i) text += record_json(rows[i], 1000 + i).dump() + "\n";
  testsupport::write_file(p, text);
}

double pooled_oracle(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::size_t errors = 0, n = 0;
  for (const auto& [ref, hyp] : pairs) {
    const auto r = textnorm::tokenize(ref);
    errors += oracle::edit_distance(r, textnorm::tokenize(hyp));
    n += r.size();
  }
  return 100.0 * static_cast<double>(errors) / static_cast<double>(n);
}

PipelineConfig small_config(const testsupport::TempDir& dir, const fs::path& dataset, const std::string& out) {
  PipelineConfig c;
  c.dataset = dataset.string();
  c.out_dir = (dir / out).string();
  c.provider.sentence_dim = 16;
  c.provider.token_dim = 8;
  c.jobs = 2;
  c.seed = 5;
  return c;
}

std::map<std::string, bool> skipped(const RunResult& r) {
  std::map<std::string, bool> m;
  for (const auto& s : r.stages) m[s.name] = s.skipped;
  return m;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = testsupport::read_file(e.path());
  }
  return out;
}

struct Cli {
  int code = -1;
  std::string out, err;
};

Cli cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "elnkit");
  std::ostringstream out, err;
  Cli r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

void make_audio_inputs(const testsupport::TempDir& dir) {
  Rng rng(77);
  fs::create_directories(dir / "clean");
  std::string manifest;
  for (int k = 0; k < 2; ++k) {
    audio::AudioBuffer b;
    b.samples.resize(400);
    for (auto& x : b.samples) x = 0.3 * rng.normal() / 3;
    audio::write_wav(b, dir / ("clean/c" + std::to_string(k) + ".wav"));
    manifest += (dir / ("clean/c" + std::to_string(k) + ".wav")).string() + "\n";
  }
  testsupport::write_file(dir / "clean.txt", manifest);
  audio::AudioBuffer n;
  n.samples.resize(1000);
  for (auto& x : n.samples) x = 0.2 * rng.normal() / 3;
  fs::create_directories(dir / "noise");
  audio::write_wav(n, dir / "noise" / "n.wav");
}

}  // namespace

TEST_CASE("config: lossless round trip, layering and unknown keys") {
  PipelineConfig c;
  c.dataset = "d.jsonl";
  c.out_dir = "out";
  c.seed = 18446744073709551615ULL;
  c.mix = MixConfig{"clean.txt", "noise", {Condition::mixed, Condition::snr5}, 12, 9};
  c.provider = {"file", 1, 2, "s.elne", "t.elne", ""};
  c.endpoint = "http://localhost:9/v1";
  c.weights = "w.elnp";
  c.system = "eln";
  c.jobs = 3;
  c.small_number_limit = 1000;
  c.bin_edges = "0,1,inf";
  c.max_tokens = 17;
  c.temperature = 0.25;
  PipelineConfig back;
  merge_json(back, json::parse(to_json(c).dump()));
  CHECK(back == c);

  testsupport::TempDir dir;
  save_config(c, dir / "c.json");
  CHECK(load_config(dir / "c.json") == c);

  PipelineConfig layered = c;
  merge_json(layered, json::parse(R"({"seed": 4, "provider": {"kind": "test"}, "mix": null})"));
  CHECK(layered.seed == 4);
  CHECK(layered.provider.kind == "test");
  CHECK(layered.provider.sentence_archive == "s.elne");
  CHECK_FALSE(layered.mix);
  CHECK(layered.jobs == 3);

  CHECK_THROWS_AS(merge_json(layered, json::parse(R"({"sed": 4})")), DataError);
  CHECK_THROWS_AS(merge_json(layered, json::parse(R"({"provider": {"dims": 4}})")), DataError);
  CHECK_THROWS_AS(merge_json(layered, json::parse(R"({"jobs": "many"})")), DataError);
  CHECK_THROWS_AS(merge_json(layered, json::parse(R"({"mix": {"conditions": ["loud"]}})")), DataError);
}

TEST_CASE("config: validation happens before any stage") {
  testsupport::TempDir dir;
  PipelineConfig c = small_config(dir, dir / "missing.jsonl", "out");
  std::ostringstream log;
  CHECK_THROWS_AS(run_pipeline(c, log), UsageError);
  CHECK_FALSE(fs::exists(dir / "out"));
  write_rows(make_rows(1, 3, {Condition::clean}), dir / "d.jsonl");
  c.dataset = (dir / "d.jsonl").string();
  for (auto tweak : std::vector<std::function<void(PipelineConfig&)>>{
           [](PipelineConfig& x) { x.endpoint = "ftp://x"; },
           [](PipelineConfig& x) { x.provider.kind = "magic"; },
           [](PipelineConfig& x) { x.weights = "nope.elnp"; },
           [](PipelineConfig& x) { x.system = "raw"; },
           [](PipelineConfig& x) { x.bin_edges = "3,2"; },
           [](PipelineConfig& x) { x.mix = MixConfig{"nope.txt", "", {Condition::clean}, 1, 0}; }}) {
    auto bad = c;
    tweak(bad);
    CHECK_THROWS_AS(validate(bad), UsageError);
  }
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("pipeline: mock echo scores hypothesis 1, reruns skip everything") {
  testsupport::TempDir dir;
  const auto rows = make_rows(2, 12, {Condition::clean});
  const auto ncfg = textnorm::NormalizationConfig::defaults();
  for (const auto& r : rows) REQUIRE(textnorm::normalize(r.reference, ncfg) == r.reference);
  write_rows(rows, dir / "d.jsonl");
  const auto cfg = small_config(dir, dir / "d.jsonl", "out");
  std::ostringstream log;
  const auto first = run_pipeline(cfg, log);
  for (const auto& [name, was_skipped] : skipped(first)) CHECK_FALSE(was_skipped);
  // No weights configured, so there is no project stage.
  CHECK(skipped(first).size() == 5);
  CHECK_FALSE(skipped(first).contains("project"));

  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& r : rows) pairs.emplace_back(r.reference, r.hyps[0]);
  const auto summary = json::parse(testsupport::read_file(dir / "out/wer/summary.json"));
  CHECK(summary["systems"]["corrected"]["clean"]["wer_percent"].get<double>() == doctest::Approx(pooled_oracle(pairs)));
  CHECK(summary["systems"]["raw"]["clean"]["wer_percent"].get<double>() == doctest::Approx(pooled_oracle(pairs)));
  CHECK(summary["flagged"].empty());
  CHECK(testsupport::read_lines(dir / "out/eln/eln.jsonl").size() == 12);
  const auto study = json::parse(testsupport::read_file(dir / "out/analyze/study.json"));
  CHECK(study["total"] == 12);

  const auto second = run_pipeline(cfg, log);
  for (const auto& [name, was_skipped] : skipped(second)) CHECK(was_skipped);
  CHECK(second.manifest_hash == first.manifest_hash);

  // A tampered output makes its stage stale again.
  testsupport::write_file(dir / "out/wer/per_utt.csv", "garbage\n");
  const auto third = run_pipeline(cfg, log);
  CHECK_FALSE(skipped(third)["wer"]);
  CHECK(skipped(third)["eln"]);
  CHECK(third.manifest_hash == first.manifest_hash);
}

TEST_CASE("pipeline: same config gives byte-identical artifacts") {
  testsupport::TempDir dir;
  write_rows(make_rows(3, 9, {Condition::clean, Condition::snr5, Condition::mixed}), dir / "d.jsonl");
  make_audio_inputs(dir);
  auto a = small_config(dir, dir / "d.jsonl", "a");
  a.mix = MixConfig{(dir / "clean.txt").string(), (dir / "noise").string(), {Condition::clean, Condition::snr10}, 3, 11};
  std::ostringstream log;
  run_pipeline(a, log);
  fs::rename(dir / "a", dir / "first");
  a.jobs = 1;
  run_pipeline(a, log);
  auto first = tree(dir / "first"), second = tree(dir / "a");
  first.erase("manifest.json");
  second.erase("manifest.json");
  CHECK(first.size() > 10);
  CHECK(first == second);

  // Mix manifests name their own output files; nothing downstream depends on where the run lives.
  auto b = a;
  b.out_dir = (dir / "b").string();
  run_pipeline(b, log);
  auto third = tree(dir / "b");
  for (const auto& [name, bytes] : second) {
    if (name.rfind("mix/", 0) != 0 && name != "manifest.json") CHECK_MESSAGE(third[name] == bytes, name);
  }
  const auto ma = json::parse(testsupport::read_file(dir / "a/manifest.json"));
  CHECK(ma["stages"].size() == 6);
  CHECK(ma["tool_version"] == std::string(kToolVersion));
  CHECK(ma["config"]["mix"]["seed"] == 11);
}

TEST_CASE("pipeline: a noise seed change reruns mixing only") {
  testsupport::TempDir dir;
  write_rows(make_rows(4, 6, {Condition::snr5}), dir / "d.jsonl");
  make_audio_inputs(dir);
  auto cfg = small_config(dir, dir / "d.jsonl", "out");
  cfg.mix = MixConfig{(dir / "clean.txt").string(), (dir / "noise").string(), {Condition::snr5}, 4, 1};
  std::ostringstream log;
  run_pipeline(cfg, log);
  const auto before = testsupport::read_file(dir / "out/mix/snr5/manifest.jsonl");
  cfg.mix->seed = 2;
  const auto s = skipped(run_pipeline(cfg, log));
  CHECK_FALSE(s.at("mix"));
  CHECK(s.at("normalize"));
  CHECK(s.at("eln"));
  CHECK(s.at("correct"));
  CHECK(testsupport::read_file(dir / "out/mix/snr5/manifest.jsonl") != before);
}

TEST_CASE("pipeline: a bad record stops the run with its id, earlier artifacts stay") {
  testsupport::TempDir dir;
  auto rows = make_rows(5, 4, {Condition::clean});
  rows[2].hyps = {"!!", "؟", "...", "،", "!"};
  write_rows(rows, dir / "d.jsonl");
  const auto cfg = small_config(dir, dir / "d.jsonl", "out");
  std::ostringstream log;
  try {
    run_pipeline(cfg, log);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "eln");
    CHECK(e.record_id() == rows[2].id);
    CHECK(e.exit_code() == cli::kExitData);
  }
  CHECK(fs::exists(dir / "out/normalize/dataset.jsonl"));
  CHECK(fs::exists(dir / "out/normalize/stamp.json"));

  save_config(cfg, dir / "c.json");
  const auto r = cli_run({"--config", (dir / "c.json").string(), "run"});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("stage eln, record " + rows[2].id) != std::string::npos);
  CHECK(r.out.empty());
}

TEST_CASE("cli: run with fixture corrections and one injected timeout") {
  testsupport::TempDir dir;
  const auto rows = make_rows(6, 10, {Condition::clean, Condition::snr5});
  write_rows(rows, dir / "d.jsonl");
  Rng rng(8);
  std::string fixture;
  std::map<std::string, std::string> corrected;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == 4) {
      fixture += json{{"id", rows[i].id}, {"fail", "timeout"}}.dump() + "\n";
      corrected[rows[i].id] = "";
      continue;
    }
    const auto text = join(corrupt(rng, textnorm::tokenize(rows[i].reference), static_cast<int>(i % 3)));
    fixture += json{{"id", rows[i].id}, {"text", text}}.dump() + "\n";
    corrected[rows[i].id] = text;
  }
  testsupport::write_file(dir / "fx.jsonl", fixture);
  auto cfg = small_config(dir, dir / "d.jsonl", "out");
  cfg.endpoint = "mock:fixture=" + (dir / "fx.jsonl").string();
  cfg.system = "eln";
  save_config(cfg, dir / "c.json");

  const auto r = cli_run({"--config", (dir / "c.json").string(), "run"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("manifest ") != std::string::npos);
  CHECK(r.err.find("flagged failed") != std::string::npos);

  const auto hyp = testsupport::read_lines(dir / "out/correct/hyp.jsonl");
  REQUIRE(hyp.size() == 10);
  int ok = 0;
  for (const auto& line : hyp) ok += json::parse(line)["status"] == "ok";
  CHECK(ok == 9);
  const auto summary = json::parse(testsupport::read_file(dir / "out/wer/summary.json"));
  REQUIRE(summary["flagged"].size() == 1);
  CHECK(summary["flagged"][0]["id"] == rows[4].id);

  // Table cells against the oracle, per system and condition.
  std::map<std::pair<std::string, Condition>, std::vector<std::pair<std::string, std::string>>> groups;
  for (const auto& row : rows) {
    groups[{"raw", row.condition}].emplace_back(row.reference, row.hyps[0]);
    groups[{"eln", row.condition}].emplace_back(row.reference, corrected[row.id]);
  }
  const auto table = testsupport::read_lines(dir / "out/analyze/table.csv");
  REQUIRE(table.size() == 3);
  CHECK(table[0] == "system,clean,snr5");
  for (std::size_t line = 1; line < 3; ++line) {
    std::stringstream ss(table[line]);
    std::string system, clean, snr5;
    std::getline(ss, system, ',');
    std::getline(ss, clean, ',');
    std::getline(ss, snr5, ',');
    CHECK(std::stod(clean) == doctest::Approx(pooled_oracle(groups[{system, Condition::clean}])).epsilon(1e-12));
    CHECK(std::stod(snr5) == doctest::Approx(pooled_oracle(groups[{system, Condition::snr5}])).epsilon(1e-12));
  }
}

TEST_CASE("cli: references as corrections give a zero row") {
  testsupport::TempDir dir;
  const auto rows = make_rows(9, 6, {Condition::clean, Condition::mixed, Condition::snr10});
  write_rows(rows, dir / "d.jsonl");
  std::string fixture;
  for (const auto& row : rows) fixture += json{{"id", row.id}, {"text", row.reference}}.dump() + "\n";
  testsupport::write_file(dir / "fx.jsonl", fixture);
  const auto r = cli_run({"--seed", "3", "run", "--dataset", (dir / "d.jsonl").string(), "--out", (dir / "out").string(),
                          "--endpoint", "mock:fixture=" + (dir / "fx.jsonl").string()});
  REQUIRE(r.code == 0);
  const auto table = testsupport::read_lines(dir / "out/analyze/table.csv");
  REQUIRE(table.size() == 3);
  CHECK(table[2] == "corrected,0,0,0");
}

TEST_CASE("cli: flag precedence over the config file") {
  testsupport::TempDir dir;
  PipelineConfig c;
  c.dataset = "from-file.jsonl";
  c.out_dir = "file-out";
  c.seed = 1;
  c.jobs = 2;
  save_config(c, dir / "c.json");
  const auto r = cli_run({"--config", (dir / "c.json").string(), "--seed", "9", "run", "--out", "flag-out",
                          "--write-config", (dir / "w.json").string()});
  REQUIRE(r.code == 0);
  const auto w = load_config(dir / "w.json");
  CHECK(w.seed == 9);
  CHECK(w.out_dir == "flag-out");
  CHECK(w.dataset == "from-file.jsonl");
  CHECK(w.jobs == 2);
}

TEST_CASE("cli: subcommands and exit codes") {
  testsupport::TempDir dir;
  const auto rows = make_rows(10, 5, {Condition::clean});
  write_rows(rows, dir / "d.jsonl");

  CHECK(cli_run({}).code == cli::kExitUsage);
  CHECK(cli_run({"--help"}).code == cli::kExitOk);
  CHECK(cli_run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(cli_run({"wer", "--dataset", (dir / "nope.jsonl").string()}).code == cli::kExitUsage);

  auto r = cli_run({"normalize", "--text", "سلام،  دنیا ۱۲!"});
  CHECK(r.code == 0);
  CHECK(r.out == "سلام دنیا دوازده\n");

  r = cli_run({"normalize", "--in", (dir / "d.jsonl").string(), "--out", (dir / "n.jsonl").string()});
  REQUIRE(r.code == 0);
  r = cli_run({"wer", "--dataset", (dir / "n.jsonl").string(), "--out", (dir / "raw.csv").string()});
  CHECK(r.code == 0);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& row : rows) pairs.emplace_back(row.reference, row.hyps[0]);
  const auto csv = testsupport::read_lines(dir / "raw.csv");
  CHECK(csv[0] == "id,condition,system,S,D,I,N,wer_percent");
  CHECK(csv.size() == 6);
  const auto reported = std::stod(r.out.substr(4));
  CHECK(reported == doctest::Approx(pooled_oracle(pairs)).epsilon(1e-5));

  r = cli_run({"eln", "--dataset", (dir / "n.jsonl").string(), "--out", (dir / "eln.jsonl").string(), "--dump-vectors",
               dir.path().string(), "--sentence-dim", "8", "--token-dim", "4"});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "vectors.bin"));
  r = cli_run({"project", "--init", "--weights", (dir / "w.elnp").string(), "--dims", "12,16,6", "--prefix-len", "2"});
  CHECK(r.code == 0);
  r = cli_run({"project", "--eln", (dir / "eln.jsonl").string(), "--weights", (dir / "w.elnp").string(), "--out",
               (dir / "prefix/p.bin").string()});
  CHECK(r.code == 0);
  CHECK(projector::load_prefixes(dir / "prefix/p.bin").size() == 5);
  r = cli_run({"correct", "--dataset", (dir / "n.jsonl").string(), "--endpoint", "mock", "--prefix-dir",
               (dir / "prefix").string(), "--out", (dir / "hyp.jsonl").string()});
  CHECK(r.code == 0);
  r = cli_run({"wer", "--dataset", (dir / "n.jsonl").string(), "--hyp", (dir / "hyp.jsonl").string(), "--out",
               (dir / "cor.csv").string(), "--system", "mock"});
  CHECK(r.code == 0);
  r = cli_run({"analyze", "--wer", (dir / "raw.csv").string(), "--wer", "echo=" + (dir / "cor.csv").string(), "--eln",
               (dir / "eln.jsonl").string(), "--out", (dir / "report").string()});
  CHECK(r.code == 0);
  const auto table = testsupport::read_lines(dir / "report/table.csv");
  REQUIRE(table.size() == 3);
  CHECK(table[1].substr(table[1].find(',')) == table[2].substr(table[2].find(',')));
  CHECK(fs::exists(dir / "report/study.json"));

  // Data errors: malformed dataset, wrong projector input size.
  testsupport::write_file(dir / "bad.jsonl", "{\"schema\":1}\n");
  r = cli_run({"wer", "--dataset", (dir / "bad.jsonl").string()});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("line 1") != std::string::npos);
  r = cli_run({"project", "--init", "--weights", (dir / "w2.elnp").string(), "--dims", "5,3"});
  REQUIRE(r.code == 0);
  r = cli_run({"project", "--eln", (dir / "eln.jsonl").string(), "--weights", (dir / "w2.elnp").string(), "--out",
               (dir / "p2.bin").string()});
  CHECK(r.code == cli::kExitData);

  // Transport: an unreachable embedding service.
  r = cli_run({"eln", "--dataset", (dir / "n.jsonl").string(), "--out", (dir / "e2.jsonl").string(), "--provider",
               "service", "--url", "http://127.0.0.1:1"});
  CHECK(r.code == cli::kExitTransport);
  // An unreachable correction endpoint flags every record but still exits 0.
  r = cli_run({"correct", "--dataset", (dir / "n.jsonl").string(), "--endpoint", "http://127.0.0.1:1", "--retries", "0",
               "--out", (dir / "h2.jsonl").string()});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.err.find("5 flagged") != std::string::npos);
}
