#include "elnkit/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "elnkit/analysis.hpp"
#include "elnkit/audio.hpp"
#include "elnkit/dataset.hpp"
#include "elnkit/errors.hpp"
#include "elnkit/llm.hpp"
#include "elnkit/parallel.hpp"
#include "elnkit/pipeline.hpp"
#include "elnkit/projector.hpp"
#include "elnkit/textnorm.hpp"
#include "elnkit/wer.hpp"

namespace elnkit::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  std::string config;
};

// Defaults, then the --config file, then explicit flags.
pipeline::PipelineConfig base_config(const Globals& g) {
  pipeline::PipelineConfig c;
  if (!g.config.empty()) c = pipeline::load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.jobs) c.jobs = *g.jobs;
  if (c.jobs == 0) throw UsageError("--jobs must be at least 1");
  return c;
}

textnorm::NormalizationConfig norm_config(const std::string& rules_dir, std::uint64_t limit) {
  auto cfg = rules_dir.empty() ? textnorm::NormalizationConfig::defaults()
                               : textnorm::NormalizationConfig::from_directory(rules_dir);
  cfg.small_number_limit = limit;
  textnorm::validate(cfg);
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// Every "*.bin" prefix archive in `dir`, merged by id.
std::map<std::string, std::shared_ptr<const projector::PrefixMatrix>> load_prefix_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("--prefix-dir " + dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, std::shared_ptr<const projector::PrefixMatrix>> out;
  for (const auto& f : files) {
    for (auto& e : projector::load_prefixes(f)) {
      if (out.count(e.id)) throw DataError("prefix for " + e.id + " appears in more than one archive");
      out[e.id] = std::make_shared<const projector::PrefixMatrix>(std::move(e.matrix));
    }
  }
  return out;
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v == 0) throw UsageError("bad layer size in --dims: " + item);
    dims.push_back(static_cast<std::size_t>(v));
  }
  if (dims.size() < 2) throw UsageError("--dims needs at least two layer sizes");
  return dims;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"N-best disagreement (ELN) toolkit for ASR error correction", "elnkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pipeline::kToolVersion));

  Globals g;
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--jobs", g.jobs, "Record-level parallelism")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "Pipeline config file (JSON)")->check(CLI::ExistingFile);

  std::function<int()> action;

  // normalize
  auto* normalize = app.add_subcommand("normalize", "Normalize a raw N-best dataset or a single string");
  std::string norm_in, norm_out, norm_text, norm_rules;
  std::optional<std::uint64_t> norm_limit;
  normalize->add_option("--in", norm_in, "Raw dataset (JSONL)")->check(CLI::ExistingFile);
  normalize->add_option("--out", norm_out, "Normalized dataset (JSONL)");
  normalize->add_option("--text", norm_text, "Normalize this string and print it");
  normalize->add_option("--rules", norm_rules, "Directory with replacement tables")->check(CLI::ExistingDirectory);
  normalize->add_option("--small-number-limit", norm_limit, "Integers below this are spelled out (0 disables)");
  normalize->callback([&] {
    action = [&] {
      const auto c = base_config(g);
      const auto cfg = norm_config(norm_rules.empty() ? c.rules_dir : norm_rules, norm_limit.value_or(c.small_number_limit));
      if (!normalize->count("--text") && norm_in.empty()) throw UsageError("normalize needs --in or --text");
      if (normalize->count("--text")) {
        out << textnorm::normalize(norm_text, cfg) << '\n';
        return kExitOk;
      }
      if (norm_out.empty()) throw UsageError("normalize --in needs --out");
      LoadOptions opts;
      opts.require_normalized = false;
      auto records = load_dataset(norm_in, opts);
      parallel_for(records.size(), c.jobs, [&](std::size_t i) {
        auto& r = records[i];
        try {
          r.reference = textnorm::normalize(r.reference, cfg);
          for (auto& h : r.hypotheses) h = textnorm::normalize(h, cfg);
        } catch (const DecodeError& e) {
          throw DecodeError("record " + r.id + ": " + e.what());
        }
      });
      if (fs::path(norm_out).has_parent_path()) fs::create_directories(fs::path(norm_out).parent_path());
      save_dataset(records, norm_out);
      err << "normalized " << records.size() << " records\n";
      return kExitOk;
    };
  });

  // mix
  auto* mix = app.add_subcommand("mix", "Build a noisy corpus for one condition");
  std::string mix_manifest, mix_noise, mix_condition = "mixed", mix_out, mix_gauss = "stddev", mix_peak = "normalize";
  std::size_t mix_count = 0;
  mix->add_option("--clean-manifest", mix_manifest, "Clean audio manifest")->required()->check(CLI::ExistingFile);
  mix->add_option("--noise-dir", mix_noise, "Directory of noise .wav files");
  mix->add_option("--condition", mix_condition, "clean, mixed, snr5 or snr10")->capture_default_str();
  mix->add_option("--count", mix_count, "Number of records")->required()->check(CLI::PositiveNumber);
  mix->add_option("--out", mix_out, "Output directory")->required();
  mix->add_option("--gaussian-mode", mix_gauss, "stddev or peak")->capture_default_str();
  mix->add_option("--peak-policy", mix_peak, "normalize or clip")->capture_default_str();
  mix->callback([&] {
    action = [&] {
      const auto c = base_config(g);
      audio::CorpusOptions opts;
      opts.clean_manifest = mix_manifest;
      opts.noise_dir = mix_noise;
      opts.condition = parse_condition(mix_condition);
      opts.count = mix_count;
      opts.seed = c.seed;
      opts.out_dir = mix_out;
      opts.jobs = c.jobs;
      if (mix_gauss == "stddev") {
        opts.mix.gaussian_mode = audio::GaussianMode::stddev;
      } else if (mix_gauss == "peak") {
        opts.mix.gaussian_mode = audio::GaussianMode::peak;
      } else {
        throw UsageError("--gaussian-mode must be stddev or peak");
      }
      if (mix_peak == "normalize") {
        opts.mix.peak_policy = audio::PeakPolicy::normalize;
      } else if (mix_peak == "clip") {
        opts.mix.peak_policy = audio::PeakPolicy::clip;
      } else {
        throw UsageError("--peak-policy must be normalize or clip");
      }
      if (opts.condition != Condition::clean && mix_noise.empty()) throw UsageError("mix needs --noise-dir");
      const auto records = audio::build_condition_corpus(opts);
      err << "wrote " << records.size() << " records to " << mix_out << '\n';
      return kExitOk;
    };
  });

  // eln
  auto* eln_cmd = app.add_subcommand("eln", "Compute ELN vectors for a normalized dataset");
  std::string eln_dataset, eln_out, eln_dump;
  std::optional<std::string> eln_provider, eln_sarch, eln_tarch, eln_url;
  std::optional<std::size_t> eln_sdim, eln_tdim;
  eln_cmd->add_option("--dataset", eln_dataset, "Normalized dataset (JSONL)")->required()->check(CLI::ExistingFile);
  eln_cmd->add_option("--out", eln_out, "eln.jsonl output")->required();
  eln_cmd->add_option("--dump-vectors", eln_dump, "Write the full vectors to DIR/vectors.bin");
  eln_cmd->add_option("--provider", eln_provider, "test, file or service");
  eln_cmd->add_option("--sentence-dim", eln_sdim, "Test provider sentence dimension");
  eln_cmd->add_option("--token-dim", eln_tdim, "Test provider token dimension");
  eln_cmd->add_option("--sentence-archive", eln_sarch, "Sentence embedding archive");
  eln_cmd->add_option("--token-archive", eln_tarch, "Token embedding archive");
  eln_cmd->add_option("--url", eln_url, "Embedding service URL");
  eln_cmd->callback([&] {
    action = [&] {
      auto c = base_config(g);
      auto& p = c.provider;
      if (eln_provider) p.kind = *eln_provider;
      if (eln_sdim) p.sentence_dim = *eln_sdim;
      if (eln_tdim) p.token_dim = *eln_tdim;
      if (eln_sarch) p.sentence_archive = *eln_sarch;
      if (eln_tarch) p.token_archive = *eln_tarch;
      if (eln_url) p.url = *eln_url;
      const auto norm = norm_config(c.rules_dir, c.small_number_limit);
      LoadOptions opts;
      opts.normalization = &norm;
      const auto records = load_dataset(eln_dataset, opts);
      const auto batch = pipeline::compute_batch(records, pipeline::make_providers(p), c.jobs);
      open_out(eln_out).close();
      pipeline::write_eln_rows(batch.rows, eln_out);
      if (!eln_dump.empty()) {
        fs::create_directories(eln_dump);
        pipeline::vectors_archive(batch).save(fs::path(eln_dump) / "vectors.bin");
      }
      err << "computed " << batch.rows.size() << " ELN vectors\n";
      return kExitOk;
    };
  });

  // project
  auto* project = app.add_subcommand("project", "Map ELN vectors to prefix embeddings, or initialise weights");
  std::string proj_eln, proj_vectors, proj_weights, proj_out, proj_dims;
  std::size_t proj_prefix_len = 1;
  bool proj_init = false;
  project->add_option("--eln", proj_eln, "eln.jsonl")->check(CLI::ExistingFile);
  project->add_option("--vectors", proj_vectors, "Vector archive (default: vectors.bin next to --eln)");
  project->add_option("--weights", proj_weights, "Projector weights")->required();
  project->add_option("--out", proj_out, "Prefix archive output");
  project->add_flag("--init", proj_init, "Write freshly initialised weights to --weights and exit");
  project->add_option("--dims", proj_dims, "Layer sizes for --init, e.g. 684,1024,4096");
  project->add_option("--prefix-len", proj_prefix_len, "Prefix rows for --init")->capture_default_str()->check(CLI::PositiveNumber);
  project->callback([&] {
    action = [&] {
      const auto c = base_config(g);
      if (proj_init) {
        if (proj_dims.empty()) throw UsageError("project --init needs --dims");
        projector::save_weights(projector::init_weights(parse_dims(proj_dims), proj_prefix_len, c.seed), proj_weights);
        return kExitOk;
      }
      if (proj_eln.empty() || proj_out.empty()) throw UsageError("project needs --eln and --out");
      const fs::path vectors = proj_vectors.empty() ? fs::path(proj_eln).parent_path() / "vectors.bin" : fs::path(proj_vectors);
      const auto weights = projector::load_weights(proj_weights);
      const auto rows = pipeline::read_eln_rows(proj_eln);
      const auto entries = pipeline::project_rows(rows, embed::Archive::load(vectors), weights, c.jobs);
      open_out(proj_out).close();
      projector::save_prefixes(entries, proj_out);
      err << "projected " << entries.size() << " vectors\n";
      return kExitOk;
    };
  });

  // correct
  auto* correct = app.add_subcommand("correct", "Ask the correction model for one transcript per record");
  std::string cor_dataset, cor_endpoint, cor_prefix_dir, cor_out;
  std::optional<int> cor_max_tokens;
  std::optional<double> cor_temperature;
  int cor_retries = 3;
  correct->add_option("--dataset", cor_dataset, "Normalized dataset (JSONL)")->required()->check(CLI::ExistingFile);
  correct->add_option("--endpoint", cor_endpoint, "URL, mock, mock:echo or mock:fixture=PATH");
  correct->add_option("--prefix-dir", cor_prefix_dir, "Directory of prefix archives");
  correct->add_option("--out", cor_out, "hyp.jsonl output")->required();
  correct->add_option("--max-tokens", cor_max_tokens, "Decoding budget");
  correct->add_option("--temperature", cor_temperature, "Sampling temperature");
  correct->add_option("--retries", cor_retries, "Retries per request")->capture_default_str()->check(CLI::NonNegativeNumber);
  correct->callback([&] {
    action = [&] {
      const auto c = base_config(g);
      const auto norm = norm_config(c.rules_dir, c.small_number_limit);
      LoadOptions opts;
      opts.normalization = &norm;
      const auto records = load_dataset(cor_dataset, opts);
      std::map<std::string, std::shared_ptr<const projector::PrefixMatrix>> prefixes;
      if (!cor_prefix_dir.empty()) prefixes = load_prefix_dir(cor_prefix_dir);
      std::vector<llm::CorrectionRequest> requests;
      for (const auto& r : records) {
        const auto p = prefixes.find(r.id);
        llm::Decoding d{cor_max_tokens.value_or(c.max_tokens), cor_temperature.value_or(c.temperature),
                        derive_seed(c.seed, r.seed)};
        requests.push_back(llm::make_request(r.id, r.hypotheses, p == prefixes.end() ? nullptr : p->second, d));
      }
      auto backend = llm::make_backend(cor_endpoint.empty() ? c.endpoint : cor_endpoint);
      llm::RetryPolicy retry;
      retry.max_retries = cor_retries;
      const auto results = llm::correct_batch(requests, *backend, norm, retry, c.jobs);
      auto file = open_out(cor_out);
      std::size_t flagged = 0;
      for (const auto& res : results) {
        if (res.status != llm::Status::ok) {
          ++flagged;
          err << "flagged " << res.id << " (" << llm::to_string(res.status) << "): " << res.error << '\n';
        }
        file << llm::to_json(res).dump() << '\n';
      }
      err << "corrected " << results.size() - flagged << " of " << results.size() << " records, " << flagged
          << " flagged\n";
      return kExitOk;
    };
  });

  // wer
  auto* wer_cmd = app.add_subcommand("wer", "Score corrections (or hypothesis 1) against references");
  std::string wer_dataset, wer_hyp, wer_out, wer_system;
  bool wer_macro = false;
  wer_cmd->add_option("--dataset,--ref", wer_dataset, "Normalized dataset (JSONL) holding the references")->required()->check(CLI::ExistingFile);
  wer_cmd->add_option("--hyp", wer_hyp, "hyp.jsonl from correct; hypothesis 1 is scored when absent");
  wer_cmd->add_option("--out,--per-utt", wer_out, "per_utt.csv output");
  wer_cmd->add_option("--system", wer_system, "System label (default: corrected, or raw without --hyp)");
  wer_cmd->add_flag("--macro", wer_macro, "Report the mean of per-utterance WERs");
  wer_cmd->callback([&] {
    action = [&] {
      const auto c = base_config(g);
      const auto norm = norm_config(c.rules_dir, c.small_number_limit);
      LoadOptions opts;
      opts.normalization = &norm;
      const auto records = load_dataset(wer_dataset, opts);
      std::map<std::string, std::string> texts;
      if (!wer_hyp.empty()) {
        std::ifstream in(wer_hyp);
        if (!in) throw DataError("cannot read " + wer_hyp);
        std::string line;
        while (std::getline(in, line)) {
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          nlohmann::json j;
          try {
            j = nlohmann::json::parse(line);
          } catch (const nlohmann::json::parse_error& e) {
            throw DataError(wer_hyp + ": " + e.what());
          }
          const auto res = llm::correction_from_json(j);
          texts[res.id] = res.text;
        }
      }
      const std::string system = !wer_system.empty() ? wer_system : (wer_hyp.empty() ? "raw" : "corrected");
      std::vector<pipeline::WerRow> rows;
      std::vector<wer::TokenPair> pairs;
      for (const auto& r : records) {
        std::string hyp = r.hypotheses.front();
        if (!wer_hyp.empty()) {
          const auto it = texts.find(r.id);
          if (it == texts.end()) throw DataError("no correction for record " + r.id);
          hyp = it->second;
        }
        pairs.emplace_back(textnorm::tokenize(r.reference), textnorm::tokenize(hyp));
      }
      const auto result = wer::corpus_wer(pairs, wer_macro ? wer::Averaging::macro : wer::Averaging::micro);
      for (std::size_t i = 0; i < records.size(); ++i) {
        rows.push_back({records[i].id, records[i].condition, system, result.per_utterance[i]});
      }
      if (!wer_out.empty()) {
        open_out(wer_out).close();
        pipeline::write_wer_rows(rows, wer_out);
      }
      const auto& p = result.pooled;
      out << "WER " << p.wer_percent << "% (S=" << p.substitutions << " D=" << p.deletions << " I=" << p.insertions
          << " N=" << p.reference_words << ", " << (wer_macro ? "macro" : "micro") << ")\n";
      return kExitOk;
    };
  });

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Condition table and ELN magnitude study");
  std::vector<std::string> an_wer;
  std::string an_eln, an_out, an_bins = "0,5,10,20,40,inf", an_study = "raw";
  analyze->add_option("--wer", an_wer, "[LABEL=]per_utt.csv, repeatable")->required();
  analyze->add_option("--eln", an_eln, "eln.jsonl")->check(CLI::ExistingFile);
  analyze->add_option("--out", an_out, "Report directory")->required();
  analyze->add_option("--bins", an_bins, "Magnitude bin edges")->capture_default_str();
  analyze->add_option("--study-system", an_study, "System whose WER enters the study")->capture_default_str();
  analyze->callback([&] {
    action = [&] {
      std::vector<pipeline::WerRow> rows;
      for (const auto& spec : an_wer) {
        std::string label;
        std::string path = spec;
        if (const auto eq = spec.find('='); eq != std::string::npos && !fs::exists(spec)) {
          label = spec.substr(0, eq);
          path = spec.substr(eq + 1);
        }
        const auto part = pipeline::read_wer_rows(path, label);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      const auto edges = analysis::parse_bin_edges(an_bins);
      std::vector<pipeline::ElnRow> eln_rows;
      if (!an_eln.empty()) eln_rows = pipeline::read_eln_rows(an_eln);
      fs::create_directories(an_out);
      open_out(fs::path(an_out) / "table.csv")
          << analysis::to_csv(analysis::condition_table(pipeline::build_reports(rows, eln_rows)));
      if (!an_eln.empty()) {
        const auto pairs = pipeline::study_pairs(rows, eln_rows, an_study);
        open_out(fs::path(an_out) / "study.json")
            << analysis::to_json(analysis::magnitude_wer_study(pairs, edges)).dump(2) << '\n';
      }
      return kExitOk;
    };
  });

  // run
  auto* run_cmd = app.add_subcommand("run", "Run the whole pipeline with stage caching");
  std::optional<std::string> run_dataset, run_out, run_endpoint, run_weights;
  std::string run_write_config;
  run_cmd->add_option("--dataset", run_dataset, "Raw dataset (JSONL)");
  run_cmd->add_option("--out", run_out, "Artifact directory");
  run_cmd->add_option("--endpoint", run_endpoint, "URL, mock, mock:echo or mock:fixture=PATH");
  run_cmd->add_option("--weights", run_weights, "Projector weights");
  run_cmd->add_option("--write-config", run_write_config, "Write the effective config here and exit");
  run_cmd->callback([&] {
    action = [&] {
      auto c = base_config(g);
      if (run_dataset) c.dataset = *run_dataset;
      if (run_out) c.out_dir = *run_out;
      if (run_endpoint) c.endpoint = *run_endpoint;
      if (run_weights) c.weights = *run_weights;
      if (!run_write_config.empty()) {
        pipeline::save_config(c, run_write_config);
        return kExitOk;
      }
      const auto result = pipeline::run_pipeline(c, err);
      for (const auto& s : result.stages) out << s.name << ' ' << (s.skipped ? "skipped" : "ran") << '\n';
      out << "manifest " << result.manifest_hash << '\n';
      return kExitOk;
    };
  });

  std::vector<char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  try {
    return action ? action() : kExitUsage;
  } catch (const pipeline::StageError& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace elnkit::cli
