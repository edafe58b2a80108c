#include "elnkit/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "elnkit/errors.hpp"
#include "elnkit/parallel.hpp"

namespace elnkit::audio {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

bool tag_is(const std::vector<std::uint8_t>& b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

std::int16_t to_pcm16(double x) {
  const double scaled = std::round(x * 32767.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

double from_pcm16(std::int16_t v) { return std::max(-1.0, static_cast<double>(v) / 32767.0); }

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  nlohmann::ordered_json passthrough = nlohmann::ordered_json::object();
};

std::vector<ManifestEntry> read_clean_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open clean manifest " + manifest.string());
  const auto base = manifest.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ManifestEntry e;
    if (line.front() == '{') {
      nlohmann::ordered_json j;
      try {
        j = nlohmann::ordered_json::parse(line);
      } catch (const nlohmann::json::parse_error& err) {
        throw DataError("clean manifest line " + std::to_string(line_no) + ": " + err.what());
      }
      if (!j.contains("audio_path") || !j["audio_path"].is_string()) {
        throw DataError("clean manifest line " + std::to_string(line_no) + ": field \"audio_path\": missing");
      }
      e.path = j["audio_path"].get<std::string>();
      if (j.contains("id") && j["id"].is_string()) e.id = j["id"].get<std::string>();
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "audio_path" && it.key() != "id" && it.key() != "schema") e.passthrough[it.key()] = it.value();
      }
    } else {
      e.path = line;
    }
    if (e.path.is_relative()) e.path = base / e.path;
    if (e.id.empty()) e.id = e.path.stem().string();
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw DataError("clean manifest " + manifest.string() + " lists no files");
  return entries;
}

std::string file_safe(std::string id) {
  for (auto& c : id) {
    if (c == '/' || c == '\\' || c == ':') c = '_';
  }
  return id;
}

}  // namespace

double power(const AudioBuffer& b) {
  if (b.samples.empty()) return 0.0;
  double sum = 0.0;
  for (double x : b.samples) sum += x * x;
  return sum / static_cast<double>(b.samples.size());
}

double measure_snr(const AudioBuffer& speech, const AudioBuffer& noise) {
  if (speech.samples.size() != noise.samples.size()) {
    throw DataError("measure_snr: buffers differ in length");
  }
  const double ps = power(speech);
  const double pn = power(noise);
  if (ps <= 0.0 || pn <= 0.0) throw DataError("measure_snr: zero-power input, SNR undefined");
  return 10.0 * std::log10(ps / pn);
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& b) {
  if (b.sample_rate == 0) throw DataError("sample rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(b.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, b.sample_rate);
  put_u32(out, b.sample_rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (double x : b.samples) put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
  return out;
}

AudioBuffer decode_wav(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
    throw FormatError("not a RIFF/WAVE file");
  }
  AudioBuffer out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = get_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError("WAV chunk runs past the end of the file");
    if (tag_is(bytes, pos, "fmt ")) {
      if (size < 16) throw FormatError("WAV fmt chunk too short");
      const auto format = get_u16(bytes, body);
      const auto channels = get_u16(bytes, body + 2);
      out.sample_rate = get_u32(bytes, body + 4);
      const auto bits = get_u16(bytes, body + 14);
      if (format != 1) throw FormatError("WAV: only PCM is supported");
      if (channels != 1) throw FormatError("WAV: only mono is supported");
      if (bits != 16) throw FormatError("WAV: only 16-bit samples are supported");
      if (out.sample_rate == 0) throw FormatError("WAV: zero sample rate");
      have_fmt = true;
    } else if (tag_is(bytes, pos, "data")) {
      if (!have_fmt) throw FormatError("WAV: data chunk before fmt chunk");
      if (size % 2) throw FormatError("WAV: odd data size for 16-bit samples");
      out.samples.resize(size / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        out.samples[i] = from_pcm16(static_cast<std::int16_t>(get_u16(bytes, body + 2 * i)));
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError("WAV: no data chunk");
}

AudioBuffer read_wav(const std::filesystem::path& path) {
  try {
    return decode_wav(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_wav(const AudioBuffer& b, const std::filesystem::path& path) { write_bytes(encode_wav(b), path); }

AudioBuffer quantize_pcm16(const AudioBuffer& b) {
  AudioBuffer out{std::vector<double>(b.samples.size()), b.sample_rate};
  for (std::size_t i = 0; i < b.samples.size(); ++i) out.samples[i] = from_pcm16(to_pcm16(b.samples[i]));
  return out;
}

Mixture mix_at_snr(const AudioBuffer& clean, const AudioBuffer& noise, const NoiseSpec& spec,
                   const MixOptions& opts) {
  validate(spec);
  if (clean.sample_rate != noise.sample_rate) {
    throw DataError("mix_at_snr: sample rates differ (" + std::to_string(clean.sample_rate) + " vs " +
                    std::to_string(noise.sample_rate) + ")");
  }
  const double clean_power = power(clean);
  if (clean_power <= 0.0) throw DataError("mix_at_snr: clean signal has zero power");
  if (noise.samples.empty()) throw DataError("mix_at_snr: empty noise signal");

  Rng rng(spec.seed);
  const std::size_t len = clean.samples.size();
  const std::size_t noise_len = noise.samples.size();
  Mixture m;
  m.noise_part = AudioBuffer{std::vector<double>(len), clean.sample_rate};
  if (noise_len < len) {
    m.noise_offset = rng.below(noise_len);
    for (std::size_t i = 0; i < len; ++i) m.noise_part.samples[i] = noise.samples[(m.noise_offset + i) % noise_len];
  } else {
    m.noise_offset = rng.below(noise_len - len + 1);
    std::copy_n(noise.samples.begin() + static_cast<std::ptrdiff_t>(m.noise_offset), len,
                m.noise_part.samples.begin());
  }
  const double noise_power = power(m.noise_part);
  if (noise_power <= 0.0) throw DataError("mix_at_snr: selected noise segment has zero power");

  m.alpha = std::sqrt(clean_power / (noise_power * std::pow(10.0, spec.snr_db / 10.0)));
  for (auto& x : m.noise_part.samples) x *= m.alpha;

  m.gaussian_part = AudioBuffer{std::vector<double>(len, 0.0), clean.sample_rate};
  if (spec.gaussian_amplitude > 0.0) {
    for (auto& g : m.gaussian_part.samples) g = rng.normal();
    double scale = spec.gaussian_amplitude;
    if (opts.gaussian_mode == GaussianMode::peak) {
      double peak = 0.0;
      for (double g : m.gaussian_part.samples) peak = std::max(peak, std::abs(g));
      if (peak > 0.0) scale /= peak;
    }
    for (auto& g : m.gaussian_part.samples) g *= scale;
  }

  m.clean_part = clean;
  m.mixed = AudioBuffer{std::vector<double>(len), clean.sample_rate};
  double peak = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    m.mixed.samples[i] = clean.samples[i] + m.noise_part.samples[i] + m.gaussian_part.samples[i];
    peak = std::max(peak, std::abs(m.mixed.samples[i]));
  }
  if (peak > 1.0) {
    if (opts.peak_policy == PeakPolicy::normalize) {
      m.peak_gain = 1.0 / peak;
      for (auto* part : {&m.mixed, &m.clean_part, &m.noise_part, &m.gaussian_part}) {
        for (auto& x : part->samples) x *= m.peak_gain;
      }
    } else {
      for (auto& x : m.mixed.samples) x = std::clamp(x, -1.0, 1.0);
    }
  }
  return m;
}

SampledNoise sample_noise(Condition condition, std::size_t noise_file_count, Rng& rng) {
  SampledNoise s;
  if (condition == Condition::clean) return s;
  if (noise_file_count == 0) throw DataError("no noise files available for condition " + std::string(to_string(condition)));
  switch (condition) {
    case Condition::mixed: s.spec.snr_db = rng.uniform(0.0, 15.0); break;
    case Condition::snr5: s.spec.snr_db = 5.0; break;
    case Condition::snr10: s.spec.snr_db = 10.0; break;
    case Condition::clean: break;
  }
  s.spec.gaussian_amplitude = rng.uniform(kGaussianAmplitudeMin, kGaussianAmplitudeMax);
  s.noise_index = rng.below(noise_file_count);
  s.spec.seed = rng.next_u64();
  return s;
}

nlohmann::ordered_json to_json(const CorpusRecord& r) {
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["id"] = r.id;
  j["audio_path"] = r.audio_path;
  j["clean_path"] = r.clean_path;
  j["condition"] = to_string(r.condition);
  if (r.noise) {
    j["snr_db"] = r.noise->snr_db;
    nlohmann::ordered_json n;
    n["ambient_source"] = r.noise->ambient_source ? nlohmann::ordered_json(*r.noise->ambient_source)
                                                  : nlohmann::ordered_json(nullptr);
    n["snr_db"] = r.noise->snr_db;
    n["gaussian_amplitude"] = r.noise->gaussian_amplitude;
    n["seed"] = r.noise->seed;
    j["noise"] = n;
  } else {
    j["snr_db"] = nullptr;
    j["noise"] = nullptr;
  }
  for (auto it = r.passthrough.begin(); it != r.passthrough.end(); ++it) j[it.key()] = it.value();
  return j;
}

CorpusRecord corpus_record_from_json(const nlohmann::ordered_json& j) {
  static const char* kKnown[] = {"schema", "id", "audio_path", "clean_path", "condition", "snr_db", "noise"};
  CorpusRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.audio_path = j.at("audio_path").get<std::string>();
    r.clean_path = j.at("clean_path").get<std::string>();
    r.condition = parse_condition(j.at("condition").get<std::string>());
    const auto& n = j.at("noise");
    if (!n.is_null()) {
      NoiseSpec spec;
      if (!n.at("ambient_source").is_null()) spec.ambient_source = n.at("ambient_source").get<std::string>();
      spec.snr_db = n.at("snr_db").get<double>();
      spec.gaussian_amplitude = n.at("gaussian_amplitude").get<double>();
      spec.seed = n.at("seed").get<std::uint64_t>();
      r.noise = spec;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corpus record: ") + e.what());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(kKnown), std::end(kKnown), it.key()) == std::end(kKnown)) {
      r.passthrough[it.key()] = it.value();
    }
  }
  return r;
}

std::vector<std::filesystem::path> list_noise_files(const std::filesystem::path& noise_dir) {
  if (!std::filesystem::is_directory(noise_dir)) throw DataError("noise directory not found: " + noise_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(noise_dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.generic_string() < b.generic_string(); });
  return files;
}

std::vector<CorpusRecord> build_condition_corpus(const CorpusOptions& opts) {
  const auto entries = read_clean_manifest(opts.clean_manifest);
  std::vector<std::filesystem::path> noise_files;
  if (opts.condition != Condition::clean) {
    noise_files = list_noise_files(opts.noise_dir);
    if (noise_files.empty()) throw DataError("noise directory " + opts.noise_dir.string() + " has no WAV files");
  }
  std::filesystem::create_directories(opts.out_dir);

  std::vector<CorpusRecord> records(opts.count);
  for (std::size_t k = 0; k < opts.count; ++k) {
    const auto& e = entries[k % entries.size()];
    Rng rng(derive_seed(opts.seed, k));
    const auto sampled = sample_noise(opts.condition, noise_files.size(), rng);
    CorpusRecord& r = records[k];
    r.id = k < entries.size() ? e.id : e.id + "_r" + std::to_string(k / entries.size());
    r.clean_path = e.path.string();
    r.audio_path = (opts.out_dir / (file_safe(r.id) + ".wav")).string();
    r.condition = opts.condition;
    r.passthrough = e.passthrough;
    if (opts.condition != Condition::clean) {
      r.noise = sampled.spec;
      r.noise->ambient_source = noise_files[sampled.noise_index].string();
    }
  }

  parallel_for(records.size(), opts.jobs, [&](std::size_t k) {
    const CorpusRecord& r = records[k];
    if (!r.noise) {
      std::filesystem::copy_file(r.clean_path, r.audio_path, std::filesystem::copy_options::overwrite_existing);
    } else {
      write_wav(regenerate(r, opts.mix), r.audio_path);
    }
  });

  std::ofstream manifest(opts.out_dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw DataError("cannot write corpus manifest in " + opts.out_dir.string());
  for (const auto& r : records) manifest << to_json(r).dump() << '\n';
  return records;
}

AudioBuffer regenerate(const CorpusRecord& record, const MixOptions& opts) {
  const AudioBuffer clean = read_wav(record.clean_path);
  if (!record.noise) return clean;
  if (!record.noise->ambient_source) throw DataError("record " + record.id + ": noise without ambient source");
  const AudioBuffer noise = read_wav(*record.noise->ambient_source);
  return mix_at_snr(clean, noise, *record.noise, opts).mixed;
}

}  // namespace elnkit::audio
