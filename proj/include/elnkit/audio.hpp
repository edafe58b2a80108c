#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "elnkit/rng.hpp"
#include "elnkit/types.hpp"

namespace elnkit::audio {

inline constexpr std::uint32_t kDefaultSampleRate = 16000;

struct AudioBuffer {
  std::vector<double> samples;
  std::uint32_t sample_rate = kDefaultSampleRate;

  bool operator==(const AudioBuffer&) const = default;
};

// Mean of squared samples over the whole buffer.
double power(const AudioBuffer& b);

// 10 log10(P_speech / P_noise). Throws DataError for unequal lengths or a
// zero-power input.
double measure_snr(const AudioBuffer& speech, const AudioBuffer& noise);

// RIFF/WAVE, PCM, mono, 16-bit. The writer always emits the canonical 44-byte
// header; the reader skips unknown chunks and rejects anything other than
// mono 16-bit PCM with FormatError.
AudioBuffer read_wav(const std::filesystem::path& path);
void write_wav(const AudioBuffer& b, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const AudioBuffer& b);
AudioBuffer decode_wav(const std::vector<std::uint8_t>& bytes);

// Round trip through 16-bit PCM (clamp, round to nearest).
AudioBuffer quantize_pcm16(const AudioBuffer& b);

enum class GaussianMode {
  stddev,  // amplitude is the standard deviation
  peak,    // amplitude is the peak absolute value of the Gaussian component
};
enum class PeakPolicy {
  normalize,  // scale the whole mixture down only if |y| exceeds 1
  clip,       // hard-clip to [-1, 1]
};

struct MixOptions {
  GaussianMode gaussian_mode = GaussianMode::stddev;
  PeakPolicy peak_policy = PeakPolicy::normalize;
};

struct Mixture {
  AudioBuffer mixed;
  // Components after the final peak gain, so that mixed == clean_part +
  // noise_part + gaussian_part sample by sample (before any clipping).
  AudioBuffer clean_part;
  AudioBuffer noise_part;
  AudioBuffer gaussian_part;
  double alpha = 0.0;      // ambient noise scale factor
  double peak_gain = 1.0;  // applied to everything when normalizing
  std::size_t noise_offset = 0;
};

// Loops or crops `noise` to the clean length at a seeded offset, scales it to
// the requested SNR, adds the Gaussian component (ambient first, Gaussian
// second) and applies the peak policy. Randomness comes only from spec.seed.
Mixture mix_at_snr(const AudioBuffer& clean, const AudioBuffer& noise, const NoiseSpec& spec,
                   const MixOptions& opts = {});

// Per-utterance noise parameters for one condition. snr_db is fixed for
// snr5/snr10 and Uniform[0, 15] for mixed; the Gaussian amplitude is
// Uniform[0.001, 0.015]. `noise_files` must be nonempty except for clean.
struct SampledNoise {
  NoiseSpec spec;
  std::size_t noise_index = 0;
};
SampledNoise sample_noise(Condition condition, std::size_t noise_file_count, Rng& rng);

struct CorpusRecord {
  std::string id;
  std::string clean_path;
  std::string audio_path;
  Condition condition = Condition::clean;
  std::optional<NoiseSpec> noise;
  nlohmann::ordered_json passthrough = nlohmann::ordered_json::object();

  bool operator==(const CorpusRecord&) const = default;
};

nlohmann::ordered_json to_json(const CorpusRecord& r);
CorpusRecord corpus_record_from_json(const nlohmann::ordered_json& j);

struct CorpusOptions {
  std::filesystem::path clean_manifest;
  std::filesystem::path noise_dir;
  Condition condition = Condition::mixed;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  MixOptions mix;
  unsigned jobs = 1;
};

// Writes <out_dir>/<id>.wav for every record plus <out_dir>/manifest.jsonl
// and returns the records. The clean manifest is JSONL with at least
// "audio_path" (optional "id", other fields passed through) or plain lines
// holding one path each. Entries are reused round-robin when count exceeds
// the manifest size. Throws DataError on an empty noise directory for a
// non-clean condition.
std::vector<CorpusRecord> build_condition_corpus(const CorpusOptions& opts);

// Re-creates the audio of one manifest record from its stored NoiseSpec.
AudioBuffer regenerate(const CorpusRecord& record, const MixOptions& opts = {});

std::vector<std::filesystem::path> list_noise_files(const std::filesystem::path& noise_dir);

}  // namespace elnkit::audio
