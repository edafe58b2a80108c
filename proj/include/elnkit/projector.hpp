#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "elnkit/eln.hpp"

namespace elnkit::projector {

enum class Activation : std::uint32_t { identity = 0, relu = 1, tanh = 2 };

std::string_view to_string(Activation a);

struct Layer {
  std::size_t rows = 0;  // output size
  std::size_t cols = 0;  // input size
  std::vector<float> weight;  // rows x cols, row-major
  std::vector<float> bias;    // rows
  Activation activation = Activation::identity;

  bool operator==(const Layer&) const = default;
};

struct ProjectorWeights {
  std::vector<Layer> layers;
  std::size_t prefix_len = 1;

  std::size_t input_dim() const;
  std::size_t output_dim() const;  // prefix_len * llm_embedding_dim
  std::size_t llm_embedding_dim() const;

  bool operator==(const ProjectorWeights&) const = default;
};

// Throws DataError: empty network, broken dimension chain, weight/bias sizes,
// non-finite values, prefix_len == 0 or not dividing the output size.
void validate(const ProjectorWeights& w);

struct PrefixMatrix {
  std::size_t rows = 0;  // prefix_len
  std::size_t cols = 0;  // llm embedding dim
  std::vector<double> data;  // row-major

  bool operator==(const PrefixMatrix&) const = default;
};

// Affine map then activation, layer by layer, accumulated in double.
// Throws DataError on an input size mismatch or on a non-finite value
// (naming the layer).
PrefixMatrix project(std::span<const double> input, const ProjectorWeights& w);
PrefixMatrix project(const eln::ELNVector& eln, const ProjectorWeights& w);

// Weight file, little-endian:
//   magic "ELNP", version u32 (1), layer count u32, prefix_len u32,
//   per layer: rows u32, cols u32, activation u32,
//   payload: per layer rows*cols f32 weights (row-major) then rows f32 bias.
// The payload must fill the file exactly; anything else is a FormatError.
inline constexpr std::uint32_t kWeightsVersion = 1;
std::vector<std::uint8_t> serialize(const ProjectorWeights& w);
ProjectorWeights deserialize(const std::vector<std::uint8_t>& bytes);
void save_weights(const ProjectorWeights& w, const std::filesystem::path& path);
ProjectorWeights load_weights(const std::filesystem::path& path);

// Weights and biases ~ Uniform[-k/sqrt(fan_in), k/sqrt(fan_in)] with
// k = kInitScale. `dims` lists layer sizes including input and output;
// hidden layers use `hidden`, the last layer identity.
inline constexpr double kInitScale = 1.0;
ProjectorWeights init_weights(const std::vector<std::size_t>& dims, std::size_t prefix_len,
                              std::uint64_t seed, Activation hidden = Activation::tanh);

// (d + d') -> 1024 -> prefix_len * llm_dim.
std::vector<std::size_t> default_architecture(std::size_t input_dim, std::size_t llm_dim,
                                              std::size_t prefix_len = 1);

// Prefix archive written by the `project` command, little-endian:
//   magic "ELNX", version u32 (1), count u32, rows u32, cols u32,
//   placement u32 (0: unspecified, the consumer decides where the rows go),
//   count x { id length u32, id bytes, rows*cols f32 }
struct PrefixEntry {
  std::string id;
  PrefixMatrix matrix;
  bool operator==(const PrefixEntry&) const = default;
};
void save_prefixes(const std::vector<PrefixEntry>& entries, const std::filesystem::path& path);
std::vector<PrefixEntry> load_prefixes(const std::filesystem::path& path);
// Raw little-endian f32 bytes of the matrix (row-major).
std::vector<std::uint8_t> matrix_bytes(const PrefixMatrix& m);

}  // namespace elnkit::projector
