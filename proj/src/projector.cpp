#include "elnkit/projector.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "elnkit/errors.hpp"
#include "elnkit/rng.hpp"

namespace elnkit::projector {

namespace {

constexpr char kWeightsMagic[4] = {'E', 'L', 'N', 'P'};
constexpr char kPrefixMagic[4] = {'E', 'L', 'N', 'X'};

static_assert(std::endian::native == std::endian::little, "little-endian host expected");

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  const char* what;

  template <typename T>
  T get() {
    if (pos + sizeof(T) > bytes.size()) throw FormatError(std::string(what) + ": truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::size_t remaining() const { return bytes.size() - pos; }
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

std::size_t ProjectorWeights::input_dim() const { return layers.empty() ? 0 : layers.front().cols; }
std::size_t ProjectorWeights::output_dim() const { return layers.empty() ? 0 : layers.back().rows; }
std::size_t ProjectorWeights::llm_embedding_dim() const {
  return prefix_len == 0 ? 0 : output_dim() / prefix_len;
}

void validate(const ProjectorWeights& w) {
  if (w.layers.empty()) throw DataError("projector: no layers");
  if (w.prefix_len == 0) throw DataError("projector: prefix_len must be >= 1");
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const Layer& layer = w.layers[l];
    const std::string name = "projector layer " + std::to_string(l);
    if (layer.rows == 0 || layer.cols == 0) throw DataError(name + ": zero dimension");
    if (l > 0 && layer.cols != w.layers[l - 1].rows) {
      throw DataError(name + ": input size " + std::to_string(layer.cols) + " does not match previous output " +
                      std::to_string(w.layers[l - 1].rows));
    }
    if (layer.weight.size() != layer.rows * layer.cols || layer.bias.size() != layer.rows) {
      throw DataError(name + ": weight or bias size does not match its dimensions");
    }
    if (static_cast<std::uint32_t>(layer.activation) > 2) throw DataError(name + ": unknown activation");
    for (float x : layer.weight) {
      if (!std::isfinite(x)) throw DataError(name + ": non-finite weight");
    }
    for (float x : layer.bias) {
      if (!std::isfinite(x)) throw DataError(name + ": non-finite bias");
    }
  }
  if (w.output_dim() % w.prefix_len != 0) {
    throw DataError("projector: output size " + std::to_string(w.output_dim()) + " is not a multiple of prefix_len " +
                    std::to_string(w.prefix_len));
  }
}

PrefixMatrix project(std::span<const double> input, const ProjectorWeights& w) {
  if (input.size() != w.input_dim()) {
    throw DataError("projector: input has " + std::to_string(input.size()) + " values, weights expect " +
                    std::to_string(w.input_dim()));
  }
  std::vector<double> x(input.begin(), input.end());
  std::vector<double> y;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const Layer& layer = w.layers[l];
    y.assign(layer.rows, 0.0);
    for (std::size_t r = 0; r < layer.rows; ++r) {
      const float* row = layer.weight.data() + r * layer.cols;
      double acc = 0.0;
      for (std::size_t c = 0; c < layer.cols; ++c) acc += static_cast<double>(row[c]) * x[c];
      y[r] = activate(layer.activation, acc + static_cast<double>(layer.bias[r]));
      if (!std::isfinite(y[r])) throw DataError("projector: non-finite value in layer " + std::to_string(l));
    }
    x.swap(y);
  }
  return PrefixMatrix{w.prefix_len, w.llm_embedding_dim(), std::move(x)};
}

PrefixMatrix project(const eln::ELNVector& eln, const ProjectorWeights& w) {
  const auto flat = eln.concatenated();
  return project(flat, w);
}

std::vector<std::uint8_t> serialize(const ProjectorWeights& w) {
  validate(w);
  std::vector<std::uint8_t> out(std::begin(kWeightsMagic), std::end(kWeightsMagic));
  put_le<std::uint32_t>(out, kWeightsVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.layers.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.prefix_len));
  for (const auto& l : w.layers) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.rows));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.cols));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.activation));
  }
  for (const auto& l : w.layers) {
    for (float x : l.weight) put_le<float>(out, x);
    for (float x : l.bias) put_le<float>(out, x);
  }
  return out;
}

ProjectorWeights deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) {
    throw FormatError("projector weights: bad magic");
  }
  Reader in{bytes, 4, "projector weights"};
  const auto version = in.get<std::uint32_t>();
  if (version != kWeightsVersion) throw FormatError("projector weights: unsupported version " + std::to_string(version));
  const auto layer_count = in.get<std::uint32_t>();
  ProjectorWeights w;
  w.prefix_len = in.get<std::uint32_t>();
  if (layer_count == 0 || layer_count > in.remaining() / 12) throw FormatError("projector weights: bad layer count");
  std::size_t payload_values = 0;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    Layer layer;
    layer.rows = in.get<std::uint32_t>();
    layer.cols = in.get<std::uint32_t>();
    const auto act = in.get<std::uint32_t>();
    if (act > 2) throw FormatError("projector weights: unknown activation id " + std::to_string(act));
    layer.activation = static_cast<Activation>(act);
    payload_values += layer.rows * layer.cols + layer.rows;
    w.layers.push_back(std::move(layer));
  }
  if (in.remaining() != payload_values * sizeof(float)) {
    throw FormatError("projector weights: header dimensions need " + std::to_string(payload_values * sizeof(float)) +
                      " payload bytes, file has " + std::to_string(in.remaining()));
  }
  for (auto& layer : w.layers) {
    layer.weight.resize(layer.rows * layer.cols);
    for (auto& x : layer.weight) x = in.get<float>();
    layer.bias.resize(layer.rows);
    for (auto& x : layer.bias) x = in.get<float>();
  }
  try {
    validate(w);
  } catch (const DataError& e) {
    throw FormatError(e.what());
  }
  return w;
}

void save_weights(const ProjectorWeights& w, const std::filesystem::path& path) { write_file(serialize(w), path); }

ProjectorWeights load_weights(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ProjectorWeights init_weights(const std::vector<std::size_t>& dims, std::size_t prefix_len, std::uint64_t seed,
                              Activation hidden) {
  if (dims.size() < 2) throw UsageError("init_weights: need at least input and output sizes");
  Rng rng(seed);
  ProjectorWeights w;
  w.prefix_len = prefix_len;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.cols = dims[l];
    layer.rows = dims[l + 1];
    if (layer.cols == 0 || layer.rows == 0) throw UsageError("init_weights: zero layer size");
    layer.activation = l + 2 == dims.size() ? Activation::identity : hidden;
    const double bound = kInitScale / std::sqrt(static_cast<double>(layer.cols));
    layer.weight.resize(layer.rows * layer.cols);
    for (auto& x : layer.weight) x = static_cast<float>(rng.uniform(-bound, bound));
    layer.bias.resize(layer.rows);
    for (auto& x : layer.bias) x = static_cast<float>(rng.uniform(-bound, bound));
    w.layers.push_back(std::move(layer));
  }
  validate(w);
  return w;
}

std::vector<std::size_t> default_architecture(std::size_t input_dim, std::size_t llm_dim, std::size_t prefix_len) {
  return {input_dim, 1024, prefix_len * llm_dim};
}

std::vector<std::uint8_t> matrix_bytes(const PrefixMatrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(m.data.size() * 4);
  for (double x : m.data) put_le<float>(out, static_cast<float>(x));
  return out;
}

void save_prefixes(const std::vector<PrefixEntry>& entries, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out(std::begin(kPrefixMagic), std::end(kPrefixMagic));
  const std::size_t rows = entries.empty() ? 0 : entries.front().matrix.rows;
  const std::size_t cols = entries.empty() ? 0 : entries.front().matrix.cols;
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rows));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cols));
  put_le<std::uint32_t>(out, 0);  // placement: unspecified
  for (const auto& e : entries) {
    if (e.matrix.rows != rows || e.matrix.cols != cols || e.matrix.data.size() != rows * cols) {
      throw DataError("prefix archive: entry " + e.id + " has a different shape");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.id.size()));
    out.insert(out.end(), e.id.begin(), e.id.end());
    const auto payload = matrix_bytes(e.matrix);
    out.insert(out.end(), payload.begin(), payload.end());
  }
  write_file(out, path);
}

std::vector<PrefixEntry> load_prefixes(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kPrefixMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a prefix archive");
  }
  Reader in{bytes, 4, "prefix archive"};
  if (in.get<std::uint32_t>() != 1) throw FormatError(path.string() + ": unsupported prefix archive version");
  const auto count = in.get<std::uint32_t>();
  const auto rows = in.get<std::uint32_t>();
  const auto cols = in.get<std::uint32_t>();
  in.get<std::uint32_t>();  // placement
  std::vector<PrefixEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    PrefixEntry e;
    const auto len = in.get<std::uint32_t>();
    if (len > in.remaining()) throw FormatError(path.string() + ": truncated");
    e.id.assign(reinterpret_cast<const char*>(bytes.data() + in.pos), len);
    in.pos += len;
    e.matrix.rows = rows;
    e.matrix.cols = cols;
    e.matrix.data.resize(static_cast<std::size_t>(rows) * cols);
    for (auto& x : e.matrix.data) x = in.get<float>();
    out.push_back(std::move(e));
  }
  if (in.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");
  return out;
}

}  // namespace elnkit::projector
