#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace elnkit {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::span<const std::uint8_t> bytes);
Sha256Digest sha256(std::string_view text);
std::string to_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
// Throws DataError when the file cannot be read.
std::string sha256_file_hex(const std::filesystem::path& path);

// First eight digest bytes read as a little-endian integer. This is the key
// scheme of the embedding archive format.
std::uint64_t text_key(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace elnkit
