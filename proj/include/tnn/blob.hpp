#pragma once

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tnn {

/// Self-describing binary container shared by checkpoints and dataset files:
///   8 bytes  magic "TNNBLOB1"
///   8 bytes  header length L (little-endian u64)
///   L bytes  JSON header (UTF-8)
///   rest     payload as little-endian IEEE-754 doubles
struct Blob {
    nlohmann::json header;
    std::vector<double> payload;
};

std::string encode_blob(const nlohmann::json& header, std::span<const double> payload);
/// Throws FormatError (with byte offset) on malformed input.
Blob decode_blob(std::string_view bytes);

void write_blob(const std::filesystem::path& path, const nlohmann::json& header, std::span<const double> payload);
Blob read_blob(const std::filesystem::path& path);

/// Whole-file helpers; throw std::runtime_error on I/O failure.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tnn
