#include "tnn/blob.hpp"

#include "tnn/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tnn {

namespace {

constexpr std::string_view kMagic = "TNNBLOB1";

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(std::string_view bytes, std::size_t offset) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)])) << (8 * i);
    }
    return v;
}

}  // namespace

std::string encode_blob(const nlohmann::json& header, std::span<const double> payload) {
    const std::string text = header.dump();
    std::string out;
    out.reserve(16 + text.size() + payload.size() * 8);
    out.append(kMagic);
    put_u64(out, text.size());
    out.append(text);
    for (double d : payload) put_u64(out, std::bit_cast<std::uint64_t>(d));
    return out;
}

Blob decode_blob(std::string_view bytes) {
    if (bytes.size() < 16) throw FormatError("blob truncated: header needs 16 bytes", bytes.size());
    if (bytes.substr(0, 8) != kMagic) throw FormatError("bad blob magic, expected TNNBLOB1", 0);
    const std::uint64_t len = get_u64(bytes, 8);
    if (len > bytes.size() - 16) throw FormatError("blob truncated inside JSON header", bytes.size());
    Blob blob;
    try {
        blob.header = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("blob header is not valid JSON: ") + e.what(), 16 + e.byte);
    }
    const std::size_t start = 16 + len;
    const std::size_t rest = bytes.size() - start;
    if (rest % 8 != 0) throw FormatError("blob payload length is not a multiple of 8", start + rest - rest % 8);
    blob.payload.resize(rest / 8);
    for (std::size_t i = 0; i < blob.payload.size(); ++i) {
        blob.payload[i] = std::bit_cast<double>(get_u64(bytes, start + 8 * i));
    }
    return blob;
}

void write_blob(const std::filesystem::path& path, const nlohmann::json& header, std::span<const double> payload) {
    write_file(path, encode_blob(header, payload));
}

Blob read_blob(const std::filesystem::path& path) { return decode_blob(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace tnn
