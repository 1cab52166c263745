#include "matchnet/binio.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "matchnet/errors.hpp"

namespace matchnet {

void BinaryWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void BinaryWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void BinaryWriter::f64(double v) {
    u64(std::bit_cast<std::uint64_t>(v));
}

void BinaryWriter::str(std::string_view s) {
    u64(s.size());
    bytes_.append(s);
}

void BinaryWriter::f64s(std::span<const double> values) {
    u64(values.size());
    for (double v : values) {
        f64(v);
    }
}

void BinaryReader::need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
        throw FormatError("truncated input: need " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", have " + std::to_string(bytes_.size() - pos_));
    }
}

std::uint8_t BinaryReader::u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint32_t BinaryReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    }
    return v;
}

std::uint64_t BinaryReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    }
    return v;
}

double BinaryReader::f64() {
    return std::bit_cast<double>(u64());
}

std::string BinaryReader::str() {
    const auto n = u64();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
}

std::vector<double> BinaryReader::f64s() {
    const auto n = u64();
    if (n > remaining() / 8) {
        throw FormatError("truncated input: array of " + std::to_string(n) + " doubles at offset " +
                          std::to_string(pos_));
    }
    std::vector<double> out(n);
    for (auto& v : out) {
        v = f64();
    }
    return out;
}

std::string_view BinaryReader::raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

} // namespace matchnet
