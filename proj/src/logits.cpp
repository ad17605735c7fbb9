#include "fedkd/logits.hpp"

#include <cstring>
#include <string>

namespace fedkd {

namespace {

void put_u32(std::vector<std::byte>& out, std::uint32_t value) {
    for (int shift = 0; shift < 32; shift += 8) {
        out.push_back(static_cast<std::byte>((value >> shift) & 0xFFu));
    }
}

std::uint32_t get_u32(std::span<const std::byte> bytes, std::size_t offset) {
    std::uint32_t value = 0;
    for (int i = 0; i < 4; ++i) {
        value |= static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(bytes[offset + i]))
                 << (8 * i);
    }
    return value;
}

}  // namespace

std::vector<std::byte> serialize_logits(const LogitMatrix& m) {
    if (!m.values.allFinite()) {
        throw SerializationError("serialize_logits: non-finite entry");
    }
    const auto rows = static_cast<std::uint32_t>(m.values.rows());
    const auto cols = static_cast<std::uint32_t>(m.values.cols());
    std::vector<std::byte> out;
    out.reserve(16 + static_cast<std::size_t>(rows) * cols * 4);
    put_u32(out, m.round);
    put_u32(out, m.source);
    put_u32(out, rows);
    put_u32(out, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) {
            const float value = static_cast<float>(m.values(r, c));
            std::uint32_t bits = 0;
            std::memcpy(&bits, &value, sizeof(bits));
            put_u32(out, bits);
        }
    }
    return out;
}

LogitMatrix deserialize_logits(std::span<const std::byte> bytes) {
    if (bytes.size() < 16) {
        throw SerializationError("deserialize_logits: payload shorter than header");
    }
    LogitMatrix m;
    m.round = get_u32(bytes, 0);
    m.source = get_u32(bytes, 4);
    const std::uint32_t rows = get_u32(bytes, 8);
    const std::uint32_t cols = get_u32(bytes, 12);
    const std::size_t expected = 16 + static_cast<std::size_t>(rows) * cols * 4;
    if (bytes.size() != expected) {
        throw SerializationError("deserialize_logits: payload is " +
                                 std::to_string(bytes.size()) + " bytes, expected " +
                                 std::to_string(expected));
    }
    m.values.resize(rows, cols);
    std::size_t offset = 16;
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) {
            const std::uint32_t bits = get_u32(bytes, offset);
            float value = 0.0f;
            std::memcpy(&value, &bits, sizeof(value));
            m.values(r, c) = static_cast<double>(value);
            offset += 4;
        }
    }
    return m;
}

bool clip_to_frobenius(LogitMatrix& m, double bound) {
    if (!(bound > 0.0)) {
        throw ParamError("clip_to_frobenius: bound must be positive");
    }
    const double norm = m.values.norm();
    if (norm <= bound) {
        return false;
    }
    m.values *= bound / norm;
    return true;
}

}  // namespace fedkd
