#pragma once

#include "fedkd/types.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedkd {

/// Sender tags for the `source` header field.
inline constexpr std::uint32_t kTeacherSource = 0xFFFFFFFFu;
inline constexpr std::uint32_t kAggregateSource = 0xFFFFFFFEu;

/// M x C prediction matrix on the public reference set: the protocol's only
/// inter-node payload.
struct LogitMatrix {
    Matrix values;               // M x C
    std::uint32_t round = 0;
    std::uint32_t source = 0;    // client id, kTeacherSource or kAggregateSource
};

/// The smoothed global distillation target with its provenance.
struct DistillTarget {
    LogitMatrix smoothed;  // EMA output, what clients train against
    LogitMatrix raw;       // teacher-fused aggregate before smoothing
    std::uint32_t round = 0;
    double beta_used = 0.0;
    double gamma_used = 0.0;
};

/// Wire format: 16-byte header (round, source, M, C as little-endian u32)
/// followed by row-major IEEE-754 float32 values, little-endian. The body is
/// exactly 4*M*C bytes.
std::vector<std::byte> serialize_logits(const LogitMatrix& m);

LogitMatrix deserialize_logits(std::span<const std::byte> bytes);

/// Scales the matrix down to the Frobenius bound when exceeded.
/// Returns true when clipping occurred.
bool clip_to_frobenius(LogitMatrix& m, double bound);

}  // namespace fedkd
