#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace pevade {

using Bytes = std::vector<std::uint8_t>;

inline std::uint16_t read_u16(const Bytes& b, std::size_t off) {
    std::uint16_t v;
    std::memcpy(&v, b.data() + off, 2);
    return v;
}

inline std::uint32_t read_u32(const Bytes& b, std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, b.data() + off, 4);
    return v;
}

inline std::uint64_t read_u64(const Bytes& b, std::size_t off) {
    std::uint64_t v;
    std::memcpy(&v, b.data() + off, 8);
    return v;
}

inline void write_u16(Bytes& b, std::size_t off, std::uint16_t v) { std::memcpy(b.data() + off, &v, 2); }
inline void write_u32(Bytes& b, std::size_t off, std::uint32_t v) { std::memcpy(b.data() + off, &v, 4); }
inline void write_u64(Bytes& b, std::size_t off, std::uint64_t v) { std::memcpy(b.data() + off, &v, 8); }

inline std::uint64_t align_up(std::uint64_t v, std::uint64_t a) {
    return a == 0 ? v : (v + a - 1) / a * a;
}

// FNV-1a, used for content digests.
inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct ParseError : std::runtime_error {
    enum class Kind { BadMagic, BadPeOffset, BadSignature, Truncated, Malformed };
    Kind kind;
    std::uint64_t offset;
    ParseError(Kind k, std::uint64_t off, const std::string& msg)
        : std::runtime_error(msg), kind(k), offset(off) {}
};

struct InvariantViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PlanError : std::runtime_error {
    enum class Kind { NoHeaderRoom, NoSlack, BadAlignment, IncompatiblePair, LengthMismatch, SpecInfeasible };
    Kind kind;
    PlanError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

}  // namespace pevade
