#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pevade/pe.hpp"

namespace pevade::oracle {

struct ImageTooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::uint64_t kDefaultImageCap = 256ull * 1024 * 1024;

// Loader-view of a PE: header bytes then each section mapped at its VA,
// truncated/zero-extended to virtual_size. provenance[i] is the source file
// offset of image byte i, or -1 for zero-fill.
struct MappedImage {
    Bytes image;
    std::vector<std::int64_t> provenance;
};

MappedImage map_image(const Bytes& file, std::uint64_t image_cap = kDefaultImageCap);

struct SectionDigest {
    std::uint32_t virtual_address;
    std::uint32_t virtual_size;
    std::uint64_t content_hash;
    bool operator==(const SectionDigest&) const = default;
};

struct FunctionalDigest {
    std::uint32_t entry_rva = 0;
    std::uint16_t machine = 0;
    std::uint16_t subsystem = 0;
    std::vector<SectionDigest> section_digests;
    std::set<std::pair<std::string, std::string>> import_set;  // (dll lowercase, function)
    bool operator==(const FunctionalDigest&) const = default;
};

FunctionalDigest functional_digest(const Bytes& file);

enum class ViolationCategory { EntryPoint, SectionContent, ImportShrunk, MachineMismatch };

struct Violation {
    ViolationCategory category;
    std::string detail;
};

struct EquivalenceReport {
    std::vector<Violation> violations;
    bool equivalent() const { return violations.empty(); }
};

// m_kinds carries the manipulation kinds that produced `manipulated`; an
// import-set superset is tolerated only when it contains ApiInjection.
EquivalenceReport check_equivalence(const Bytes& original, const Bytes& manipulated,
                                    bool api_injection_applied = false);

}  // namespace pevade::oracle
