#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pevade/pe.hpp"

namespace pevade::manip {

enum class Kind {
    PartialDos,
    FullDos,
    Extend,
    Shift,
    HeaderFields,
    SectionInjection,
    ApiInjection,
    SlackSpace,
    Padding,
};

struct ApiEntry {
    std::string dll;
    std::string function;
};

struct Manipulation {
    Kind kind;
    std::uint64_t amount = 0;                    // Extend/Shift amount, SectionInjection/Padding size
    std::array<std::uint8_t, 8> section_name{};  // SectionInjection
    std::vector<ApiEntry> api_entries;           // ApiInjection

    static Manipulation partial_dos() { return {Kind::PartialDos}; }
    static Manipulation full_dos() { return {Kind::FullDos}; }
    static Manipulation extend(std::uint64_t k) { return {Kind::Extend, k}; }
    static Manipulation shift(std::uint64_t k) { return {Kind::Shift, k}; }
    static Manipulation header_fields() { return {Kind::HeaderFields}; }
    static Manipulation section_injection(const std::string& name, std::uint64_t size);
    static Manipulation api_injection(std::vector<ApiEntry> entries);
    static Manipulation slack_space() { return {Kind::SlackSpace}; }
    static Manipulation padding(std::uint64_t size) { return {Kind::Padding, size}; }
};

struct Region {
    std::uint64_t offset;
    std::uint64_t length;
    std::uint64_t end() const { return offset + length; }
    bool operator==(const Region&) const = default;
};

struct EditablePlan {
    pe::PeFile transformed;        // post-manipulation structure, perturbation not yet applied
    Bytes base_output;             // serialize(transformed)
    std::vector<Region> editable;  // disjoint, sorted, in output coordinates
    std::vector<Region> inserted;  // every structurally inserted byte range, output coordinates
    std::uint64_t structural_insertions = 0;
    std::uint64_t structural_substitutions = 0;  // non-editable bytes the rewrite already changed
    std::uint64_t original_length = 0;

    std::uint64_t editable_length() const;
    bool is_inserted(std::uint64_t out_off) const;
    // Original-file offset aligned with an output offset; valid outside inserted regions.
    std::uint64_t to_original(std::uint64_t out_off) const;
};

EditablePlan plan(const pe::PeFile& x, const Manipulation& m);
EditablePlan compose(const pe::PeFile& x, const std::vector<Manipulation>& ms);

Bytes apply(const EditablePlan& p, const Bytes& delta);
Bytes apply(const pe::PeFile& x, const Manipulation& m, const Bytes& delta);

// Default characteristics for injected sections: initialized data, readable.
constexpr std::uint32_t kInjectedSectionCharacteristics = 0x40000040u;

}  // namespace pevade::manip
