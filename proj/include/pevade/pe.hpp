#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pevade/bytes.hpp"

namespace pevade::pe {

constexpr std::uint16_t kDosMagic = 0x5A4D;     // "MZ"
constexpr std::uint32_t kPeSignature = 0x00004550;  // "PE\0\0"
constexpr std::uint16_t kMagicPe32 = 0x10B;
constexpr std::uint16_t kMagicPe32Plus = 0x20B;

struct DosHeader {
    std::array<std::uint8_t, 58> stub{};  // file bytes [0x02, 0x3c)
    std::uint32_t e_lfanew = 0x40;        // stored at 0x3c
    Bytes extended_stub;                  // file bytes [0x40, e_lfanew)
};

struct CoffHeader {
    std::uint16_t machine = 0;
    std::uint16_t number_of_sections = 0;
    std::uint32_t time_date_stamp = 0;
    std::uint32_t pointer_to_symbol_table = 0;
    std::uint32_t number_of_symbols = 0;
    std::uint16_t size_of_optional_header = 0;
    std::uint16_t characteristics = 0;
};

// The optional header is kept verbatim; named fields are decoded on access so
// that unknown/reserved bytes survive a parse/serialize round trip untouched.
struct OptionalHeader {
    Bytes raw;

    std::uint16_t magic() const { return read_u16(raw, 0); }
    bool is_pe32_plus() const { return magic() == kMagicPe32Plus; }

    std::uint32_t size_of_code() const { return read_u32(raw, 4); }
    std::uint32_t address_of_entry_point() const { return read_u32(raw, 16); }
    void set_address_of_entry_point(std::uint32_t v) { write_u32(raw, 16, v); }
    std::uint64_t image_base() const {
        return is_pe32_plus() ? read_u64(raw, 24) : read_u32(raw, 28);
    }
    std::uint32_t section_alignment() const { return read_u32(raw, 32); }
    std::uint32_t file_alignment() const { return read_u32(raw, 36); }
    std::uint32_t size_of_image() const { return read_u32(raw, 56); }
    void set_size_of_image(std::uint32_t v) { write_u32(raw, 56, v); }
    std::uint32_t size_of_headers() const { return read_u32(raw, 60); }
    void set_size_of_headers(std::uint32_t v) { write_u32(raw, 60, v); }
    std::uint32_t checksum() const { return read_u32(raw, 64); }
    std::uint16_t subsystem() const { return read_u16(raw, 68); }

    std::size_t data_directory_offset() const { return is_pe32_plus() ? 112 : 96; }
    std::uint32_t data_directory_count() const {
        std::size_t off = is_pe32_plus() ? 108 : 92;
        return off + 4 <= raw.size() ? read_u32(raw, off) : 0;
    }
    std::pair<std::uint32_t, std::uint32_t> data_directory(std::size_t i) const {
        std::size_t off = data_directory_offset() + 8 * i;
        if (i >= data_directory_count() || off + 8 > raw.size()) return {0, 0};
        return {read_u32(raw, off), read_u32(raw, off + 4)};
    }
    void set_data_directory(std::size_t i, std::uint32_t rva, std::uint32_t size) {
        std::size_t off = data_directory_offset() + 8 * i;
        write_u32(raw, off, rva);
        write_u32(raw, off + 4, size);
    }
};

struct SectionEntry {
    std::array<std::uint8_t, 8> name{};
    std::uint32_t virtual_size = 0;
    std::uint32_t virtual_address = 0;
    std::uint32_t size_of_raw_data = 0;
    std::uint32_t pointer_to_raw_data = 0;
    std::uint32_t pointer_to_relocations = 0;
    std::uint32_t pointer_to_line_numbers = 0;
    std::uint16_t number_of_relocations = 0;
    std::uint16_t number_of_line_numbers = 0;
    std::uint32_t characteristics = 0;

    std::string name_str() const;
    static SectionEntry decode(const Bytes& b, std::size_t off);
    void encode(Bytes& b, std::size_t off) const;
};

struct Section {
    SectionEntry entry;
    Bytes content;  // exactly size_of_raw_data bytes
};

struct ImportDescriptor {
    std::string dll;
    std::vector<std::string> functions;
    std::uint32_t descriptor_rva = 0;  // where this 20-byte descriptor lives
    std::array<std::uint8_t, 20> raw{};
};

struct ImportDirectory {
    std::vector<ImportDescriptor> descriptors;
    std::uint32_t directory_rva = 0;
    bool present() const { return directory_rva != 0; }
};

struct PeFile {
    DosHeader dos;
    CoffHeader coff;
    OptionalHeader optional;
    std::vector<Section> sections;
    std::map<std::uint64_t, Bytes> gaps;  // file offset -> content, covers inter-region bytes
    Bytes overlay;
    std::uint64_t raw_length = 0;
    ImportDirectory imports;

    // End of the section table in the file.
    std::uint64_t header_struct_end() const {
        return std::uint64_t(dos.e_lfanew) + 4 + 20 + coff.size_of_optional_header +
               40ull * sections.size();
    }
    std::uint64_t overlay_offset() const { return raw_length - overlay.size(); }

    std::optional<std::size_t> section_containing_rva(std::uint32_t rva) const;
    // Reads bytes at an RVA out of raw section content; throws ParseError if unmapped.
    Bytes read_rva(std::uint32_t rva, std::size_t n) const;
    std::string read_rva_string(std::uint32_t rva, std::size_t max_len = 512) const;
};

PeFile parse(const Bytes& bytes);
Bytes serialize(const PeFile& pe);

struct SynthSpec {
    int n_sections = 1;
    std::uint32_t file_alignment = 512;
    std::uint32_t section_alignment = 4096;
    std::uint32_t overlay_len = 0;
    std::uint64_t content_seed = 0;
    bool pe32_plus = false;       // derived from seed by synthesize_corpus variants
    bool with_imports = true;
    // Extra section-alignment units between size_of_headers and the first
    // section VA, so header-growing manipulations stay loader-plausible.
    std::uint32_t va_headroom = 1;
};

Bytes synthesize_minimal(const SynthSpec& spec);

struct SlackRegion {
    std::uint64_t offset;
    std::uint64_t length;
};

std::vector<SlackRegion> compute_slack_regions(const PeFile& pe);

}  // namespace pevade::pe
