#include "pevade/pe.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace pevade::pe {

namespace {

using PK = ParseError::Kind;

[[noreturn]] void fail(PK kind, std::uint64_t off, const std::string& what) {
    std::ostringstream os;
    os << what << " (offset 0x" << std::hex << off << ")";
    throw ParseError(kind, off, os.str());
}

bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

void check_alignments(const OptionalHeader& opt, std::uint64_t opt_off) {
    std::uint32_t fa = opt.file_alignment();
    std::uint32_t sa = opt.section_alignment();
    if (!is_pow2(fa) || fa < 512 || fa > 65536)
        fail(PK::Malformed, opt_off + 36, "invalid file_alignment");
    if (sa < fa) fail(PK::Malformed, opt_off + 32, "section_alignment < file_alignment");
}

void decode_imports(PeFile& pe) {
    auto [dir_rva, dir_size] = pe.optional.data_directory(1);
    if (dir_rva == 0) return;
    pe.imports.directory_rva = dir_rva;
    bool wide = pe.optional.is_pe32_plus();
    for (std::uint32_t i = 0;; ++i) {
        std::uint32_t desc_rva = dir_rva + 20 * i;
        Bytes d = pe.read_rva(desc_rva, 20);
        bool all_zero = std::all_of(d.begin(), d.end(), [](std::uint8_t b) { return b == 0; });
        if (all_zero) break;
        if (i > 4096) fail(PK::Malformed, desc_rva, "unterminated import directory");
        ImportDescriptor desc;
        desc.descriptor_rva = desc_rva;
        std::copy(d.begin(), d.end(), desc.raw.begin());
        std::uint32_t oft = read_u32(d, 0);
        std::uint32_t name_rva = read_u32(d, 12);
        std::uint32_t ft = read_u32(d, 16);
        desc.dll = pe.read_rva_string(name_rva);
        std::uint32_t thunks = oft != 0 ? oft : ft;
        std::size_t tw = wide ? 8 : 4;
        for (std::uint32_t t = 0;; ++t) {
            Bytes e = pe.read_rva(thunks + std::uint32_t(t * tw), tw);
            std::uint64_t v = wide ? read_u64(e, 0) : read_u32(e, 0);
            if (v == 0) break;
            if (t > 65536) fail(PK::Malformed, thunks, "unterminated import thunk array");
            bool by_ordinal = wide ? (v >> 63) != 0 : (v >> 31) != 0;
            if (by_ordinal) {
                desc.functions.push_back("#" + std::to_string(std::uint16_t(v & 0xFFFF)));
            } else {
                // hint/name entry: u16 hint then the function name
                desc.functions.push_back(pe.read_rva_string(std::uint32_t(v) + 2));
            }
        }
        pe.imports.descriptors.push_back(std::move(desc));
    }
}

}  // namespace

std::string SectionEntry::name_str() const {
    std::size_t n = 0;
    while (n < 8 && name[n] != 0) ++n;
    return std::string(reinterpret_cast<const char*>(name.data()), n);
}

SectionEntry SectionEntry::decode(const Bytes& b, std::size_t off) {
    SectionEntry e;
    std::copy(b.begin() + off, b.begin() + off + 8, e.name.begin());
    e.virtual_size = read_u32(b, off + 8);
    e.virtual_address = read_u32(b, off + 12);
    e.size_of_raw_data = read_u32(b, off + 16);
    e.pointer_to_raw_data = read_u32(b, off + 20);
    e.pointer_to_relocations = read_u32(b, off + 24);
    e.pointer_to_line_numbers = read_u32(b, off + 28);
    e.number_of_relocations = read_u16(b, off + 32);
    e.number_of_line_numbers = read_u16(b, off + 34);
    e.characteristics = read_u32(b, off + 36);
    return e;
}

void SectionEntry::encode(Bytes& b, std::size_t off) const {
    std::copy(name.begin(), name.end(), b.begin() + off);
    write_u32(b, off + 8, virtual_size);
    write_u32(b, off + 12, virtual_address);
    write_u32(b, off + 16, size_of_raw_data);
    write_u32(b, off + 20, pointer_to_raw_data);
    write_u32(b, off + 24, pointer_to_relocations);
    write_u32(b, off + 28, pointer_to_line_numbers);
    write_u16(b, off + 32, number_of_relocations);
    write_u16(b, off + 34, number_of_line_numbers);
    write_u32(b, off + 36, characteristics);
}

std::optional<std::size_t> PeFile::section_containing_rva(std::uint32_t rva) const {
    for (std::size_t i = 0; i < sections.size(); ++i) {
        const auto& e = sections[i].entry;
        if (rva >= e.virtual_address && rva - e.virtual_address < e.virtual_size) return i;
    }
    return std::nullopt;
}

Bytes PeFile::read_rva(std::uint32_t rva, std::size_t n) const {
    auto idx = section_containing_rva(rva);
    if (!idx) fail(PK::Malformed, rva, "RVA not inside any mapped section");
    const auto& s = sections[*idx];
    std::uint32_t off = rva - s.entry.virtual_address;
    Bytes out(n, 0);
    // reads past the raw range fall into the loader's zero-fill
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t p = std::uint64_t(off) + i;
        if (p < s.content.size()) out[i] = s.content[p];
    }
    return out;
}

std::string PeFile::read_rva_string(std::uint32_t rva, std::size_t max_len) const {
    auto idx = section_containing_rva(rva);
    if (!idx) fail(PK::Malformed, rva, "string RVA not inside any mapped section");
    const auto& s = sections[*idx];
    std::uint32_t off = rva - s.entry.virtual_address;
    std::string out;
    for (std::size_t i = 0; i < max_len; ++i) {
        std::uint64_t p = std::uint64_t(off) + i;
        std::uint8_t c = p < s.content.size() ? s.content[p] : 0;
        if (c == 0) return out;
        out.push_back(char(c));
    }
    fail(PK::Malformed, rva, "unterminated name string");
}

PeFile parse(const Bytes& b) {
    if (b.size() < 0x40) fail(PK::Truncated, b.size(), "file shorter than a DOS header");
    if (read_u16(b, 0) != kDosMagic) fail(PK::BadMagic, 0, "missing MZ magic");

    PeFile pe;
    pe.raw_length = b.size();
    std::copy(b.begin() + 0x02, b.begin() + 0x3c, pe.dos.stub.begin());
    pe.dos.e_lfanew = read_u32(b, 0x3c);
    std::uint64_t peo = pe.dos.e_lfanew;
    if (peo < 0x40 || peo + 4 > b.size()) fail(PK::BadPeOffset, 0x3c, "e_lfanew out of range");
    pe.dos.extended_stub.assign(b.begin() + 0x40, b.begin() + peo);

    if (read_u32(b, peo) != kPeSignature) fail(PK::BadSignature, peo, "missing PE signature");
    if (peo + 24 > b.size()) fail(PK::Truncated, peo, "truncated COFF header");
    pe.coff.machine = read_u16(b, peo + 4);
    pe.coff.number_of_sections = read_u16(b, peo + 6);
    pe.coff.time_date_stamp = read_u32(b, peo + 8);
    pe.coff.pointer_to_symbol_table = read_u32(b, peo + 12);
    pe.coff.number_of_symbols = read_u32(b, peo + 16);
    pe.coff.size_of_optional_header = read_u16(b, peo + 20);
    pe.coff.characteristics = read_u16(b, peo + 22);

    std::uint64_t opt_off = peo + 24;
    if (pe.coff.size_of_optional_header < 72)
        fail(PK::Malformed, peo + 20, "optional header too small");
    if (opt_off + pe.coff.size_of_optional_header > b.size())
        fail(PK::Truncated, opt_off, "truncated optional header");
    pe.optional.raw.assign(b.begin() + opt_off, b.begin() + opt_off + pe.coff.size_of_optional_header);
    std::uint16_t magic = pe.optional.magic();
    if (magic != kMagicPe32 && magic != kMagicPe32Plus)
        fail(PK::Malformed, opt_off, "unknown optional header magic");
    check_alignments(pe.optional, opt_off);
    std::uint32_t fa = pe.optional.file_alignment();
    std::uint32_t sa = pe.optional.section_alignment();

    std::uint64_t table_off = opt_off + pe.coff.size_of_optional_header;
    std::uint64_t table_end = table_off + 40ull * pe.coff.number_of_sections;
    if (table_end > b.size()) fail(PK::Truncated, table_off, "truncated section table");

    if (pe.optional.size_of_headers() % fa != 0)
        fail(PK::Malformed, opt_off + 60, "size_of_headers not aligned");
    if (pe.optional.size_of_headers() < table_end)
        fail(PK::Malformed, opt_off + 60, "size_of_headers below end of section table");

    std::uint64_t max_va_end = 0;
    for (std::uint32_t i = 0; i < pe.coff.number_of_sections; ++i) {
        std::uint64_t eoff = table_off + 40ull * i;
        Section s;
        s.entry = SectionEntry::decode(b, eoff);
        const auto& e = s.entry;
        if (e.size_of_raw_data != 0 || e.pointer_to_raw_data != 0) {
            if (e.pointer_to_raw_data % fa != 0 || e.size_of_raw_data % fa != 0)
                fail(PK::Malformed, eoff + 16, "section raw range not file-aligned");
            if (e.pointer_to_raw_data < table_end)
                fail(PK::Malformed, eoff + 20, "section raw data overlaps headers");
            std::uint64_t end = std::uint64_t(e.pointer_to_raw_data) + e.size_of_raw_data;
            if (end > b.size()) fail(PK::Truncated, eoff + 20, "section raw range past end of file");
            s.content.assign(b.begin() + e.pointer_to_raw_data, b.begin() + end);
        }
        if (e.virtual_address % sa != 0)
            fail(PK::Malformed, eoff + 12, "section VA not section-aligned");
        max_va_end = std::max(max_va_end, std::uint64_t(e.virtual_address) + e.virtual_size);
        pe.sections.push_back(std::move(s));
    }

    if (pe.optional.size_of_image() % sa != 0)
        fail(PK::Malformed, opt_off + 56, "size_of_image not section-aligned");
    if (pe.optional.size_of_image() < align_up(max_va_end, sa))
        fail(PK::Malformed, opt_off + 56, "size_of_image below section extent");

    // Region partition: walk raw ranges in file order; everything between them
    // is a gap, everything after the last one is overlay.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;  // (ptr, end)
    for (const auto& s : pe.sections)
        if (s.entry.size_of_raw_data != 0)
            ranges.emplace_back(s.entry.pointer_to_raw_data,
                                std::uint64_t(s.entry.pointer_to_raw_data) + s.entry.size_of_raw_data);
    std::sort(ranges.begin(), ranges.end());
    std::uint64_t cursor = table_end;
    for (const auto& [lo, hi] : ranges) {
        if (lo < cursor) fail(PK::Malformed, lo, "overlapping section raw ranges");
        if (lo > cursor) pe.gaps.emplace(cursor, Bytes(b.begin() + cursor, b.begin() + lo));
        cursor = hi;
    }
    pe.overlay.assign(b.begin() + cursor, b.end());

    decode_imports(pe);
    return pe;
}

Bytes serialize(const PeFile& pe) {
    const auto& opt = pe.optional;
    if (opt.raw.size() != pe.coff.size_of_optional_header)
        throw InvariantViolation("optional header size disagrees with COFF field");
    if (pe.coff.number_of_sections != pe.sections.size())
        throw InvariantViolation("number_of_sections disagrees with section table");
    if (pe.dos.e_lfanew < 0x40 || pe.dos.extended_stub.size() != pe.dos.e_lfanew - 0x40)
        throw InvariantViolation("extended DOS stub length disagrees with e_lfanew");
    std::uint32_t fa = opt.file_alignment();
    if (!is_pow2(fa) || fa < 512 || fa > 65536) throw InvariantViolation("invalid file_alignment");
    if (opt.size_of_headers() % fa != 0)
        throw InvariantViolation("size_of_headers not a multiple of file_alignment");

    std::uint64_t table_end = pe.header_struct_end();
    if (opt.size_of_headers() < table_end)
        throw InvariantViolation("size_of_headers below end of section table");

    // Collect every region and require an exact tiling of the file.
    struct Piece { std::uint64_t off, len; };
    std::vector<Piece> pieces;
    for (const auto& s : pe.sections) {
        const auto& e = s.entry;
        if (s.content.size() != e.size_of_raw_data)
            throw InvariantViolation("section content length disagrees with size_of_raw_data");
        if (e.size_of_raw_data == 0) continue;
        if (e.pointer_to_raw_data % fa != 0)
            throw InvariantViolation("pointer_to_raw_data not a multiple of file_alignment");
        pieces.push_back({e.pointer_to_raw_data, e.size_of_raw_data});
    }
    for (const auto& [off, content] : pe.gaps) pieces.push_back({off, content.size()});
    std::sort(pieces.begin(), pieces.end(), [](const Piece& a, const Piece& b) { return a.off < b.off; });
    std::uint64_t cursor = table_end;
    for (const auto& p : pieces) {
        if (p.off != cursor) throw InvariantViolation("region map does not tile the file");
        cursor += p.len;
    }

    std::uint64_t total = cursor + pe.overlay.size();
    Bytes out(total, 0);
    write_u16(out, 0, kDosMagic);
    std::copy(pe.dos.stub.begin(), pe.dos.stub.end(), out.begin() + 0x02);
    write_u32(out, 0x3c, pe.dos.e_lfanew);
    std::copy(pe.dos.extended_stub.begin(), pe.dos.extended_stub.end(), out.begin() + 0x40);

    std::uint64_t peo = pe.dos.e_lfanew;
    write_u32(out, peo, kPeSignature);
    write_u16(out, peo + 4, pe.coff.machine);
    write_u16(out, peo + 6, pe.coff.number_of_sections);
    write_u32(out, peo + 8, pe.coff.time_date_stamp);
    write_u32(out, peo + 12, pe.coff.pointer_to_symbol_table);
    write_u32(out, peo + 16, pe.coff.number_of_symbols);
    write_u16(out, peo + 20, pe.coff.size_of_optional_header);
    write_u16(out, peo + 22, pe.coff.characteristics);
    std::copy(opt.raw.begin(), opt.raw.end(), out.begin() + peo + 24);

    std::uint64_t table_off = peo + 24 + opt.raw.size();
    for (std::size_t i = 0; i < pe.sections.size(); ++i) {
        pe.sections[i].entry.encode(out, table_off + 40 * i);
        const auto& s = pe.sections[i];
        if (s.entry.size_of_raw_data != 0)
            std::copy(s.content.begin(), s.content.end(), out.begin() + s.entry.pointer_to_raw_data);
    }
    for (const auto& [off, content] : pe.gaps)
        std::copy(content.begin(), content.end(), out.begin() + off);
    std::copy(pe.overlay.begin(), pe.overlay.end(), out.begin() + cursor);
    return out;
}

namespace {

// Import block layout inside the first section, used by synthesize_minimal.
struct ImportBlock {
    Bytes data;
    std::uint32_t dir_rva;
    std::uint32_t dir_size;
};

ImportBlock build_synth_imports(std::uint32_t base_rva, bool wide) {
    const std::vector<std::pair<std::string, std::vector<std::string>>> dlls = {
        {"kernel32.dll", {"ExitProcess", "GetModuleHandleA"}},
        {"user32.dll", {"MessageBoxA"}},
    };
    std::size_t tw = wide ? 8 : 4;
    std::size_t n_desc = dlls.size();
    std::size_t desc_bytes = 20 * (n_desc + 1);
    std::size_t thunk_bytes = 0;
    for (const auto& [dll, fns] : dlls) thunk_bytes += 2 * tw * (fns.size() + 1);
    Bytes blob;
    blob.resize(desc_bytes + thunk_bytes);
    std::size_t thunk_cursor = desc_bytes;
    std::size_t name_cursor = blob.size();
    auto put_name = [&](const std::string& s, bool hint) {
        std::size_t at = name_cursor;
        std::size_t n = s.size() + 1 + (hint ? 2 : 0);
        blob.resize(blob.size() + n + (n % 2));  // keep even alignment
        std::size_t p = at + (hint ? 2 : 0);
        std::copy(s.begin(), s.end(), blob.begin() + p);
        name_cursor = blob.size();
        return std::uint32_t(at);
    };
    for (std::size_t i = 0; i < n_desc; ++i) {
        const auto& [dll, fns] = dlls[i];
        std::size_t ilt = thunk_cursor;
        std::size_t iat = thunk_cursor + tw * (fns.size() + 1);
        thunk_cursor = iat + tw * (fns.size() + 1);
        for (std::size_t j = 0; j < fns.size(); ++j) {
            std::uint32_t hn = base_rva + put_name(fns[j], true);
            if (wide) {
                write_u64(blob, ilt + tw * j, hn);
                write_u64(blob, iat + tw * j, hn);
            } else {
                write_u32(blob, ilt + tw * j, hn);
                write_u32(blob, iat + tw * j, hn);
            }
        }
        std::uint32_t name_rva = base_rva + put_name(dll, false);
        write_u32(blob, 20 * i + 0, base_rva + std::uint32_t(ilt));
        write_u32(blob, 20 * i + 12, name_rva);
        write_u32(blob, 20 * i + 16, base_rva + std::uint32_t(iat));
    }
    return {std::move(blob), base_rva, std::uint32_t(desc_bytes)};
}

}  // namespace

Bytes synthesize_minimal(const SynthSpec& spec) {
    if (spec.n_sections < 1 || spec.n_sections > 16)
        throw PlanError(PlanError::Kind::SpecInfeasible, "n_sections out of [1,16]");
    if (!is_pow2(spec.file_alignment) || spec.file_alignment < 512 || spec.file_alignment > 65536)
        throw PlanError(PlanError::Kind::SpecInfeasible, "invalid file_alignment");
    if (spec.section_alignment < spec.file_alignment)
        throw PlanError(PlanError::Kind::SpecInfeasible, "section_alignment < file_alignment");

    std::mt19937_64 rng(spec.content_seed);
    auto rnd = [&](std::uint64_t lo, std::uint64_t hi) {
        return lo + rng() % (hi - lo + 1);
    };

    PeFile pe;
    pe.dos.e_lfanew = 0x40 + 16 * std::uint32_t(rnd(0, 3));
    for (auto& c : pe.dos.stub) c = std::uint8_t(rng());
    pe.dos.extended_stub.resize(pe.dos.e_lfanew - 0x40);
    for (auto& c : pe.dos.extended_stub) c = std::uint8_t(rng());

    bool wide = spec.pe32_plus;
    pe.coff.machine = wide ? 0x8664 : 0x014c;
    pe.coff.number_of_sections = std::uint16_t(spec.n_sections);
    pe.coff.time_date_stamp = std::uint32_t(rnd(0x40000000, 0x60000000));
    pe.coff.size_of_optional_header = wide ? 240 : 224;
    pe.coff.characteristics = wide ? 0x0022 : 0x0102;  // EXECUTABLE_IMAGE (+32-bit for PE32)

    auto& opt = pe.optional;
    opt.raw.assign(pe.coff.size_of_optional_header, 0);
    write_u16(opt.raw, 0, wide ? kMagicPe32Plus : kMagicPe32);
    opt.raw[2] = 14;  // linker version
    if (wide)
        write_u64(opt.raw, 24, 0x140000000ull);
    else
        write_u32(opt.raw, 28, 0x00400000u);
    write_u32(opt.raw, 32, spec.section_alignment);
    write_u32(opt.raw, 36, spec.file_alignment);
    write_u16(opt.raw, 40, 6);   // major OS version
    write_u16(opt.raw, 48, 6);   // major subsystem version
    write_u16(opt.raw, 68, 3);   // console subsystem
    write_u32(opt.raw, wide ? 108 : 92, 16);  // data directory count

    std::uint64_t table_end =
        pe.dos.e_lfanew + 24ull + pe.coff.size_of_optional_header + 40ull * spec.n_sections;
    // keep spare table room so a section entry can be injected without shifting
    std::uint32_t soh = std::uint32_t(align_up(table_end + 80, spec.file_alignment));
    opt.set_size_of_headers(soh);

    static const char* names[] = {".text", ".data", ".rdata", ".rsrc", ".reloc",
                                  ".tls",  ".bss",  ".s7",    ".s8",   ".s9",
                                  ".s10",  ".s11",  ".s12",   ".s13",  ".s14", ".s15"};
    std::uint32_t va = std::uint32_t(align_up(soh, spec.section_alignment)) +
                       spec.va_headroom * spec.section_alignment;
    std::uint32_t ptr = soh;
    pe.gaps.emplace(table_end, Bytes(soh - table_end, 0));
    for (int i = 0; i < spec.n_sections; ++i) {
        Section s;
        std::string nm = names[i];
        std::copy(nm.begin(), nm.end(), s.entry.name.begin());
        std::uint32_t raw = spec.file_alignment * std::uint32_t(rnd(1, 4));
        std::uint32_t vsz;
        switch (rnd(0, 2)) {
            case 0: vsz = raw; break;
            case 1: vsz = raw - std::uint32_t(rnd(1, raw / 2));  break;  // slack
            default: vsz = raw + std::uint32_t(rnd(1, 256)); break;      // zero-extended tail
        }
        if (i == 0) vsz = std::max(vsz, raw);  // first section fully mapped (markers, imports)
        s.entry.virtual_size = vsz;
        s.entry.virtual_address = va;
        s.entry.size_of_raw_data = raw;
        s.entry.pointer_to_raw_data = ptr;
        s.entry.characteristics = i == 0 ? 0x60000020u : 0x40000040u;
        s.content.resize(raw);
        for (auto& c : s.content) c = std::uint8_t(rng());
        va = std::uint32_t(align_up(va + vsz, spec.section_alignment));
        ptr += raw;
        if (rnd(0, 3) == 0) {  // occasional file gap between raw ranges
            Bytes gap(spec.file_alignment, 0);
            for (auto& c : gap) c = std::uint8_t(rng());
            pe.gaps.emplace(ptr, std::move(gap));
            ptr += spec.file_alignment;
        }
        pe.sections.push_back(std::move(s));
    }
    opt.set_size_of_image(va);

    auto& first = pe.sections[0];
    // [0, 64) is reserved for corpus class markers; zero it out
    std::fill(first.content.begin(), first.content.begin() + 64, 0);
    std::uint32_t entry_off = std::uint32_t(rnd(64, first.entry.virtual_size - 1));
    opt.set_address_of_entry_point(first.entry.virtual_address + entry_off);

    if (spec.with_imports) {
        std::uint32_t block_off = 128;
        ImportBlock blk = build_synth_imports(first.entry.virtual_address + block_off, wide);
        if (block_off + blk.data.size() > first.content.size())
            throw PlanError(PlanError::Kind::SpecInfeasible, "first section too small for imports");
        std::copy(blk.data.begin(), blk.data.end(), first.content.begin() + block_off);
        opt.set_data_directory(1, blk.dir_rva, blk.dir_size);
    }

    pe.overlay.resize(spec.overlay_len);
    for (auto& c : pe.overlay) c = std::uint8_t(rng());
    pe.raw_length = ptr + pe.overlay.size();
    return serialize(pe);
}

std::vector<SlackRegion> compute_slack_regions(const PeFile& pe) {
    std::vector<SlackRegion> out;
    std::uint64_t table_end = pe.header_struct_end();
    std::uint64_t first_ptr = pe.overlay_offset();
    for (const auto& s : pe.sections)
        if (s.entry.size_of_raw_data != 0)
            first_ptr = std::min(first_ptr, std::uint64_t(s.entry.pointer_to_raw_data));
    if (first_ptr > table_end) out.push_back({table_end, first_ptr - table_end});
    for (const auto& s : pe.sections) {
        const auto& e = s.entry;
        if (e.size_of_raw_data != 0 && e.virtual_size < e.size_of_raw_data)
            out.push_back({std::uint64_t(e.pointer_to_raw_data) + e.virtual_size,
                           std::uint64_t(e.size_of_raw_data) - e.virtual_size});
    }
    std::sort(out.begin(), out.end(),
              [](const SlackRegion& a, const SlackRegion& b) { return a.offset < b.offset; });
    return out;
}

}  // namespace pevade::pe
