#include "pevade/manipulations.hpp"

#include <algorithm>
#include <map>

namespace pevade::manip {

namespace {

using PK = PlanError::Kind;

int canonical_rank(Kind k) {
    switch (k) {
        case Kind::Extend: return 0;
        case Kind::Shift: return 1;
        case Kind::SectionInjection: return 2;
        case Kind::ApiInjection: return 3;
        case Kind::Padding: return 5;
        default: return 4;  // PartialDos, FullDos, HeaderFields, SlackSpace
    }
}

// Incrementally transforms a PeFile while tracking the editable and inserted
// regions in the coordinates of the final output file.
struct Composer {
    pe::PeFile cur;
    std::uint64_t original_length;
    std::vector<Region> editable;
    std::vector<Region> inserted;

    explicit Composer(const pe::PeFile& x) : cur(x), original_length(x.raw_length) {}

    std::uint32_t file_alignment() const { return cur.optional.file_alignment(); }

    void rebase(std::uint64_t at, std::uint64_t len) {
        for (auto* v : {&editable, &inserted})
            for (auto& r : *v)
                if (r.offset >= at) r.offset += len;
    }

    void record_insert(std::uint64_t at, std::uint64_t len) {
        rebase(at, len);
        inserted.push_back({at, len});
    }

    void subtract_editable(std::uint64_t off, std::uint64_t len) {
        std::vector<Region> out;
        for (const auto& r : editable) {
            std::uint64_t lo = std::max(r.offset, off);
            std::uint64_t hi = std::min(r.end(), off + len);
            if (lo >= hi) {
                out.push_back(r);
                continue;
            }
            if (r.offset < lo) out.push_back({r.offset, lo - r.offset});
            if (hi < r.end()) out.push_back({hi, r.end() - hi});
        }
        editable = std::move(out);
    }

    // Removes [off, off+len) from the gap map; every byte must be gap-owned.
    void consume_gap_bytes(std::uint64_t off, std::uint64_t len) {
        std::uint64_t need_lo = off, need_hi = off + len;
        std::map<std::uint64_t, Bytes> next;
        std::uint64_t covered = 0;
        for (auto& [go, content] : cur.gaps) {
            std::uint64_t ghi = go + content.size();
            std::uint64_t lo = std::max(go, need_lo);
            std::uint64_t hi = std::min(ghi, need_hi);
            if (lo >= hi) {
                next.emplace(go, std::move(content));
                continue;
            }
            covered += hi - lo;
            if (go < lo) next.emplace(go, Bytes(content.begin(), content.begin() + (lo - go)));
            if (hi < ghi) next.emplace(hi, Bytes(content.begin() + (hi - go), content.end()));
        }
        if (covered != len)
            throw PlanError(PK::NoHeaderRoom, "no spare header bytes for a new section entry");
        cur.gaps = std::move(next);
    }

    void split_gap_at(std::uint64_t at) {
        for (auto it = cur.gaps.begin(); it != cur.gaps.end(); ++it) {
            std::uint64_t go = it->first, ghi = go + it->second.size();
            if (go < at && at < ghi) {
                Bytes head(it->second.begin(), it->second.begin() + (at - go));
                Bytes tail(it->second.begin() + (at - go), it->second.end());
                cur.gaps.erase(it);
                cur.gaps.emplace(go, std::move(head));
                cur.gaps.emplace(at, std::move(tail));
                return;
            }
        }
    }

    void shift_file_tail(std::uint64_t at, std::uint64_t by) {
        split_gap_at(at);
        std::map<std::uint64_t, Bytes> next;
        for (auto& [go, content] : cur.gaps)
            next.emplace(go >= at ? go + by : go, std::move(content));
        cur.gaps = std::move(next);
        for (auto& s : cur.sections)
            if (s.entry.pointer_to_raw_data >= at && s.entry.pointer_to_raw_data != 0)
                s.entry.pointer_to_raw_data += std::uint32_t(by);
        cur.raw_length += by;
    }

    void do_extend(std::uint64_t k) {
        std::uint64_t old_peo = cur.dos.e_lfanew;
        cur.dos.extended_stub.insert(cur.dos.extended_stub.end(), k, 0);
        cur.dos.e_lfanew += std::uint32_t(k);
        cur.optional.set_size_of_headers(cur.optional.size_of_headers() + std::uint32_t(k));
        shift_file_tail(old_peo, k);
        record_insert(old_peo, k);
        editable.push_back({old_peo, k});
    }

    void do_shift(std::uint64_t k) {
        std::uint64_t soh = cur.optional.size_of_headers();
        shift_file_tail(soh, k);
        cur.gaps.emplace(soh, Bytes(k, 0));
        record_insert(soh, k);
        editable.push_back({soh, k});
    }

    // Appends a section entry plus raw content placed right before the overlay.
    // Returns the content region (length raw_size) in output coordinates.
    Region do_inject_section(const std::array<std::uint8_t, 8>& name, Bytes content,
                             std::uint32_t raw_size) {
        std::uint32_t fa = file_alignment();
        std::uint32_t sa = cur.optional.section_alignment();
        std::uint64_t table_end = cur.header_struct_end();
        std::uint64_t soh = cur.optional.size_of_headers();
        std::uint64_t limit = soh;
        for (const auto& s : cur.sections)
            if (s.entry.size_of_raw_data != 0)
                limit = std::min(limit, std::uint64_t(s.entry.pointer_to_raw_data));
        if (table_end + 40 > limit) {
            // grow size_of_headers into an adjacent free gap (a preceding Shift)
            std::uint64_t grow = align_up(table_end + 40, fa) - soh;
            auto it = cur.gaps.find(soh);
            if (it == cur.gaps.end() || it->second.size() < grow)
                throw PlanError(PK::NoHeaderRoom,
                                "no room for a section entry; compose with Shift first");
            cur.optional.set_size_of_headers(std::uint32_t(soh + grow));
        }
        consume_gap_bytes(table_end, 40);
        subtract_editable(table_end, 40);

        std::uint64_t ov = cur.overlay_offset();
        Region content_region{0, 0};
        pe::SectionEntry e;
        e.name = name;
        e.characteristics = kInjectedSectionCharacteristics;
        std::uint64_t max_va_end = 0;
        for (const auto& s : cur.sections)
            max_va_end = std::max(max_va_end,
                                  std::uint64_t(s.entry.virtual_address) + s.entry.virtual_size);
        e.virtual_address = std::uint32_t(align_up(std::max<std::uint64_t>(max_va_end, sa), sa));
        e.virtual_size = raw_size;
        if (raw_size != 0) {
            std::uint64_t pad = align_up(ov, fa) - ov;
            if (pad != 0) {
                cur.gaps.emplace(ov, Bytes(pad, 0));
                cur.raw_length += pad;
                record_insert(ov, pad);
                ov += pad;
            }
            e.pointer_to_raw_data = std::uint32_t(ov);
            e.size_of_raw_data = raw_size;
            content.resize(raw_size, 0);
            cur.raw_length += raw_size;
            record_insert(ov, raw_size);
            content_region = {ov, raw_size};
        }
        cur.sections.push_back({e, std::move(content)});
        cur.coff.number_of_sections += 1;
        std::uint64_t extent = std::max(max_va_end, std::uint64_t(e.virtual_address) + e.virtual_size);
        cur.optional.set_size_of_image(
            std::uint32_t(std::max<std::uint64_t>(cur.optional.size_of_image(), align_up(extent, sa))));
        return content_region;
    }

    void do_api_injection(const std::vector<ApiEntry>& entries);

    void do_padding(std::uint64_t s) {
        std::uint64_t at = cur.raw_length;
        cur.overlay.insert(cur.overlay.end(), s, 0);
        cur.raw_length += s;
        record_insert(at, s);
        editable.push_back({at, s});
    }

    void do_partial_dos() { editable.push_back({0x02, 58}); }

    void do_full_dos() {
        editable.push_back({0x02, 58});
        if (cur.dos.e_lfanew > 0x40) editable.push_back({0x40, cur.dos.e_lfanew - 0x40ull});
    }

    void do_header_fields() {
        std::uint64_t peo = cur.dos.e_lfanew;
        std::uint64_t opt = peo + 24;
        editable.push_back({peo + 8, 12});  // timestamp, symbol table pointer, symbol count
        editable.push_back({opt + 2, 2});   // linker version
        editable.push_back({opt + 44, 4});  // image version
        editable.push_back({opt + 64, 4});  // checksum
    }

    void do_slack_space() {
        auto regions = pe::compute_slack_regions(cur);
        if (regions.empty()) throw PlanError(PK::NoSlack, "file has no slack space");
        for (const auto& r : regions) editable.push_back({r.offset, r.length});
    }
};

// Builds the raw bytes of a rebuilt import directory hosted at base_rva:
// original descriptors verbatim, then descriptors for the new entries.
Bytes build_import_blob(const pe::PeFile& pe_in, std::uint32_t base_rva,
                        const std::vector<ApiEntry>& entries, std::uint32_t* dir_size) {
    bool wide = pe_in.optional.is_pe32_plus();
    std::size_t tw = wide ? 8 : 4;

    std::vector<std::pair<std::string, std::vector<std::string>>> dlls;
    for (const auto& e : entries) {
        auto it = std::find_if(dlls.begin(), dlls.end(),
                               [&](const auto& d) { return d.first == e.dll; });
        if (it == dlls.end())
            dlls.push_back({e.dll, {e.function}});
        else
            it->second.push_back(e.function);
    }

    std::size_t n_orig = pe_in.imports.descriptors.size();
    std::size_t desc_bytes = 20 * (n_orig + dlls.size() + 1);
    *dir_size = std::uint32_t(desc_bytes);
    Bytes blob(desc_bytes, 0);
    for (std::size_t i = 0; i < n_orig; ++i)
        std::copy(pe_in.imports.descriptors[i].raw.begin(), pe_in.imports.descriptors[i].raw.end(),
                  blob.begin() + 20 * i);

    std::size_t thunk_bytes = 0;
    for (const auto& [dll, fns] : dlls) thunk_bytes += 2 * tw * (fns.size() + 1);
    std::size_t thunk_base = blob.size();
    blob.resize(blob.size() + thunk_bytes);

    auto put_name = [&](const std::string& s, bool hint) {
        std::size_t at = blob.size();
        std::size_t n = s.size() + 1 + (hint ? 2 : 0);
        blob.resize(blob.size() + n + (n % 2));
        std::copy(s.begin(), s.end(), blob.begin() + at + (hint ? 2 : 0));
        return std::uint32_t(at);
    };

    std::size_t thunk_cursor = thunk_base;
    for (std::size_t i = 0; i < dlls.size(); ++i) {
        const auto& [dll, fns] = dlls[i];
        std::size_t ilt = thunk_cursor;
        std::size_t iat = ilt + tw * (fns.size() + 1);
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
        std::size_t d = 20 * (n_orig + i);
        write_u32(blob, d + 0, base_rva + std::uint32_t(ilt));
        write_u32(blob, d + 12, base_rva + put_name(dll, false));
        write_u32(blob, d + 16, base_rva + std::uint32_t(iat));
    }
    return blob;
}

void Composer::do_api_injection(const std::vector<ApiEntry>& entries) {
    if (cur.optional.data_directory_count() < 2)
        throw PlanError(PK::SpecInfeasible, "optional header has no import data directory slot");
    std::uint32_t sa = cur.optional.section_alignment();
    std::uint64_t max_va_end = 0;
    for (const auto& s : cur.sections)
        max_va_end =
            std::max(max_va_end, std::uint64_t(s.entry.virtual_address) + s.entry.virtual_size);
    std::uint32_t va = std::uint32_t(align_up(std::max<std::uint64_t>(max_va_end, sa), sa));

    std::uint32_t dir_size = 0;
    Bytes blob = build_import_blob(cur, va, entries, &dir_size);
    std::uint32_t raw = std::uint32_t(align_up(blob.size(), file_alignment()));
    std::array<std::uint8_t, 8> name{'.', 'i', 'd', 't', 'a', 0, 0, 0};
    do_inject_section(name, std::move(blob), raw);
    // the injected content carries the directory, not the optimizer payload
    if (!inserted.empty()) subtract_editable(inserted.back().offset, inserted.back().length);
    cur.optional.set_data_directory(1, va, dir_size);
    cur.imports = {};  // force re-decode on parse of the output
}

EditablePlan finalize(Composer&& c, const Bytes& original) {
    EditablePlan p;
    p.transformed = std::move(c.cur);
    p.transformed.imports = {};
    p.base_output = pe::serialize(p.transformed);
    p.original_length = c.original_length;
    p.inserted = std::move(c.inserted);
    std::sort(p.inserted.begin(), p.inserted.end(),
              [](const Region& a, const Region& b) { return a.offset < b.offset; });
    p.structural_insertions = 0;
    for (const auto& r : p.inserted) p.structural_insertions += r.length;
    if (p.base_output.size() != p.original_length + p.structural_insertions)
        throw InvariantViolation("insertion accounting disagrees with output length");

    // merge overlapping/adjacent editable regions
    std::sort(c.editable.begin(), c.editable.end(),
              [](const Region& a, const Region& b) { return a.offset < b.offset; });
    for (const auto& r : c.editable) {
        if (r.length == 0) continue;
        if (!p.editable.empty() && r.offset <= p.editable.back().end()) {
            auto& last = p.editable.back();
            last.length = std::max(last.end(), r.end()) - last.offset;
        } else {
            p.editable.push_back(r);
        }
    }

    // non-editable positions the structural rewrite already changed
    std::size_t ed = 0, ins = 0;
    for (std::uint64_t i = 0; i < p.base_output.size(); ++i) {
        while (ed < p.editable.size() && p.editable[ed].end() <= i) ++ed;
        if (ed < p.editable.size() && i >= p.editable[ed].offset) continue;
        while (ins < p.inserted.size() && p.inserted[ins].end() <= i) ++ins;
        if (ins < p.inserted.size() && i >= p.inserted[ins].offset) continue;
        if (p.base_output[i] != original[p.to_original(i)]) ++p.structural_substitutions;
    }
    return p;
}

}  // namespace

Manipulation Manipulation::section_injection(const std::string& name, std::uint64_t size) {
    Manipulation m{Kind::SectionInjection, size};
    for (std::size_t i = 0; i < 8 && i < name.size(); ++i)
        m.section_name[i] = std::uint8_t(name[i]);
    return m;
}

Manipulation Manipulation::api_injection(std::vector<ApiEntry> entries) {
    Manipulation m{Kind::ApiInjection};
    m.api_entries = std::move(entries);
    return m;
}

std::uint64_t EditablePlan::editable_length() const {
    std::uint64_t n = 0;
    for (const auto& r : editable) n += r.length;
    return n;
}

bool EditablePlan::is_inserted(std::uint64_t out_off) const {
    for (const auto& r : inserted) {
        if (out_off < r.offset) return false;
        if (out_off < r.end()) return true;
    }
    return false;
}

std::uint64_t EditablePlan::to_original(std::uint64_t out_off) const {
    std::uint64_t shift = 0;
    for (const auto& r : inserted) {
        if (r.end() <= out_off) shift += r.length;
        else break;
    }
    return out_off - shift;
}

EditablePlan compose(const pe::PeFile& x, const std::vector<Manipulation>& ms) {
    std::uint32_t fa = x.optional.file_alignment();

    std::vector<Manipulation> order = ms;
    std::stable_sort(order.begin(), order.end(), [](const Manipulation& a, const Manipulation& b) {
        return canonical_rank(a.kind) < canonical_rank(b.kind);
    });

    // merge repeats: Shift/Padding amounts add, the region-only kinds dedup
    std::vector<Manipulation> merged;
    bool seen_extend = false, seen_partial = false, seen_full = false, seen_header = false,
         seen_slack = false;
    for (const auto& m : order) {
        switch (m.kind) {
            case Kind::Extend:
                if (seen_extend)
                    throw PlanError(PK::IncompatiblePair, "two Extend manipulations");
                seen_extend = true;
                if (m.amount != 0) merged.push_back(m);
                break;
            case Kind::Shift:
            case Kind::Padding:
                if (!merged.empty() && merged.back().kind == m.kind)
                    merged.back().amount += m.amount;
                else
                    merged.push_back(m);
                break;
            case Kind::PartialDos:
                if (!seen_partial) merged.push_back(m);
                seen_partial = true;
                break;
            case Kind::FullDos:
                if (!seen_full) merged.push_back(m);
                seen_full = true;
                break;
            case Kind::HeaderFields:
                if (!seen_header) merged.push_back(m);
                seen_header = true;
                break;
            case Kind::SlackSpace:
                if (!seen_slack) merged.push_back(m);
                seen_slack = true;
                break;
            default:
                merged.push_back(m);
        }
    }

    Composer c(x);
    Bytes original = pe::serialize(x);
    for (const auto& m : merged) {
        switch (m.kind) {
            case Kind::Extend:
            case Kind::Shift:
                if (m.amount % fa != 0)
                    throw PlanError(PK::BadAlignment, "amount not a multiple of file_alignment");
                if (m.kind == Kind::Extend)
                    c.do_extend(m.amount);
                else if (m.amount != 0)
                    c.do_shift(m.amount);
                break;
            case Kind::SectionInjection: {
                if (m.amount % fa != 0)
                    throw PlanError(PK::BadAlignment, "section size not a multiple of file_alignment");
                Region r = c.do_inject_section(m.section_name, Bytes(), std::uint32_t(m.amount));
                if (r.length != 0) c.editable.push_back(r);
                break;
            }
            case Kind::ApiInjection:
                c.do_api_injection(m.api_entries);
                break;
            case Kind::PartialDos:
                c.do_partial_dos();
                break;
            case Kind::FullDos:
                c.do_full_dos();
                break;
            case Kind::HeaderFields:
                c.do_header_fields();
                break;
            case Kind::SlackSpace:
                c.do_slack_space();
                break;
            case Kind::Padding:
                if (m.amount != 0) c.do_padding(m.amount);
                break;
        }
    }
    return finalize(std::move(c), original);
}

EditablePlan plan(const pe::PeFile& x, const Manipulation& m) { return compose(x, {m}); }

Bytes apply(const EditablePlan& p, const Bytes& delta) {
    if (delta.size() != p.editable_length())
        throw PlanError(PK::LengthMismatch, "perturbation length disagrees with editable region");
    Bytes out = p.base_output;
    std::size_t cursor = 0;
    for (const auto& r : p.editable) {
        std::copy(delta.begin() + cursor, delta.begin() + cursor + r.length, out.begin() + r.offset);
        cursor += r.length;
    }
    return out;
}

Bytes apply(const pe::PeFile& x, const Manipulation& m, const Bytes& delta) {
    return manip::apply(plan(x, m), delta);
}

}  // namespace pevade::manip
