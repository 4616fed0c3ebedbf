#include "pevade/oracle.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace pevade::oracle {

MappedImage map_image(const Bytes& file, std::uint64_t image_cap) {
    pe::PeFile p = pe::parse(file);
    std::uint64_t size = p.optional.size_of_image();
    if (size > image_cap) throw ImageTooLarge("size_of_image exceeds the configured cap");

    MappedImage m;
    m.image.assign(size, 0);
    m.provenance.assign(size, -1);

    std::uint64_t hdr = std::min<std::uint64_t>(p.optional.size_of_headers(), std::min<std::uint64_t>(size, file.size()));
    for (std::uint64_t i = 0; i < hdr; ++i) {
        m.image[i] = file[i];
        m.provenance[i] = std::int64_t(i);
    }
    for (const auto& s : p.sections) {
        const auto& e = s.entry;
        std::uint64_t copy = std::min<std::uint64_t>(e.virtual_size, s.content.size());
        for (std::uint64_t i = 0; i < e.virtual_size && e.virtual_address + i < size; ++i) {
            if (i < copy) {
                m.image[e.virtual_address + i] = s.content[i];
                m.provenance[e.virtual_address + i] = std::int64_t(e.pointer_to_raw_data) + std::int64_t(i);
            } else {
                m.image[e.virtual_address + i] = 0;
                m.provenance[e.virtual_address + i] = -1;
            }
        }
    }
    return m;
}

FunctionalDigest functional_digest(const Bytes& file) {
    pe::PeFile p = pe::parse(file);
    MappedImage m = map_image(file);

    FunctionalDigest d;
    d.entry_rva = p.optional.address_of_entry_point();
    d.machine = p.coff.machine;
    d.subsystem = p.optional.subsystem();
    for (const auto& s : p.sections) {
        const auto& e = s.entry;
        std::uint64_t end = std::min<std::uint64_t>(std::uint64_t(e.virtual_address) + e.virtual_size,
                                                    m.image.size());
        std::uint64_t len = end > e.virtual_address ? end - e.virtual_address : 0;
        d.section_digests.push_back(
            {e.virtual_address, e.virtual_size, fnv1a(m.image.data() + e.virtual_address, len)});
    }
    for (const auto& desc : p.imports.descriptors) {
        std::string dll = desc.dll;
        std::transform(dll.begin(), dll.end(), dll.begin(),
                       [](unsigned char c) { return char(std::tolower(c)); });
        for (const auto& fn : desc.functions) d.import_set.emplace(dll, fn);
    }
    return d;
}

EquivalenceReport check_equivalence(const Bytes& original, const Bytes& manipulated,
                                    bool api_injection_applied) {
    FunctionalDigest a = functional_digest(original);
    FunctionalDigest b = functional_digest(manipulated);
    EquivalenceReport rep;
    auto note = [&](ViolationCategory cat, const std::string& detail) {
        rep.violations.push_back({cat, detail});
    };

    if (a.entry_rva != b.entry_rva) note(ViolationCategory::EntryPoint, "entry RVA changed");
    if (a.machine != b.machine) note(ViolationCategory::MachineMismatch, "machine changed");
    if (a.subsystem != b.subsystem) note(ViolationCategory::MachineMismatch, "subsystem changed");

    for (const auto& sd : a.section_digests) {
        auto it = std::find_if(b.section_digests.begin(), b.section_digests.end(),
                               [&](const SectionDigest& x) { return x.virtual_address == sd.virtual_address; });
        std::ostringstream os;
        os << "section at RVA 0x" << std::hex << sd.virtual_address;
        if (it == b.section_digests.end()) {
            note(ViolationCategory::SectionContent, os.str() + " missing");
        } else if (!(*it == sd)) {
            note(ViolationCategory::SectionContent, os.str() + " mapped content differs");
        }
    }

    if (!std::includes(b.import_set.begin(), b.import_set.end(),
                       a.import_set.begin(), a.import_set.end())) {
        note(ViolationCategory::ImportShrunk, "original import set not preserved");
    } else if (!api_injection_applied && b.import_set != a.import_set) {
        note(ViolationCategory::ImportShrunk, "import set changed without API injection");
    }
    return rep;
}

}  // namespace pevade::oracle
