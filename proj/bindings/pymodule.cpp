#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pevade/budget.hpp"
#include "pevade/campaign.hpp"
#include "pevade/manipulations.hpp"
#include "pevade/oracle.hpp"
#include "pevade/pe.hpp"

namespace py = pybind11;
using namespace pevade;

namespace {

Bytes to_bytes(const py::bytes& b) {
    std::string s = b;
    return Bytes(s.begin(), s.end());
}

py::bytes from_bytes(const Bytes& b) {
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

}  // namespace

PYBIND11_MODULE(_pevade, m) {
    m.doc() = "PE manipulation and detector-evasion toolkit";

    py::register_exception<ParseError>(m, "ParseError");
    py::register_exception<PlanError>(m, "PlanError");

    m.def("synthesize", [](int n_sections, std::uint64_t seed, std::uint32_t overlay_len) {
        pe::SynthSpec spec;
        spec.n_sections = n_sections;
        spec.content_seed = seed;
        spec.overlay_len = overlay_len;
        return from_bytes(pe::synthesize_minimal(spec));
    }, py::arg("n_sections") = 2, py::arg("seed") = 0, py::arg("overlay_len") = 0);

    m.def("roundtrip", [](const py::bytes& b) {
        return from_bytes(pe::serialize(pe::parse(to_bytes(b))));
    });

    m.def("section_names", [](const py::bytes& b) {
        std::vector<std::string> names;
        for (const auto& s : pe::parse(to_bytes(b)).sections)
            names.push_back(s.entry.name_str());
        return names;
    });

    m.def("functional_digest", [](const py::bytes& b) {
        auto d = oracle::functional_digest(to_bytes(b));
        py::dict out;
        out["entry_rva"] = d.entry_rva;
        out["machine"] = d.machine;
        out["subsystem"] = d.subsystem;
        py::list imports;
        for (const auto& [dll, fn] : d.import_set) imports.append(py::make_tuple(dll, fn));
        out["imports"] = imports;
        out["n_sections"] = d.section_digests.size();
        return out;
    });

    m.def("check_equivalence", [](const py::bytes& orig, const py::bytes& manipulated,
                                  bool api_injection) {
        auto rep = oracle::check_equivalence(to_bytes(orig), to_bytes(manipulated), api_injection);
        std::vector<std::string> out;
        for (const auto& v : rep.violations) out.push_back(v.detail);
        return out;
    }, py::arg("original"), py::arg("manipulated"), py::arg("api_injection") = false);

    m.def("editable_length", [](const py::bytes& b, const std::string& manips) {
        pe::PeFile p = pe::parse(to_bytes(b));
        auto plan = manip::compose(p, campaign::parse_manipulations(manips));
        return plan.editable_length();
    });

    m.def("apply_manipulations", [](const py::bytes& b, const std::string& manips,
                                    const py::bytes& delta) {
        pe::PeFile p = pe::parse(to_bytes(b));
        auto plan = manip::compose(p, campaign::parse_manipulations(manips));
        return from_bytes(manip::apply(plan, to_bytes(delta)));
    });

    m.def("edit_cost", [](const py::bytes& b, const std::string& manips,
                          const py::bytes& delta) {
        Bytes orig = to_bytes(b);
        pe::PeFile p = pe::parse(orig);
        auto plan = manip::compose(p, campaign::parse_manipulations(manips));
        auto c = budget::edit_cost(plan, to_bytes(delta), orig);
        return py::make_tuple(c.inserted, c.substituted);
    });

    m.def("levenshtein", [](const py::bytes& a, const py::bytes& b) {
        return budget::levenshtein(to_bytes(a), to_bytes(b));
    });

    m.def("score", [](const std::string& model_path, const py::bytes& b) {
        auto d = campaign::load_model(model_path);
        return d->score(to_bytes(b)).malice;
    });
}
