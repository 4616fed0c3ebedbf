#include "pevade/budget.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace pevade::budget {

EditCost edit_cost(const manip::EditablePlan& plan, const Bytes& delta, const Bytes& original) {
    if (delta.size() != plan.editable_length())
        throw PlanError(PlanError::Kind::LengthMismatch,
                        "perturbation length disagrees with editable region");
    EditCost c;
    c.inserted = plan.structural_insertions;
    c.substituted = plan.structural_substitutions;
    std::size_t cursor = 0;
    for (const auto& r : plan.editable) {
        for (std::uint64_t i = 0; i < r.length; ++i, ++cursor) {
            std::uint64_t out_off = r.offset + i;
            if (plan.is_inserted(out_off)) continue;
            if (delta[cursor] != original[plan.to_original(out_off)]) ++c.substituted;
        }
    }
    return c;
}

std::uint64_t levenshtein(const Bytes& a, const Bytes& b) {
    if (std::uint64_t(a.size()) * std::uint64_t(b.size()) > 10'000'000ull)
        throw TooLarge("input too large for the DP oracle");
    std::vector<std::uint64_t> prev(b.size() + 1), row(b.size() + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::uint64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            row[j] = std::min({prev[j] + 1, row[j - 1] + 1, sub});
        }
        std::swap(prev, row);
    }
    return prev[b.size()];
}

}  // namespace pevade::budget
