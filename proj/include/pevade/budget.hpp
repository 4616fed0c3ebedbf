#pragma once

#include <cstdint>

#include "pevade/manipulations.hpp"

namespace pevade::budget {

struct EditCost {
    std::uint64_t inserted = 0;
    std::uint64_t substituted = 0;
    std::uint64_t total() const { return inserted + substituted; }
};

// Structural byte-edit accounting for g(delta): inserted bytes plus positions
// whose value differs from the original byte at the aligned position. Exact
// for pure insertions, an upper bound on edit distance otherwise.
EditCost edit_cost(const manip::EditablePlan& plan, const Bytes& delta, const Bytes& original);

struct TooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Brute-force DP edit distance; oracle use only (len(a)*len(b) <= 1e7).
std::uint64_t levenshtein(const Bytes& a, const Bytes& b);

inline bool within_budget(const EditCost& c, std::uint64_t epsilon) { return c.total() <= epsilon; }

}  // namespace pevade::budget
