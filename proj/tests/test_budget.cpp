#include <doctest.h>

#include <random>

#include "pevade/budget.hpp"
#include "pevade/manipulations.hpp"
#include "pevade/pe.hpp"

using namespace pevade;
using manip::Manipulation;

namespace {

Bytes str(const char* s) { return Bytes(s, s + std::string(s).size()); }

// reference implementation used to sanity-check the DP
std::uint64_t lev_slow(const Bytes& a, const Bytes& b, std::size_t i, std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    std::uint64_t best = lev_slow(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, lev_slow(a, b, i + 1, j) + 1);
    best = std::min(best, lev_slow(a, b, i, j + 1) + 1);
    return best;
}

}  // namespace

TEST_CASE("levenshtein basics") {
    CHECK(budget::levenshtein(str("abc"), str("abc")) == 0);
    CHECK(budget::levenshtein(str(""), str("abc")) == 3);
    CHECK(budget::levenshtein(str("kitten"), str("sitting")) == 3);
    CHECK(budget::levenshtein(str("kitten"), str("sitting")) ==
          lev_slow(str("kitten"), str("sitting"), 0, 0));
}

TEST_CASE("levenshtein rejects oversized inputs") {
    Bytes big(4000, 'x');
    CHECK_THROWS_AS(budget::levenshtein(big, big), budget::TooLarge);
}

TEST_CASE("levenshtein is a metric on random short strings") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 50; ++t) {
        Bytes a(rng() % 12), b(rng() % 12), c(rng() % 12);
        for (auto& x : a) x = std::uint8_t('a' + rng() % 4);
        for (auto& x : b) x = std::uint8_t('a' + rng() % 4);
        for (auto& x : c) x = std::uint8_t('a' + rng() % 4);
        auto ab = budget::levenshtein(a, b);
        CHECK(ab == budget::levenshtein(b, a));
        CHECK(ab <= budget::levenshtein(a, c) + budget::levenshtein(c, b));
        CHECK((ab == 0) == (a == b));
    }
}

TEST_CASE("shift is pure insertion") {
    Bytes b = pe::synthesize_minimal({1, 512, 4096, 0, 41});
    pe::PeFile p = pe::parse(b);
    auto plan = manip::plan(p, Manipulation::shift(512));
    auto c = budget::edit_cost(plan, Bytes(512, 0x41), b);
    CHECK(c.inserted == 512);
    // pointer fields the rewrite patched are charged as substitutions
    CHECK(c.substituted == plan.structural_substitutions);
    CHECK(budget::levenshtein(b, manip::apply(plan, Bytes(512, 0x41))) <= c.total());
}

TEST_CASE("identity perturbation costs nothing") {
    Bytes b = pe::synthesize_minimal({1, 512, 4096, 0, 43});
    pe::PeFile p = pe::parse(b);
    auto plan = manip::plan(p, Manipulation::partial_dos());
    Bytes delta(b.begin() + 0x02, b.begin() + 0x3c);
    auto c = budget::edit_cost(plan, delta, b);
    CHECK(c.total() == 0);
}

TEST_CASE("partial DOS substitutions count differing bytes and bound the distance") {
    Bytes b = pe::synthesize_minimal({1, 512, 4096, 0, 47});
    pe::PeFile p = pe::parse(b);
    auto plan = manip::plan(p, Manipulation::partial_dos());
    Bytes delta(b.begin() + 0x02, b.begin() + 0x3c);
    for (int i = 0; i < 10; ++i) delta[i * 5] ^= 0xFF;
    auto c = budget::edit_cost(plan, delta, b);
    CHECK(c.total() == 10);
    CHECK(budget::levenshtein(b, manip::apply(plan, delta)) <= 10);
}

TEST_CASE("within_budget boundary") {
    budget::EditCost c{4096, 0};
    CHECK(budget::within_budget(c, 4096));
    CHECK(budget::within_budget({0, 0}, 0));
    CHECK(!budget::within_budget({4096, 1}, 4096));
}

TEST_CASE("upper bound property across manipulations on small files") {
    std::mt19937_64 rng(2024);
    int cases = 0;
    while (cases < 60) {
        Bytes b = pe::synthesize_minimal({1, 512, 4096, std::uint32_t(rng() % 200), rng()});
        if (b.size() > 2048) continue;
        pe::PeFile p = pe::parse(b);
        Manipulation m = Manipulation::partial_dos();
        switch (rng() % 4) {
            case 0: m = Manipulation::partial_dos(); break;
            case 1: m = Manipulation::full_dos(); break;
            case 2: m = Manipulation::shift(512); break;
            case 3: m = Manipulation::padding(64 + rng() % 256); break;
        }
        auto plan = manip::plan(p, m);
        Bytes delta(plan.editable_length());
        for (auto& x : delta) x = std::uint8_t(rng());
        Bytes out = manip::apply(plan, delta);
        auto c = budget::edit_cost(plan, delta, b);
        CHECK(budget::levenshtein(b, out) <= c.total());
        ++cases;
    }
}

TEST_CASE("monotonicity: flipping one more editable byte never lowers the cost") {
    Bytes b = pe::synthesize_minimal({1, 512, 4096, 0, 53});
    pe::PeFile p = pe::parse(b);
    auto plan = manip::plan(p, Manipulation::partial_dos());
    Bytes delta(b.begin() + 0x02, b.begin() + 0x3c);
    std::uint64_t prev = budget::edit_cost(plan, delta, b).total();
    for (std::size_t i = 0; i < delta.size(); i += 7) {
        delta[i] ^= 0x5A;
        std::uint64_t now = budget::edit_cost(plan, delta, b).total();
        CHECK(now >= prev);
        prev = now;
    }
}
