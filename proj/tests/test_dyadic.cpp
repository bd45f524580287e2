#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <vector>

#include "haarfact/dyadic.hpp"
#include "haarfact/rng.hpp"

using namespace haarfact;

namespace {

// independent oracle: rational endpoints of a genuine interval
struct Span {
    Rational a, b;
};

Span span_of(DyadicInterval I) {
    REQUIRE(I.code >= 2);
    Rational w = pow2(-I.level());
    return {Rational(I.pos()) * w, Rational(I.pos() + 1) * w};
}

}  // namespace

TEST_CASE("code layout matches breadth-first enumeration") {
    // enumerate root, then levels 0,1,... left to right; codes must be 1,2,3,...
    uint32_t expected = 1;
    CHECK(DyadicInterval::root().code == expected++);
    for (int level = 0; level <= 11; ++level) {
        for (uint32_t pos = 0; pos < (1u << level); ++pos) {
            DyadicInterval I = DyadicInterval::from_level_pos(level, pos);
            CHECK(I.code == expected);
            CHECK(I.level() == level);
            CHECK(I.pos() == pos);
            ++expected;
        }
    }
    CHECK(DyadicInterval::whole().code == 2);
    CHECK(DyadicInterval::from_level_pos(1, 1).code == 4);  // [1/2, 1)
    auto [lo, hi] = level_code_range(3);
    CHECK(lo == 9);
    CHECK(hi == 16);
}

TEST_CASE("children, parent, measures") {
    for (uint32_t c = 2; c < (1u << 12); ++c) {
        DyadicInterval I{c};
        CHECK(I.left().parent() == I);
        CHECK(I.right().parent() == I);
        CHECK(I.left().code + 1 == I.right().code);
    }
    CHECK(DyadicInterval::whole().parent() == DyadicInterval::root());
    CHECK(DyadicInterval::root().measure() == 1);
    CHECK(DyadicInterval::root().child(1) == DyadicInterval::whole());
    CHECK(DyadicInterval::root().child(-1) == DyadicInterval::whole());

    // spans: children split the parent interval at its midpoint
    for (uint32_t c = 2; c < (1u << 8); ++c) {
        DyadicInterval I{c};
        Span s = span_of(I);
        Rational mid = (s.a + s.b) / 2;
        CHECK(span_of(I.left()).a == s.a);
        CHECK(span_of(I.left()).b == mid);
        CHECK(span_of(I.right()).a == mid);
        CHECK(span_of(I.right()).b == s.b);
        CHECK(I.measure() == s.b - s.a);
    }
}

TEST_CASE("tree descendance equals span inclusion for genuine intervals") {
    const int maxlevel = 5;
    std::vector<DyadicInterval> all;
    for (uint32_t c = 2; c <= (1u << (maxlevel + 1)); ++c) all.push_back({c});
    for (auto I : all) {
        for (auto J : all) {
            Span si = span_of(I), sj = span_of(J);
            bool span_inside = sj.a <= si.a && si.b <= sj.b;
            CHECK(I.tree_descendant_of(J) == span_inside);
        }
        CHECK(I.tree_descendant_of(DyadicInterval::root()));
        CHECK_FALSE(DyadicInterval::root().tree_descendant_of(I));
    }
    CHECK(DyadicInterval::root().tree_descendant_of(DyadicInterval::root()));
}

TEST_CASE("leaf ranges") {
    const int n = 7;
    for (uint32_t c = 1; c <= (1u << n); ++c) {
        DyadicInterval I{c};
        auto [first, last] = I.leaf_range(n);
        CHECK(Rational(last - first) * pow2(-n) == I.measure());
        // every leaf in range is a tree descendant
        DyadicInterval leaf_lo = DyadicInterval::from_level_pos(n, first);
        DyadicInterval leaf_hi = DyadicInterval::from_level_pos(n, last - 1);
        CHECK(leaf_lo.tree_descendant_of(I));
        CHECK(leaf_hi.tree_descendant_of(I));
        if (first > 0) CHECK_FALSE(DyadicInterval::from_level_pos(n, first - 1).tree_descendant_of(I));
    }
}

TEST_CASE("chains") {
    Chain to_whole = chain_to(DyadicInterval::whole());
    REQUIRE(to_whole.codes == std::vector<uint32_t>{1, 2});
    REQUIRE(to_whole.signs == std::vector<int8_t>{1});

    Chain to_root = chain_to(DyadicInterval::root());
    REQUIRE(to_root.codes == std::vector<uint32_t>{1});
    CHECK(to_root.signs.empty());

    Chain to_rhalf = chain_to(DyadicInterval{4});
    REQUIRE(to_rhalf.codes == std::vector<uint32_t>{1, 2, 4});
    REQUIRE(to_rhalf.signs == std::vector<int8_t>{1, -1});

    // prefix closure: dropping the last element gives the parent's chain
    for (uint32_t c = 3; c < (1u << 10); ++c) {
        Chain ch = chain_to(DyadicInterval{c});
        Chain par = chain_to(DyadicInterval{c}.parent());
        REQUIRE(ch.codes.size() == par.codes.size() + 1);
        CHECK(std::equal(par.codes.begin(), par.codes.end(), ch.codes.begin()));
        CHECK(std::equal(par.signs.begin(), par.signs.end(), ch.signs.begin()));
        // sign consistency: signs[k] selects codes[k+1] from codes[k]
        for (size_t k = 0; k + 1 < ch.codes.size(); ++k) {
            CHECK(DyadicInterval{ch.codes[k]}.child(ch.signs[k]).code == ch.codes[k + 1]);
        }
    }
}

TEST_CASE("branch ring decomposition, worked example") {
    // theta = (+1, +1): rings [1/2,1) and [1/4,1/2), residual [0,1/4)
    Branch b{2, 0b11};
    CHECK(b.theta(1) == 1);
    CHECK(b.theta(2) == 1);
    CHECK(b.ring(1) == DyadicInterval::from_level_pos(1, 1));
    CHECK(b.ring(2) == DyadicInterval::from_level_pos(2, 1));
    CHECK(b.residual() == DyadicInterval::from_level_pos(2, 0));
    auto nodes = b.nodes();
    REQUIRE(nodes.size() == 4);
    CHECK(nodes[0] == DyadicInterval::root());
    CHECK(nodes[1] == DyadicInterval::whole());
    CHECK(nodes[2] == DyadicInterval::from_level_pos(1, 0));
    CHECK(nodes[3] == DyadicInterval::from_level_pos(2, 0));
}

TEST_CASE("branch rings partition the unit interval") {
    for (int depth = 1; depth <= 9; ++depth) {
        for (uint64_t mask = 0; mask < (1ull << depth); ++mask) {
            Branch b{depth, mask};
            Rational total = b.residual().measure();
            std::vector<std::pair<uint32_t, uint32_t>> ranges;
            ranges.push_back(b.residual().leaf_range(depth));
            for (int k = 1; k <= depth; ++k) {
                DyadicInterval Bk = b.ring(k);
                CHECK(Bk.measure() == pow2(-k));
                total += Bk.measure();
                ranges.push_back(Bk.leaf_range(depth));
            }
            CHECK(total == 1);
            // disjoint and covering: the leaf ranges tile [0, 2^depth)
            std::sort(ranges.begin(), ranges.end());
            uint32_t cursor = 0;
            for (auto [lo, hi] : ranges) {
                CHECK(lo == cursor);
                cursor = hi;
            }
            CHECK(cursor == (1u << depth));
            // consistency between nodes and theta
            auto nodes = b.nodes();
            for (int k = 1; k <= depth; ++k) {
                CHECK(nodes[k + 1] == nodes[k].child(b.theta(k)));
                CHECK(b.ring(k) == nodes[k].child(-b.theta(k)));
            }
        }
    }
}

TEST_CASE("branch to leaf bijection") {
    for (int depth = 1; depth <= 10; ++depth) {
        std::vector<bool> seen(1u << depth, false);
        for (uint64_t mask = 0; mask < (1ull << depth); ++mask) {
            Branch b{depth, mask};
            uint32_t leaf = b.leaf_index();
            REQUIRE(leaf < (1u << depth));
            CHECK_FALSE(seen[leaf]);
            seen[leaf] = true;
            CHECK(Branch::from_leaf(depth, leaf) == b);
        }
    }
}

TEST_CASE("branch set measure") {
    Rng rng(20240903);
    for (int rep = 0; rep < 50; ++rep) {
        int depth = 1 + static_cast<int>(rng.below(10));
        BranchSet s{depth, {}};
        uint64_t count = 1 + rng.below(1ull << depth);
        for (uint64_t i = 0; i < count; ++i) s.masks.push_back(rng.below(1ull << depth));
        s.normalize();
        CHECK(s.measure() == Rational(s.masks.size()) * pow2(-depth));
        CHECK(s.measure() <= 1);
    }
    CHECK(BranchSet::all(6).measure() == 1);
}

TEST_CASE("stopping family from branches is upward closed") {
    Rng rng(77);
    for (int rep = 0; rep < 30; ++rep) {
        int depth = 2 + static_cast<int>(rng.below(8));
        BranchSet s{depth, {}};
        uint64_t count = 1 + rng.below(1ull << (depth - 1));
        for (uint64_t i = 0; i < count; ++i) s.masks.push_back(rng.below(1ull << depth));
        s.normalize();
        StoppingFamily f = StoppingFamily::from_branches(s);
        CHECK(f.is_upward_closed());
        CHECK(f.contains(1));
        CHECK(f.contains(2));
        for (uint64_t m : s.masks) {
            for (auto I : Branch{depth, m}.nodes()) {
                if (I.level() < depth) CHECK(f.contains(I.code));
            }
        }
    }
    // a branch family misses intervals off its branches
    BranchSet one{3, {0b111}};
    StoppingFamily f = StoppingFamily::from_branches(one);
    CHECK(f.contains(DyadicInterval::from_level_pos(2, 0).code));
    CHECK_FALSE(f.contains(DyadicInterval::from_level_pos(2, 3).code));
}
