#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rational.hpp"

namespace haarfact {

inline int ilog2(uint64_t v) {
    assert(v != 0);
    int r = -1;
    while (v) {
        v >>= 1;
        ++r;
    }
    return r;
}

// Dyadic interval addressed by its breadth-first code:
//
//   code 1  -> the root symbol (support [0,1), carries the constant function)
//   code 2  -> [0,1)
//   level j >= 0, position i in [0, 2^j)  ->  code 2^j + i + 1
//
// so the codes of level j are exactly [2^j + 1, 2^(j+1)], children of c are
// 2c-1 (left) and 2c (right), and the parent of c >= 2 is (c-1)/2 + 1.  The
// root's single child is [0,1).  A "grid of depth N" means the 2^N leaves at
// level N; node codes 1..2^N then enumerate the root plus levels 0..N-1.
struct DyadicInterval {
    uint32_t code = 1;

    static DyadicInterval root() { return {1}; }
    static DyadicInterval whole() { return {2}; }

    static DyadicInterval from_level_pos(int level, uint32_t pos) {
        assert(level >= 0 && pos < (1u << level));
        return {(1u << level) + pos + 1};
    }

    bool is_root() const { return code == 1; }

    // -1 for the root symbol, else the dyadic level (whole() has level 0).
    int level() const { return code == 1 ? -1 : ilog2(code - 1); }

    uint32_t pos() const {
        assert(code >= 2);
        return (code - 1) - (1u << level());
    }

    Rational measure() const { return code == 1 ? Rational(1) : pow2(-level()); }

    int log2_measure() const { return code == 1 ? 0 : -level(); }

    DyadicInterval left() const {
        assert(code >= 2);
        return {2 * code - 1};
    }

    DyadicInterval right() const {
        assert(code >= 2);
        return {2 * code};
    }

    // child in the sign convention: +1 = left, -1 = right; the root's single
    // child is [0,1) for either sign.
    DyadicInterval child(int sign) const {
        if (code == 1) return whole();
        return sign > 0 ? left() : right();
    }

    DyadicInterval parent() const {
        assert(code >= 2);
        return {(code - 1) / 2 + 1};
    }

    // Tree order: the root is an ancestor of everything; whole() of all
    // genuine intervals.  For two genuine intervals this is span inclusion.
    bool tree_descendant_of(DyadicInterval anc) const {
        if (anc.code == 1) return true;
        if (code == 1) return false;
        int la = anc.level(), l = level();
        if (l < la) return false;
        return ((code - 1) >> (l - la)) == anc.code - 1;
    }

    // leaf index window [first, last) at grid depth n (root spans everything)
    std::pair<uint32_t, uint32_t> leaf_range(int n) const {
        if (code == 1) return {0u, 1u << n};
        int l = level();
        assert(l <= n);
        uint32_t w = 1u << (n - l);
        return {pos() * w, (pos() + 1) * w};
    }

    bool operator==(const DyadicInterval& o) const { return code == o.code; }
    bool operator<(const DyadicInterval& o) const { return code < o.code; }
};

// number of nodes (root + levels 0..depth-1) indexed by a depth-N multiplier
inline uint32_t node_count(int depth) { return 1u << depth; }

inline std::pair<uint32_t, uint32_t> level_code_range(int level) {
    return {(1u << level) + 1, (1u << (level + 1))};
}

// Maximal chain from the root down to `target`: codes[k] is the k-th interval,
// signs[k] in {+1,-1} tells whether codes[k+1] is the left or right child of
// codes[k] (the step root -> [0,1) is recorded as +1).
struct Chain {
    std::vector<uint32_t> codes;
    std::vector<int8_t> signs;
};

inline Chain chain_to(DyadicInterval target) {
    Chain ch;
    DyadicInterval cur = target;
    while (true) {
        ch.codes.push_back(cur.code);
        if (cur.code == 1) break;
        DyadicInterval par = cur.parent();
        if (par.code == 1) {
            ch.signs.push_back(1);
        } else {
            ch.signs.push_back(par.left() == cur ? 1 : -1);
        }
        cur = par;
    }
    std::reverse(ch.codes.begin(), ch.codes.end());
    std::reverse(ch.signs.begin(), ch.signs.end());
    return ch;
}

// A maximal descending branch of sign length `depth`:
//
//   I_0 = root, I_1 = [0,1), I_{k+1} = I_k^{theta_k}  (k = 1..depth)
//
// where theta_k = +1 selects the left half.  Bit k-1 of `mask` stores
// [theta_k == +1].  The branch determines the ring sets B_k = I_k \ I_{k+1}
// (each a dyadic interval of measure 2^-k) and the residual interval
// I_{depth+1} at level `depth`, which partition [0,1).
struct Branch {
    int depth = 0;
    uint64_t mask = 0;

    int theta(int k) const {
        assert(k >= 0 && k <= depth);
        if (k == 0) return 1;
        return (mask >> (k - 1)) & 1 ? 1 : -1;
    }

    // I_0 .. I_{depth+1}
    std::vector<DyadicInterval> nodes() const {
        std::vector<DyadicInterval> out;
        out.reserve(depth + 2);
        DyadicInterval cur = DyadicInterval::root();
        out.push_back(cur);
        cur = DyadicInterval::whole();
        out.push_back(cur);
        for (int k = 1; k <= depth; ++k) {
            cur = cur.child(theta(k));
            out.push_back(cur);
        }
        return out;
    }

    // B_k = I_k \ I_{k+1}, the child of I_k opposite to theta_k;  k = 1..depth
    DyadicInterval ring(int k) const {
        assert(k >= 1 && k <= depth);
        DyadicInterval cur = DyadicInterval::whole();
        for (int j = 1; j < k; ++j) cur = cur.child(theta(j));
        return cur.child(-theta(k));
    }

    DyadicInterval residual() const {
        DyadicInterval cur = DyadicInterval::whole();
        for (int k = 1; k <= depth; ++k) cur = cur.child(theta(k));
        return cur;
    }

    uint32_t leaf_index() const { return residual().pos(); }

    static Branch from_leaf(int depth, uint32_t leaf) {
        assert(leaf < (1u << depth));
        Branch b{depth, 0};
        DyadicInterval cur = DyadicInterval::whole();
        for (int k = 1; k <= depth; ++k) {
            uint32_t w = 1u << (depth - k);
            uint32_t lo = cur.pos() * 2 * w;  // leaf offset of cur's left child block
            bool go_left = leaf < lo + w;
            if (go_left) b.mask |= (1ull << (k - 1));
            cur = cur.child(go_left ? 1 : -1);
        }
        return b;
    }

    bool operator<(const Branch& o) const { return mask < o.mask; }
    bool operator==(const Branch& o) const { return depth == o.depth && mask == o.mask; }
};

// Finite set of branches of a common depth, identified with the set of their
// residual leaves; measure = #branches / 2^depth.
struct BranchSet {
    int depth = 0;
    std::vector<uint64_t> masks;  // sorted, unique

    void normalize() {
        std::sort(masks.begin(), masks.end());
        masks.erase(std::unique(masks.begin(), masks.end()), masks.end());
    }

    Rational measure() const { return Rational(masks.size()) * pow2(-depth); }

    static BranchSet all(int depth) {
        BranchSet s{depth, {}};
        s.masks.resize(1ull << depth);
        for (uint64_t m = 0; m < s.masks.size(); ++m) s.masks[m] = m;
        return s;
    }
};

// Downward-closed-along-chains interval family generated by a branch set: all
// prefixes I_0..I_depth of each member branch (codes fit in a depth-`depth`
// node table).  Chain convexity (K in F, L in F, K below J below L implies
// J in F) holds by construction; `is_chain_convex` re-checks it for families
// loaded from outside.
struct StoppingFamily {
    int depth = 0;
    std::vector<uint8_t> member;  // indexed by code, size 2^depth + 1

    static StoppingFamily from_branches(const BranchSet& bs) {
        StoppingFamily f;
        f.depth = bs.depth;
        f.member.assign((1ull << bs.depth) + 1, 0);
        for (uint64_t m : bs.masks) {
            Branch b{bs.depth, m};
            auto nodes = b.nodes();
            for (int k = 0; k <= bs.depth; ++k) f.member[nodes[k].code] = 1;
        }
        return f;
    }

    bool contains(uint32_t code) const { return code < member.size() && member[code]; }

    // upward closure along chains; implies chain convexity (K below J below L
    // with K, L members forces J to be a member)
    bool is_upward_closed() const {
        for (uint32_t c = 2; c < member.size(); ++c) {
            if (member[c] && !member[DyadicInterval{c}.parent().code]) return false;
        }
        return true;
    }
};

}  // namespace haarfact
