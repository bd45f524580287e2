#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "stepfun.hpp"

namespace haarfact {

// Diagonal operator h_I -> a_I h_I on the depth-N system (root included).
struct HaarMultiplier {
    int depth = 0;
    std::vector<Rational> a = std::vector<Rational>(1);  // size 2^depth, indexed by code-1

    static HaarMultiplier zeros(int depth) {
        return {depth, std::vector<Rational>(1u << depth)};
    }

    static HaarMultiplier constant(int depth, Rational c) {
        return {depth, std::vector<Rational>(1u << depth, std::move(c))};
    }

    static HaarMultiplier identity(int depth) { return constant(depth, 1); }

    // entries 1 on the root and all levels <= maxlevel
    static HaarMultiplier level_projection(int depth, int maxlevel) {
        HaarMultiplier d = zeros(depth);
        d.a[0] = 1;
        for (int j = 0; j <= maxlevel && j <= depth - 1; ++j) {
            auto [lo, hi] = level_code_range(j);
            for (uint32_t c = lo; c <= hi; ++c) d.a[c - 1] = 1;
        }
        return d;
    }

    Rational& at(uint32_t code) { return a[code - 1]; }
    const Rational& at(uint32_t code) const { return a[code - 1]; }

    StepFunction apply(const StepFunction& f) const {
        assert(f.depth == depth);
        HaarCoeffs c = haar_analysis(f);
        for (size_t i = 0; i < c.c.size(); ++i) c.c[i] *= a[i];
        return haar_synthesis(c);
    }

    HaarMultiplier operator-(const HaarMultiplier& o) const {
        assert(depth == o.depth);
        HaarMultiplier r = *this;
        for (size_t i = 0; i < r.a.size(); ++i) r.a[i] -= o.a[i];
        return r;
    }

    bool operator==(const HaarMultiplier& o) const { return depth == o.depth && a == o.a; }
};

// ----- chain/ring value helpers ---------------------------------------------
//
// For coefficients a_0..a_n along a maximal chain I_0 = root, ..., I_n and any
// sign pattern theta, the function f = sum_k a_k theta_k |I_k|^-1 h_{I_k}
// takes the constant value c_k on the ring B_k = I_k \ I_{k+1}:
//
//   c_k     = a_0 + sum_{j=1}^{k-1} 2^(j-1) a_j - 2^(k-1) a_k   (k = 1..n)
//   c_{n+1} = a_0 + sum_{j=1}^{n} 2^(j-1) a_j                   (residual)
//
// independent of theta (the signs square away), so every L1 quantity below is
// sign-free.

// c_1..c_{n+1} (index shifted down by one)
inline std::vector<Rational> chain_ring_values(const std::vector<Rational>& a) {
    size_t n = a.size() - 1;
    std::vector<Rational> c(n + 1);
    Rational prefix = a[0];  // a_0 + sum_{j<k} 2^(j-1) a_j
    for (size_t k = 1; k <= n; ++k) {
        Rational term = pow2(static_cast<long>(k) - 1) * a[k];
        c[k - 1] = prefix - term;
        prefix += term;
    }
    c[n] = prefix;
    return c;
}

// || sum_k a_k theta_k |I_k|^-1 h_{I_k} ||_L1, exact
inline Rational chain_l1_norm(const std::vector<Rational>& a) {
    size_t n = a.size() - 1;
    std::vector<Rational> c = chain_ring_values(a);
    Rational s = 0;
    for (size_t k = 1; k <= n; ++k) s += pow2(-static_cast<long>(k)) * rat_abs(c[k - 1]);
    s += pow2(-static_cast<long>(n)) * rat_abs(c[n]);
    return s;
}

// mass of the same function on I_m = union of rings k >= m and the residual
inline Rational chain_l1_tail(const std::vector<Rational>& a, size_t m) {
    size_t n = a.size() - 1;
    std::vector<Rational> c = chain_ring_values(a);
    Rational s = 0;
    for (size_t k = (m < 1 ? 1 : m); k <= n; ++k) s += pow2(-static_cast<long>(k)) * rat_abs(c[k - 1]);
    s += pow2(-static_cast<long>(n)) * rat_abs(c[n]);
    return s;
}

// sum_{k=m+1}^n |a_k - a_{k-1}|  +  |a_n|
inline Rational chain_variation_tail(const std::vector<Rational>& a, size_t m) {
    size_t n = a.size() - 1;
    Rational s = rat_abs(a[n]);
    for (size_t k = m + 1; k <= n; ++k) s += rat_abs(a[k] - a[k - 1]);
    return s;
}

inline Rational chain_variation(const std::vector<Rational>& a) {
    return chain_variation_tail(a, 0);
}

// ----- norms -----------------------------------------------------------------

// max over maximal chains of  sum |jumps| + |last entry|  via one upward sweep
inline Rational triple_norm(const HaarMultiplier& D) {
    int n = D.depth;
    if (n == 0) return rat_abs(D.a[0]);
    std::vector<Rational> V(D.a.size());
    auto [llo, lhi] = level_code_range(n - 1);
    for (uint32_t c = llo; c <= lhi; ++c) V[c - 1] = rat_abs(D.at(c));
    for (int level = n - 2; level >= 0; --level) {
        auto [lo, hi] = level_code_range(level);
        for (uint32_t c = lo; c <= hi; ++c) {
            DyadicInterval I{c};
            uint32_t l = I.left().code, r = I.right().code;
            Rational vl = rat_abs(D.at(l) - D.at(c)) + V[l - 1];
            Rational vr = rat_abs(D.at(r) - D.at(c)) + V[r - 1];
            V[c - 1] = vl < vr ? vr : vl;
        }
    }
    return rat_abs(D.at(2) - D.at(1)) + V[1];  // root's single child is [0,1)
}

// same quantity over the branches of a given set only; multiplier entries must
// vanish outside the family generated by the set
inline Rational restricted_triple_norm(const HaarMultiplier& D, const BranchSet& S) {
    assert(S.depth == D.depth);
    StoppingFamily fam = StoppingFamily::from_branches(S);
    for (uint32_t code = 1; code <= node_count(D.depth); ++code) {
        if (D.at(code) != 0 && !fam.contains(code)) {
            throw std::invalid_argument("restricted_triple_norm: entry outside the branch family");
        }
    }
    Rational best = 0;
    for (uint64_t mask : S.masks) {
        Branch b{D.depth, mask};
        auto nodes = b.nodes();  // I_0 .. I_{depth+1}
        std::vector<Rational> a(D.depth + 1);
        for (int k = 0; k <= D.depth; ++k) a[k] = D.at(nodes[k].code);
        Rational v = chain_variation(a);
        if (v > best) best = v;
    }
    return best;
}

// ||D||_{L1 -> L1} at depth N, exactly: the norm is attained at a normalized
// leaf indicator, whose image has the ring values c_k above; one DFS visits
// every node once since the c_k are sign-free.
inline Rational l1_multiplier_norm_exact(const HaarMultiplier& D) {
    int n = D.depth;
    if (n == 0) return rat_abs(D.a[0]);
    Rational best = 0;
    // visit(code at chain index k, level k-1)
    std::function<void(uint32_t, int, const Rational&, const Rational&)> visit =
        [&](uint32_t code, int k, const Rational& prefix, const Rational& acc) {
            Rational term = pow2(k - 1) * D.at(code);
            Rational ring = acc + pow2(-k) * rat_abs(prefix - term);
            Rational prefix2 = prefix + term;
            if (k == n) {
                Rational total = ring + pow2(-n) * rat_abs(prefix2);
                if (total > best) best = total;
                return;
            }
            DyadicInterval I{code};
            visit(I.left().code, k + 1, prefix2, ring);
            visit(I.right().code, k + 1, prefix2, ring);
        };
    visit(2, 1, D.a[0], Rational(0));
    return best;
}

// ----- stopping sets ----------------------------------------------------------

inline HaarMultiplier stopping_projection(const StoppingFamily& fam) {
    HaarMultiplier P = HaarMultiplier::zeros(fam.depth);
    for (uint32_t code = 1; code <= node_count(fam.depth); ++code) {
        if (fam.contains(code)) P.at(code) = 1;
    }
    return P;
}

struct StoppingSelection {
    BranchSet set;
    struct Layer {
        int m = 0;
        Rational budget;              // 2^-m
        int threshold = 0;            // minimal t with qualifying measure >= 1 - eta/2^m
        Rational qualifying_measure;  // at that threshold, before intersecting layers
        Rational achieved_tail;       // max tail at the threshold over the final set
    };
    std::vector<Layer> layers;
    Rational measure;
    int max_threshold = 0;
};

// Branches where every member's entry sequence has settled: layer m keeps the
// branches whose jump tail past an adaptive index t_m is at most 2^-m, with
// measure loss at most eta/2^m per layer, so the intersection keeps measure
// >= 1 - eta.  Tail of a branch past t: sum_{k>t} |a_k - a_{k-1}|.
inline StoppingSelection select_stopping_set(const std::vector<HaarMultiplier>& family,
                                             const Rational& eta) {
    assert(!family.empty());
    int n = family.front().depth;
    for (const auto& d : family) assert(d.depth == n);
    assert(eta > 0 && eta < 1);
    uint64_t count = 1ull << n;

    // tails[mask][t] = max over members of sum_{k>t} |a_k - a_{k-1}|
    std::vector<std::vector<Rational>> tails(count, std::vector<Rational>(n + 1, Rational(0)));
    for (uint64_t mask = 0; mask < count; ++mask) {
        Branch b{n, mask};
        auto nodes = b.nodes();
        for (const auto& D : family) {
            Rational suffix = 0;
            for (int k = n; k >= 1; --k) {
                suffix += rat_abs(D.at(nodes[k].code) - D.at(nodes[k - 1].code));
                if (suffix > tails[mask][k - 1]) tails[mask][k - 1] = suffix;
            }
        }
    }

    StoppingSelection sel;
    std::vector<uint8_t> keep(count, 1);
    for (int m = 1; m <= n; ++m) {
        StoppingSelection::Layer layer;
        layer.m = m;
        layer.budget = pow2(-m);
        Rational need = (1 - eta * pow2(-m)) * Rational(count);
        for (int t = 0; t <= n; ++t) {
            uint64_t q = 0;
            for (uint64_t mask = 0; mask < count; ++mask) {
                if (tails[mask][t] <= layer.budget) ++q;
            }
            if (Rational(q) >= need || t == n) {
                layer.threshold = t;
                layer.qualifying_measure = Rational(q) * pow2(-n);
                break;
            }
        }
        for (uint64_t mask = 0; mask < count; ++mask) {
            if (tails[mask][layer.threshold] > layer.budget) keep[mask] = 0;
        }
        sel.layers.push_back(std::move(layer));
    }

    for (uint64_t mask = 0; mask < count; ++mask) {
        if (keep[mask]) sel.set.masks.push_back(mask);
    }
    sel.set.depth = n;
    sel.measure = sel.set.measure();
    for (auto& layer : sel.layers) {
        layer.achieved_tail = 0;
        for (uint64_t mask : sel.set.masks) {
            if (tails[mask][layer.threshold] > layer.achieved_tail) {
                layer.achieved_tail = tails[mask][layer.threshold];
            }
        }
        if (layer.threshold > sel.max_threshold) sel.max_threshold = layer.threshold;
    }
    return sel;
}

// ----- scalar reduction -------------------------------------------------------

struct ScalarReduction {
    uint32_t root_code = 1;  // the found interval I0
    Rational value;          // a = entry at I0
    Rational achieved;       // triple norm of (D - a) restricted below I0
    bool found = false;
    int level_cap = 0;
};

// Search for I0 with |||(D - a_{I0}) Q_{I0}||| <= eps, where Q_{I0} keeps the
// coefficients below I0.  Ties broken toward the smallest achieved value, then
// the smallest code.  `max_level` restricts the candidate levels (the root is
// always a candidate); the best exceeding eps is still reported.
inline ScalarReduction scalar_reduction_search(const HaarMultiplier& D, const Rational& eps,
                                               int max_level = std::numeric_limits<int>::max()) {
    int n = D.depth;
    int cap = max_level < n - 1 ? max_level : n - 1;
    ScalarReduction best;
    bool have = false;

    // W(x) = max over maximal subtree chains from x of sum |jumps| + |last - a|
    std::function<Rational(uint32_t, const Rational&)> W = [&](uint32_t code,
                                                               const Rational& a) -> Rational {
        DyadicInterval I{code};
        if (I.is_root()) {
            if (n == 0) return rat_abs(D.at(1) - a);
            return rat_abs(D.at(2) - D.at(1)) + W(2, a);
        }
        if (I.level() == n - 1) return rat_abs(D.at(code) - a);
        Rational vl = rat_abs(D.at(I.left().code) - D.at(code)) + W(I.left().code, a);
        Rational vr = rat_abs(D.at(I.right().code) - D.at(code)) + W(I.right().code, a);
        return vl < vr ? vr : vl;
    };

    for (uint32_t code = 1; code <= node_count(n); ++code) {
        DyadicInterval I{code};
        if (!I.is_root() && I.level() > cap) continue;
        Rational a = D.at(code);
        Rational achieved = W(code, a);
        if (!have || achieved < best.achieved ||
            (achieved == best.achieved && code < best.root_code)) {
            best.root_code = code;
            best.value = a;
            best.achieved = achieved;
            have = true;
        }
    }
    best.found = best.achieved <= eps;
    best.level_cap = cap;
    return best;
}

}  // namespace haarfact
