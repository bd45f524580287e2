#pragma once

#include <string>

#include "mixed.hpp"
#include "rng.hpp"

namespace haarfact {

// Seeded operator families shared by the tests and the command-line
// generator.  Entries are dyadic rationals so every derived quantity stays
// exact; contractions are rescaled by a certified bound (exactly when the
// bound is exact, by a power of two otherwise).

inline HaarMultiplier random_multiplier(int depth, Rng& rng, int bits = 6) {
    HaarMultiplier d = HaarMultiplier::zeros(depth);
    for (auto& v : d.a) v = rng.dyadic(bits);
    return d;
}

// free entries above `tail_level`, one shared value from there on down
inline HaarMultiplier random_multiplier_constant_tail(int depth, int tail_level, Rng& rng,
                                                      int bits = 6) {
    HaarMultiplier d = HaarMultiplier::zeros(depth);
    Rational tail = rng.dyadic(bits);
    for (uint32_t code = 1; code <= node_count(depth); ++code) {
        DyadicInterval I{code};
        bool free = I.is_root() || I.level() < tail_level;
        d.at(code) = free ? rng.dyadic(bits) : tail;
    }
    return d;
}

inline L1Operator random_l1_contraction(int depth, Rng& rng, int bits = 4) {
    L1Operator t = L1Operator::zero(depth);
    for (uint32_t i = 1; i <= t.dim(); ++i)
        for (uint32_t j = 1; j <= t.dim(); ++j) t.at(i, j) = rng.dyadic(bits);
    Rational nrm = l1_operator_norm_exact(t);
    if (nrm > 1) t.scale(1 / nrm);
    return t;
}

namespace detail {

inline bool bound_is_zero_rg(const Bound& b) { return b.exact ? b.q == 0 : b.d <= 0.0; }

// scale T so that `bound` becomes certified <= 1: exactly when the bound is
// exact, otherwise by the next power of two
inline void rescale_to_unit(MixedOperator& t, const Bound& bound) {
    if (bound_is_zero_rg(bound)) return;
    if (bound.exact) {
        if (bound.q > 1) t.scale(1 / bound.q);
        return;
    }
    double v = bound.value_upper();
    long k = 0;
    while (v > 1.0 && k < 1024) {
        v /= 2;
        ++k;
    }
    if (k > 0) t.scale(pow2(-k));
}

}  // namespace detail

// dense Gaussian draws in Haar coordinates, quantized to dyadics so the
// rescaled operator stays exact
inline MixedOperator random_gaussian_contraction(int n, int m, Rng& rng, const Space& x) {
    MixedOperator t = MixedOperator::zero(n, m);
    for (uint32_t L = 1; L <= t.inner_dim(); ++L)
        for (uint32_t M = 1; M <= t.inner_dim(); ++M) {
            L1Operator w = L1Operator::zero(n);
            for (uint32_t i = 1; i <= w.dim(); ++i)
                for (uint32_t j = 1; j <= w.dim(); ++j) {
                    long long q = llround(rng.gauss() * 256.0);
                    w.at(i, j) = Rational(q) / 256;
                }
            t.block_ref(L, M) = std::move(w);
        }
    t.prune();
    detail::rescale_to_unit(t, mixed_norm_bounds(t, x).upper);
    return t;
}

inline MixedOperator random_mixed_contraction(int n, int m, Rng& rng, const Space& x,
                                              int bits = 3) {
    MixedOperator t = MixedOperator::zero(n, m);
    for (uint32_t L = 1; L <= t.inner_dim(); ++L)
        for (uint32_t M = 1; M <= t.inner_dim(); ++M) {
            L1Operator w = L1Operator::zero(n);
            for (uint32_t i = 1; i <= w.dim(); ++i)
                for (uint32_t j = 1; j <= w.dim(); ++j) w.at(i, j) = rng.dyadic(bits);
            t.block_ref(L, M) = std::move(w);
        }
    t.prune();
    detail::rescale_to_unit(t, mixed_norm_bounds(t, x).upper);
    return t;
}

// a multiplier with a constant tail, tensored with the inner identity: the
// family whose pipeline run collapses with exact zeros
inline MixedOperator random_multiplier_tensor(int n, int m, int tail_level, Rng& rng,
                                              int bits = 6) {
    return tensor_operator(
        L1Operator::from_multiplier(random_multiplier_constant_tail(n, tail_level, rng, bits)),
        L1Operator::identity(m));
}

// X-diagonal multiplier entries plus sparse off-diagonal blocks whose
// certified off-diagonal distance is at most `mass`; verified after scaling
inline MixedOperator random_planted(int n, int m, Rng& rng, const Space& x,
                                    const Rational& mass = Rational(3, 10)) {
    MixedOperator t = MixedOperator::zero(n, m);
    for (uint32_t L = 1; L <= t.inner_dim(); ++L) {
        L1Operator w = L1Operator::from_multiplier(random_multiplier(n, rng, 4));
        w.scale(DyadicInterval{L}.measure());
        t.block_ref(L, L) = std::move(w);
    }
    MixedOperator off = MixedOperator::zero(n, m);
    for (uint32_t L = 1; L <= t.inner_dim(); ++L)
        for (uint32_t M = 1; M <= t.inner_dim(); ++M) {
            if (L == M || rng.below(4) != 0) continue;
            L1Operator w = L1Operator::zero(n);
            for (uint32_t i = 1; i <= w.dim(); ++i)
                for (uint32_t j = 1; j <= w.dim(); ++j)
                    if (rng.below(3) == 0) w.at(i, j) = rng.dyadic(5) / 8;
            off.block_ref(L, M) = std::move(w);
        }
    off.prune();
    Bound xd = xdiagonal_distance(off, x);
    if (!detail::bound_is_zero_rg(xd)) {
        if (xd.exact) {
            if (xd.q > mass) off.scale(mass / xd.q);
        } else {
            double v = xd.value_upper();
            double target = to_double(mass);
            long k = 0;
            while (v > target && k < 1024) {
                v /= 2;
                ++k;
            }
            if (k > 0) off.scale(pow2(-k));
        }
    }
    t += off;
    Bound check = xdiagonal_distance(t, x);
    assert(check.value_upper() <= to_double(mass) * (1 + 1e-9));
    (void)check;
    return t;
}

// X-diagonal operator whose diagonal entries drift slowly down the inner
// tree: each child entry is its parent's entry plus one diagonal bump of size
// at most eps |child|^2, so parent-child deviations follow the quadratic
// schedule that the collapse stage certifies against.
inline MixedOperator random_stable_diagonal(int n, int m, const Rational& eps, Rng& rng) {
    HaarMultiplier base = random_multiplier(n, rng, 3);
    std::vector<L1Operator> entries;
    uint32_t cnt = node_count(m);
    entries.push_back(L1Operator::from_multiplier(base));
    for (uint32_t c = 2; c <= cnt; ++c) {
        DyadicInterval I{c};
        uint32_t parent = I.parent().code;
        L1Operator e = entries[parent - 1];
        // the L1 multiplier norm of a single-coefficient perturbation is that
        // coefficient, so the bump is the exact deviation
        HaarMultiplier bump = HaarMultiplier::zeros(n);
        Rational meas = I.measure();
        bump.at(1 + rng.below(node_count(n))) = eps * meas * meas * rng.dyadic(3);
        e += L1Operator::from_multiplier(bump);
        entries.push_back(std::move(e));
    }
    MixedOperator out = MixedOperator::zero(n, m);
    for (uint32_t L = 1; L <= out.inner_dim(); ++L) {
        L1Operator w = entries[L - 1];
        w.scale(DyadicInterval{L}.measure());
        out.block_ref(L, L) = std::move(w);
    }
    out.prune();
    return out;
}

}  // namespace haarfact
