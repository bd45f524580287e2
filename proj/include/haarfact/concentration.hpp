#pragma once

#include <string>
#include <vector>

#include "operator.hpp"
#include "rng.hpp"

namespace haarfact {

// value-type hooks shared by the scalar and operator-valued statistics
inline Rational value_norm(const Rational& v) { return rat_abs(v); }
inline Rational value_norm(const L1Operator& v) { return l1_operator_norm_exact(v); }

inline Rational value_scaled(Rational v, const Rational& c) { return v * c; }
inline L1Operator value_scaled(L1Operator v, const Rational& c) {
    v.scale(c);
    return v;
}

// ---------------------------------------------------------------------------
// N two-point blocks; a sign vector zeta picks one point per block and the
// statistic is the block average
//
//   Phi(zeta) = (1/N) sum_n G(omega_n^{zeta_n}),   E(G) = (1/2N) sum over all
//
// Phi(zeta) + Phi(-zeta) = 2 E(G) always, so zeta and -zeta deviate equally.
// ---------------------------------------------------------------------------
template <class V>
struct DoubletonSpace {
    std::vector<std::pair<V, V>> pairs;  // (value at omega^-1, value at omega^+1)

    size_t size() const { return pairs.size(); }

    V mean() const {
        assert(!pairs.empty());
        V acc = pairs[0].first;
        acc += pairs[0].second;
        for (size_t i = 1; i < pairs.size(); ++i) {
            acc += pairs[i].first;
            acc += pairs[i].second;
        }
        return value_scaled(std::move(acc), Rational(1, 2 * BigInt(pairs.size())));
    }

    Rational bound() const {
        Rational m = 0;
        for (const auto& [a, b] : pairs) {
            Rational na = value_norm(a), nb = value_norm(b);
            if (na > m) m = na;
            if (nb > m) m = nb;
        }
        return m;
    }

    V statistic(const std::vector<int>& zeta) const {
        assert(zeta.size() == pairs.size());
        V acc = zeta[0] > 0 ? pairs[0].second : pairs[0].first;
        for (size_t i = 1; i < pairs.size(); ++i) acc += zeta[i] > 0 ? pairs[i].second : pairs[i].first;
        return value_scaled(std::move(acc), Rational(1, BigInt(pairs.size())));
    }
};

struct SplittingStats {
    Rational mean;
    Rational variance;  // closed form (1/N^2) sum ((a_n - b_n)/2)^2
    Rational bound;     // M = max point norm
    bool variance_bound_ok = false;  // variance <= M^2 / N
    bool exhaustive = false;         // all 2^N sign vectors enumerated
    bool exhaustive_match = false;   // enumeration reproduced mean and variance
    bool chebyshev_ok = false;       // exhaustive tails within variance/eta^2
};

// mean and variance of the block-average statistic over uniform signs; for
// N <= exhaustive_limit every sign vector is enumerated and checked against
// the closed form and the Chebyshev tail bound
inline SplittingStats splitting_statistics(const DoubletonSpace<Rational>& space,
                                           size_t exhaustive_limit = 12) {
    SplittingStats st;
    size_t n = space.size();
    assert(n >= 1);
    Rational nn{BigInt(n)};

    Rational esum = 0, vsum = 0;
    for (const auto& [a, b] : space.pairs) {
        esum += a + b;
        Rational half = (a - b) / 2;
        vsum += half * half;
    }
    st.mean = esum / (2 * nn);
    st.variance = vsum / (nn * nn);
    st.bound = space.bound();
    st.variance_bound_ok = st.variance * nn <= st.bound * st.bound;

    if (n <= exhaustive_limit && n <= 20) {
        st.exhaustive = true;
        uint64_t total = 1ull << n;
        Rational emean = 0, evar = 0;
        std::vector<Rational> values(total);
        for (uint64_t mask = 0; mask < total; ++mask) {
            Rational s = 0;
            for (size_t k = 0; k < n; ++k)
                s += (mask >> k) & 1 ? space.pairs[k].second : space.pairs[k].first;
            values[mask] = s / nn;
            emean += values[mask];
        }
        emean /= Rational(BigInt(total));
        for (const auto& v : values) {
            Rational d = v - emean;
            evar += d * d;
        }
        evar /= Rational(BigInt(total));
        st.exhaustive_match = emean == st.mean && evar == st.variance;

        st.chebyshev_ok = true;
        Rational m = st.bound;
        if (m > 0) {
            for (const Rational& eta :
                 {Rational(m / 8), Rational(m / 4), Rational(m / 2), m, Rational(2 * m)}) {
                uint64_t hits = 0;
                for (const auto& v : values)
                    if (rat_abs(v - st.mean) >= eta) ++hits;
                Rational tail{BigInt(hits), BigInt(total)};
                if (tail * eta * eta > st.variance) st.chebyshev_ok = false;
            }
        }
    }
    return st;
}

// exhaustive tail probability P(|Phi - E| >= eta) against the Chebyshev bound
struct ChebyshevCheck {
    Rational tail;   // exact probability
    Rational bound;  // variance / eta^2
    bool ok = false;
};

inline ChebyshevCheck chebyshev_check(const DoubletonSpace<Rational>& space, const Rational& eta) {
    assert(eta > 0);
    size_t n = space.size();
    assert(n <= 20);
    SplittingStats st = splitting_statistics(space, 0);
    uint64_t total = 1ull << n, hits = 0;
    Rational nn{BigInt(n)};
    for (uint64_t mask = 0; mask < total; ++mask) {
        Rational s = 0;
        for (size_t k = 0; k < n; ++k)
            s += (mask >> k) & 1 ? space.pairs[k].second : space.pairs[k].first;
        if (rat_abs(s / nn - st.mean) >= eta) ++hits;
    }
    ChebyshevCheck c;
    c.tail = Rational(BigInt(hits), BigInt(total));
    c.bound = st.variance / (eta * eta);
    c.ok = c.tail <= c.bound;
    return c;
}

// ---------------------------------------------------------------------------
// Greedy eta/3 cover of K u (-K).  Candidate centers are the points plus all
// pairwise midpoints (a cheap convex-hull sample); the cover is verified
// before returning.
// ---------------------------------------------------------------------------
template <class V>
struct NetResult {
    std::vector<V> centers;
    bool verified = false;
    size_t size() const { return centers.size(); }
};

template <class V>
NetResult<V> net_size(const std::vector<V>& k, const Rational& eta) {
    assert(eta > 0);
    Rational radius = eta / 3;

    std::vector<V> points;
    auto push_unique = [&](std::vector<V>& dst, const V& v) {
        for (const auto& w : dst)
            if (w == v) return;
        dst.push_back(v);
    };
    for (const auto& v : k) {
        push_unique(points, v);
        push_unique(points, value_scaled(v, Rational(-1)));
    }

    std::vector<V> candidates = points;
    for (size_t i = 0; i < points.size(); ++i)
        for (size_t j = i + 1; j < points.size(); ++j) {
            V mid = points[i];
            mid += points[j];
            push_unique(candidates, value_scaled(std::move(mid), Rational(1, 2)));
        }

    auto covers = [&](const V& center, const V& point) {
        V d = center;
        d -= point;
        return value_norm(d) <= radius;
    };

    NetResult<V> net;
    std::vector<bool> covered(points.size(), false);
    size_t left = points.size();
    while (left > 0) {
        size_t best = 0, best_gain = 0;
        for (size_t c = 0; c < candidates.size(); ++c) {
            size_t gain = 0;
            for (size_t p = 0; p < points.size(); ++p)
                if (!covered[p] && covers(candidates[c], points[p])) ++gain;
            if (gain > best_gain) {
                best_gain = gain;
                best = c;
            }
        }
        assert(best_gain > 0);  // every point covers itself
        net.centers.push_back(candidates[best]);
        for (size_t p = 0; p < points.size(); ++p)
            if (!covered[p] && covers(candidates[best], points[p])) {
                covered[p] = true;
                --left;
            }
    }

    net.verified = true;
    for (size_t p = 0; p < points.size(); ++p) {
        bool hit = false;
        for (const auto& c : net.centers) hit = hit || covers(c, points[p]);
        if (!hit) net.verified = false;
    }
    return net;
}

// ceil(9 d(K,eta) M^2 / (eps eta^2)) with M = max norm over K
template <class V>
uint64_t required_N(const std::vector<V>& k, const Rational& eps, const Rational& eta) {
    assert(eps > 0 && eta > 0);
    Rational m = 0;
    for (const auto& v : k) {
        Rational nv = value_norm(v);
        if (nv > m) m = nv;
    }
    size_t d = net_size(k, eta).size();
    Rational q = Rational(9) * Rational(BigInt(d)) * m * m / (eps * eta * eta);
    BigInt num = numerator(q), den = denominator(q);
    BigInt c = (num + den - 1) / den;
    return c.convert_to<uint64_t>();
}

// ---------------------------------------------------------------------------
// Seeded sign search.  zeta and -zeta always deviate equally (the pairing
// identity), so one statistic evaluation serves both; the lexicographically
// smaller of the two is kept, and ties across draws keep the lex-smaller zeta.
// ---------------------------------------------------------------------------
template <class V>
struct SignSelection {
    std::vector<int> zeta;
    V statistic;
    Rational deviation;
    bool met = false;
    int tries_used = 0;
};

template <class V>
SignSelection<V> sign_select(const DoubletonSpace<V>& g, const Rational& eta, uint64_t seed,
                             int tries) {
    assert(g.size() >= 1 && tries >= 1);
    V mean = g.mean();

    SignSelection<V> best;
    auto lex_less = [](const std::vector<int>& a, const std::vector<int>& b) {
        for (size_t i = 0; i < a.size(); ++i)
            if (a[i] != b[i]) return a[i] < b[i];
        return false;
    };

    for (int t = 0; t < tries; ++t) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(t)));
        std::vector<int> zeta(g.size());
        for (auto& z : zeta) z = rng.sign();
        std::vector<int> flipped(zeta);
        for (auto& z : flipped) z = -z;
        if (lex_less(flipped, zeta)) zeta.swap(flipped);

        V phi = g.statistic(zeta);
        V diff = phi;
        diff -= mean;
        Rational dev = value_norm(diff);

        bool better = best.zeta.empty() || dev < best.deviation ||
                      (dev == best.deviation && lex_less(zeta, best.zeta));
        if (better) {
            best.zeta = zeta;
            best.statistic = phi;
            best.deviation = dev;
        }
        best.tries_used = t + 1;
        if (best.deviation <= eta) break;
    }
    best.met = best.deviation <= eta;
    return best;
}

// ---------------------------------------------------------------------------
// Finite Rosenthal extraction: a subset S of row indices such that every
// selected row has off-diagonal mass at most eps over S.  Greedy in index
// order with exact incremental checks, then a full verification pass.
// ---------------------------------------------------------------------------
inline bool rosenthal_verify(const std::vector<std::vector<Rational>>& rows,
                             const std::vector<size_t>& subset, const Rational& eps) {
    for (size_t a : subset) {
        Rational mass = 0;
        for (size_t b : subset)
            if (b != a) mass += rat_abs(rows[a][b]);
        if (mass > eps) return false;
    }
    return true;
}

inline std::vector<size_t> rosenthal_extract(const std::vector<std::vector<Rational>>& rows,
                                             const Rational& eps) {
    assert(eps > 0);
    for (const auto& r : rows) {
        assert(r.size() == rows.size());
        (void)r;
    }
    std::vector<size_t> sel;
    std::vector<Rational> mass;  // off-diagonal mass of each selected row
    for (size_t i = 0; i < rows.size(); ++i) {
        Rational mi = 0;
        for (size_t j = 0; j < sel.size(); ++j) mi += rat_abs(rows[i][sel[j]]);
        if (mi > eps) continue;
        bool ok = true;
        for (size_t j = 0; j < sel.size() && ok; ++j)
            ok = mass[j] + rat_abs(rows[sel[j]][i]) <= eps;
        if (!ok) continue;
        for (size_t j = 0; j < sel.size(); ++j) mass[j] += rat_abs(rows[sel[j]][i]);
        sel.push_back(i);
        mass.push_back(mi);
    }
    bool verified = rosenthal_verify(rows, sel, eps);
    assert(verified);
    (void)verified;
    return sel;
}

}  // namespace haarfact
