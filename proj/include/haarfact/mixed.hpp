#pragma once

#include <algorithm>
#include <optional>
#include <utility>

#include "operator.hpp"
#include "rng.hpp"

namespace haarfact {

// ---------------------------------------------------------------------------
// Functions on the product grid at depths (n, m): outer variable s over 2^n
// leaves, inner variable t over 2^m leaves.  Models simple functions in
// L1(X) with X a space over the inner interval.
// ---------------------------------------------------------------------------
struct MixedFunction {
    int n = 0;
    int m = 0;
    std::vector<Rational> v = std::vector<Rational>(1);  // v[s * 2^m + t]

    static MixedFunction zero(int n, int m) {
        return {n, m, std::vector<Rational>(size_t(1) << (n + m))};
    }

    uint32_t outer_dim() const { return 1u << n; }
    uint32_t inner_dim() const { return 1u << m; }

    Rational& at(uint32_t s, uint32_t t) { return v[size_t(s) * inner_dim() + t]; }
    const Rational& at(uint32_t s, uint32_t t) const { return v[size_t(s) * inner_dim() + t]; }

    StepFunction row(uint32_t s) const {
        StepFunction f = StepFunction::zero(m);
        for (uint32_t t = 0; t < inner_dim(); ++t) f.v[t] = at(s, t);
        return f;
    }

    void set_row(uint32_t s, const StepFunction& f) {
        assert(f.depth == m);
        for (uint32_t t = 0; t < inner_dim(); ++t) at(s, t) = f.v[t];
    }

    MixedFunction& operator+=(const MixedFunction& o) {
        assert(n == o.n && m == o.m);
        for (size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }

    MixedFunction& operator-=(const MixedFunction& o) {
        assert(n == o.n && m == o.m);
        for (size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
        return *this;
    }

    MixedFunction operator+(const MixedFunction& o) const {
        MixedFunction r = *this;
        r += o;
        return r;
    }

    MixedFunction operator-(const MixedFunction& o) const {
        MixedFunction r = *this;
        r -= o;
        return r;
    }

    MixedFunction& scale(const Rational& c) {
        for (auto& x : v) x *= c;
        return *this;
    }

    // || s -> ||u(s,.)||_X ||_{L1}
    double l1x_norm(const Space& x) const {
        double acc = 0.0;
        for (uint32_t s = 0; s < outer_dim(); ++s) acc += x.norm(row(s));
        return acc * std::exp2(static_cast<double>(-n));
    }

    Rational l1x_norm_exact(const Space& x) const {
        assert(x.exact_norms());
        Rational acc = 0;
        for (uint32_t s = 0; s < outer_dim(); ++s) acc += x.norm_exact(row(s));
        return acc * pow2(-n);
    }

    bool operator==(const MixedFunction& o) const { return n == o.n && m == o.m && v == o.v; }
};

inline MixedFunction tensor(const StepFunction& outer, const StepFunction& inner) {
    MixedFunction u = MixedFunction::zero(outer.depth, inner.depth);
    for (uint32_t s = 0; s < u.outer_dim(); ++s)
        for (uint32_t t = 0; t < u.inner_dim(); ++t)
            if (outer.v[s] != 0 && inner.v[t] != 0) u.at(s, t) = outer.v[s] * inner.v[t];
    return u;
}

inline Rational mixed_inner(const MixedFunction& a, const MixedFunction& b) {
    assert(a.n == b.n && a.m == b.m);
    Rational acc = 0;
    for (size_t i = 0; i < a.v.size(); ++i)
        if (a.v[i] != 0 && b.v[i] != 0) acc += a.v[i] * b.v[i];
    return acc * pow2(-(a.n + a.m));
}

// apply a linear map to the outer variable only (one call per inner leaf)
template <class F>
MixedFunction map_outer(const MixedFunction& u, int new_n, F&& f) {
    MixedFunction out = MixedFunction::zero(new_n, u.m);
    StepFunction col = StepFunction::zero(u.n);
    for (uint32_t t = 0; t < u.inner_dim(); ++t) {
        for (uint32_t s = 0; s < u.outer_dim(); ++s) col.v[s] = u.at(s, t);
        StepFunction r = f(col);
        assert(r.depth == new_n);
        for (uint32_t s = 0; s < out.outer_dim(); ++s) out.at(s, t) = r.v[s];
    }
    return out;
}

// apply a linear map to the inner variable only (one call per outer leaf)
template <class F>
MixedFunction map_inner(const MixedFunction& u, int new_m, F&& f) {
    MixedFunction out = MixedFunction::zero(u.n, new_m);
    for (uint32_t s = 0; s < u.outer_dim(); ++s) {
        StepFunction r = f(u.row(s));
        assert(r.depth == new_m);
        out.set_row(s, r);
    }
    return out;
}

// u = sum_{J,M} c[(J-1)*2^m + (M-1)] h_J(s) h_M(t)
inline std::vector<Rational> joint_analysis(const MixedFunction& u) {
    uint32_t od = u.outer_dim(), id = u.inner_dim();
    std::vector<Rational> b(size_t(od) * id);  // b[s][M]: inner coefficients per row
    for (uint32_t s = 0; s < od; ++s) {
        HaarCoeffs c = haar_analysis(u.row(s));
        for (uint32_t k = 0; k < id; ++k) b[size_t(s) * id + k] = std::move(c.c[k]);
    }
    std::vector<Rational> out(size_t(od) * id);
    StepFunction col = StepFunction::zero(u.n);
    for (uint32_t k = 0; k < id; ++k) {
        for (uint32_t s = 0; s < od; ++s) col.v[s] = b[size_t(s) * id + k];
        HaarCoeffs c = haar_analysis(col);
        for (uint32_t j = 0; j < od; ++j) out[size_t(j) * id + k] = std::move(c.c[j]);
    }
    return out;
}

inline MixedFunction joint_synthesis(int n, int m, const std::vector<Rational>& coef) {
    uint32_t od = 1u << n, id = 1u << m;
    assert(coef.size() == size_t(od) * id);
    std::vector<Rational> b(size_t(od) * id);  // b[s][M]
    HaarCoeffs cc = HaarCoeffs::zero(n);
    for (uint32_t k = 0; k < id; ++k) {
        for (uint32_t j = 0; j < od; ++j) cc.c[j] = coef[size_t(j) * id + k];
        StepFunction col = haar_synthesis(cc);
        for (uint32_t s = 0; s < od; ++s) b[size_t(s) * id + k] = std::move(col.v[s]);
    }
    MixedFunction out = MixedFunction::zero(n, m);
    HaarCoeffs rc = HaarCoeffs::zero(m);
    for (uint32_t s = 0; s < od; ++s) {
        for (uint32_t k = 0; k < id; ++k) rc.c[k] = b[size_t(s) * id + k];
        out.set_row(s, haar_synthesis(rc));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Operators on L1(X) at depths (n, m), stored blockwise over inner Haar pairs:
//
//   block(L, M)[I][J] = <h_I x h_L, T(|J|^-1 h_J x h_M)>
//
// (I, J outer codes; L, M inner codes; absent blocks are zero).  Only the
// outer input carries the measure normalizer, so every stored entry is
// rational whatever the space X; the X-dependent factor nu_L mu_M is
// reattached as an exact power of two when a block's norm is needed.
// ---------------------------------------------------------------------------
struct MixedOperator {
    int n = 0;
    int m = 0;
    std::map<std::pair<uint32_t, uint32_t>, L1Operator> blocks;

    uint32_t outer_dim() const { return 1u << n; }
    uint32_t inner_dim() const { return 1u << m; }

    static MixedOperator zero(int n, int m) { return {n, m, {}}; }

    static MixedOperator identity(int n, int m) {
        MixedOperator t = zero(n, m);
        for (uint32_t L = 1; L <= (1u << m); ++L) {
            L1Operator w = L1Operator::identity(n);
            w.scale(DyadicInterval{L}.measure());
            t.blocks.emplace(std::make_pair(L, L), std::move(w));
        }
        return t;
    }

    const L1Operator* block(uint32_t L, uint32_t M) const {
        auto it = blocks.find({L, M});
        return it == blocks.end() ? nullptr : &it->second;
    }

    L1Operator& block_ref(uint32_t L, uint32_t M) {
        auto it = blocks.find({L, M});
        if (it == blocks.end()) it = blocks.emplace(std::make_pair(L, M), L1Operator::zero(n)).first;
        return it->second;
    }

    void prune() {
        for (auto it = blocks.begin(); it != blocks.end();) {
            bool zero = true;
            for (const auto& x : it->second.m)
                if (x != 0) {
                    zero = false;
                    break;
                }
            it = zero ? blocks.erase(it) : std::next(it);
        }
    }

    // T^L = |L|^-1 block(L, L): the outer operator seen on inner slot L
    L1Operator diagonal_entry(uint32_t L) const {
        const L1Operator* w = block(L, L);
        if (!w) return L1Operator::zero(n);
        L1Operator t = *w;
        t.scale(1 / DyadicInterval{L}.measure());
        return t;
    }

    bool is_x_diagonal() const {
        for (const auto& [k, w] : blocks) {
            if (k.first == k.second) continue;
            for (const auto& x : w.m)
                if (x != 0) return false;
        }
        return true;
    }

    MixedFunction apply(const MixedFunction& u) const {
        assert(u.n == n && u.m == m);
        std::vector<Rational> c = joint_analysis(u);
        uint32_t od = outer_dim(), id = inner_dim();
        std::vector<Rational> out(size_t(od) * id);
        std::vector<Rational> colc(od);
        for (const auto& [key, w] : blocks) {
            uint32_t L = key.first, M = key.second;
            bool any = false;
            for (uint32_t j = 0; j < od; ++j) {
                colc[j] = c[size_t(j) * id + (M - 1)];
                if (colc[j] != 0) any = true;
            }
            if (!any) continue;
            std::vector<Rational> res = w.apply_coeffs(colc);
            Rational invL = 1 / DyadicInterval{L}.measure();
            for (uint32_t i = 0; i < od; ++i)
                if (res[i] != 0) out[size_t(i) * id + (L - 1)] += res[i] * invL;
        }
        return joint_synthesis(n, m, out);
    }

    // this after inner: block(L,M) = sum_K |K|^-1 block1(L,K) block2(K,M)
    MixedOperator compose(const MixedOperator& inner) const {
        assert(n == inner.n && m == inner.m);
        MixedOperator r = zero(n, m);
        for (const auto& [k1, w1] : blocks)
            for (const auto& [k2, w2] : inner.blocks) {
                if (k1.second != k2.first) continue;
                L1Operator prod = w1.compose(w2);
                prod.scale(1 / DyadicInterval{k1.second}.measure());
                r.block_ref(k1.first, k2.second) += prod;
            }
        r.prune();
        return r;
    }

    MixedOperator& operator+=(const MixedOperator& o) {
        assert(n == o.n && m == o.m);
        for (const auto& [k, w] : o.blocks) block_ref(k.first, k.second) += w;
        return *this;
    }

    MixedOperator& operator-=(const MixedOperator& o) {
        assert(n == o.n && m == o.m);
        for (const auto& [k, w] : o.blocks) block_ref(k.first, k.second) -= w;
        return *this;
    }

    MixedOperator operator+(const MixedOperator& o) const {
        MixedOperator r = *this;
        r += o;
        return r;
    }

    MixedOperator operator-(const MixedOperator& o) const {
        MixedOperator r = *this;
        r -= o;
        return r;
    }

    MixedOperator& scale(const Rational& c) {
        for (auto& [k, w] : blocks) w.scale(c);
        return *this;
    }

    bool operator==(const MixedOperator& o) const {
        if (n != o.n || m != o.m) return false;
        MixedOperator a = *this, b = o;
        a.prune();
        b.prune();
        return a.blocks == b.blocks;
    }
};

// outer x inner, both factors given in the pairing convention
inline MixedOperator tensor_operator(const L1Operator& outer, const L1Operator& inner) {
    MixedOperator t = MixedOperator::zero(outer.depth, inner.depth);
    for (uint32_t L = 1; L <= inner.dim(); ++L)
        for (uint32_t M = 1; M <= inner.dim(); ++M) {
            const Rational& a = inner.at(L, M);
            if (a == 0) continue;
            L1Operator w = outer;
            w.scale(a * DyadicInterval{M}.measure());
            t.blocks.emplace(std::make_pair(L, M), std::move(w));
        }
    t.prune();
    return t;
}

// value-coordinate matrix: column j holds the values of T(cell indicator j),
// cells indexed s * 2^m + t
inline std::vector<Rational> to_dense(const MixedOperator& T) {
    size_t dim = size_t(T.outer_dim()) * T.inner_dim();
    std::vector<Rational> a(dim * dim);
    for (size_t j = 0; j < dim; ++j) {
        MixedFunction e = MixedFunction::zero(T.n, T.m);
        e.v[j] = 1;
        MixedFunction w = T.apply(e);
        for (size_t i = 0; i < dim; ++i) a[i * dim + j] = std::move(w.v[i]);
    }
    return a;
}

// plain pair sums against one Haar factor: out[code-1] = sum_j h_code(j) x[j]
inline std::vector<Rational> haar_pair_sums(const std::vector<Rational>& x) {
    uint32_t dim = static_cast<uint32_t>(x.size());
    int n = ilog2(dim);
    std::vector<Rational> out(dim);
    std::vector<Rational> cur = x;
    for (int j = n - 1; j >= 0; --j) {
        uint32_t width = 1u << j;
        for (uint32_t i = 0; i < width; ++i) {
            out[width + i] = cur[2 * i] - cur[2 * i + 1];  // code 2^j + i + 1
            cur[i] = cur[2 * i] + cur[2 * i + 1];
        }
    }
    out[0] = cur[0];
    return out;
}

// out[(J-1)*2^m + (M-1)] = sum_{s,t} h_J(s) h_M(t) g[s][t]
inline std::vector<Rational> joint_pair_sums(int n, int m, const std::vector<Rational>& g) {
    uint32_t od = 1u << n, id = 1u << m;
    assert(g.size() == size_t(od) * id);
    std::vector<Rational> b(size_t(od) * id);
    std::vector<Rational> rowv(id);
    for (uint32_t s = 0; s < od; ++s) {
        for (uint32_t t = 0; t < id; ++t) rowv[t] = g[size_t(s) * id + t];
        std::vector<Rational> ps = haar_pair_sums(rowv);
        for (uint32_t k = 0; k < id; ++k) b[size_t(s) * id + k] = std::move(ps[k]);
    }
    std::vector<Rational> out(size_t(od) * id);
    std::vector<Rational> colv(od);
    for (uint32_t k = 0; k < id; ++k) {
        for (uint32_t s = 0; s < od; ++s) colv[s] = b[size_t(s) * id + k];
        std::vector<Rational> ps = haar_pair_sums(colv);
        for (uint32_t j = 0; j < od; ++j) out[size_t(j) * id + k] = std::move(ps[j]);
    }
    return out;
}

// inverse of to_dense: recover the blocks of a linear map given by its
// value-coordinate matrix
inline MixedOperator block_decompose(int n, int m, const std::vector<Rational>& dense) {
    uint32_t od = 1u << n, id = 1u << m;
    size_t dim = size_t(od) * id;
    assert(dense.size() == dim * dim);
    // pair each column against h_I x h_L (no measure weights yet)
    std::vector<Rational> p(dim * dim);
    std::vector<Rational> col(dim);
    for (size_t j = 0; j < dim; ++j) {
        for (size_t i = 0; i < dim; ++i) col[i] = dense[i * dim + j];
        std::vector<Rational> ps = joint_pair_sums(n, m, col);
        for (size_t il = 0; il < dim; ++il) p[il * dim + j] = std::move(ps[il]);
    }
    // expand each row in the input pairs h_J x h_M
    MixedOperator t = MixedOperator::zero(n, m);
    Rational cellw = pow2(-(n + m));
    std::vector<Rational> row(dim);
    for (uint32_t I = 1; I <= od; ++I)
        for (uint32_t L = 1; L <= id; ++L) {
            size_t il = size_t(I - 1) * id + (L - 1);
            for (size_t j = 0; j < dim; ++j) row[j] = p[il * dim + j];
            std::vector<Rational> q = joint_pair_sums(n, m, row);
            for (uint32_t J = 1; J <= od; ++J)
                for (uint32_t M = 1; M <= id; ++M) {
                    Rational& wv = q[size_t(J - 1) * id + (M - 1)];
                    if (wv == 0) continue;
                    t.block_ref(L, M).at(I, J) = wv * cellw / DyadicInterval{J}.measure();
                }
        }
    t.prune();
    return t;
}

// ---------------------------------------------------------------------------
// Rank-one legs between L1 and L1(X): J_M f = f x (mu_M h_M) is an isometry
// onto the inner slot M, Q_M u = nu_M <h_M, u(s,.)> is its norm-one left
// inverse.  The rational part and the (possibly irrational) power-of-two
// scale are kept separate so compositions stay exact.
// ---------------------------------------------------------------------------
struct ScaledStepFunction {
    StepFunction raw;
    DyadPow scale;
};

struct ScaledMixedFunction {
    MixedFunction raw;
    DyadPow scale;
};

inline StepFunction inner_pairing(const MixedFunction& u, uint32_t M) {
    StepFunction hm = StepFunction::haar(DyadicInterval{M}, u.m);
    StepFunction g = StepFunction::zero(u.n);
    for (uint32_t s = 0; s < u.outer_dim(); ++s) g.v[s] = inner(u.row(s), hm);
    return g;
}

inline ScaledStepFunction project_q(const MixedFunction& u, uint32_t M, const Space& x) {
    return {inner_pairing(u, M), x.nu(DyadicInterval{M})};
}

inline ScaledMixedFunction embed_j(const StepFunction& f, uint32_t M, int m, const Space& x) {
    return {tensor(f, StepFunction::haar(DyadicInterval{M}, m)), x.mu(DyadicInterval{M})};
}

// ---------------------------------------------------------------------------
// Distance to the X-diagonal part and norm bounds
// ---------------------------------------------------------------------------

// certified upper bound on ||T - diagonal part||: the (L,M) piece sends u to
// (|L||M|)^-1 (W_LM <h_M, u>) x h_L and has norm at most nu_L mu_M ||W_LM||
inline Bound xdiagonal_distance(const MixedOperator& T, const Space& x) {
    Bound acc = Bound::zero();
    for (const auto& [k, w] : T.blocks) {
        if (k.first == k.second) continue;
        Rational nrm = l1_operator_norm_exact(w);
        if (nrm == 0) continue;
        DyadPow s = x.nu(DyadicInterval{k.first}) * x.mu(DyadicInterval{k.second});
        acc = acc + Bound::scaled(nrm, s);
    }
    return acc;
}

inline MixedOperator drop_offdiagonal(const MixedOperator& T) {
    MixedOperator r = MixedOperator::zero(T.n, T.m);
    for (const auto& [k, w] : T.blocks)
        if (k.first == k.second) r.blocks.emplace(k, w);
    r.prune();
    return r;
}

// if every inner slot sees the same outer operator (T = S x Id), return S
inline std::optional<L1Operator> equal_diagonal_part(const MixedOperator& T) {
    if (!T.is_x_diagonal()) return std::nullopt;
    L1Operator s = T.diagonal_entry(1);
    for (uint32_t L = 2; L <= T.inner_dim(); ++L)
        if (!(T.diagonal_entry(L) == s)) return std::nullopt;
    return s;
}

struct DiagonalDeviation {
    uint32_t parent = 0;
    uint32_t child = 0;
    Rational norm;
};

// ||T^child - T^parent|| over all inner tree edges: the stabilization table
// consumed when collapsing an X-diagonal operator onto one outer factor
inline std::vector<DiagonalDeviation> parent_child_deviations(const MixedOperator& T) {
    std::vector<DiagonalDeviation> out;
    for (uint32_t c = 2; c <= T.inner_dim(); ++c) {
        uint32_t p = DyadicInterval{c}.parent().code;
        out.push_back({p, c, l1_operator_norm_exact(T.diagonal_entry(c) - T.diagonal_entry(p))});
    }
    return out;
}

struct MixedNormBounds {
    Bound upper = Bound::zero();
    double lower = 0.0;
    bool exact = false;  // the upper bound is attained
    std::string method;
};

// ||T||_{L1(X)}: certified upper bound, probed lower bound.  Exact when the
// diagonal is constant (T = S x Id, norm ||S||) or when X = L1 at small size
// (cell extremes exhaust the unit ball).
inline MixedNormBounds mixed_norm_bounds(const MixedOperator& T, const Space& x, int samples = 64,
                                         uint64_t seed = 1) {
    MixedNormBounds out;

    if (auto s = equal_diagonal_part(T)) {
        Rational nrm = l1_operator_norm_exact(*s);
        out.upper = Bound::exact_rational(nrm);
        out.lower = to_double(nrm);
        out.exact = true;
        out.method = "constant-diagonal";
        return out;
    }

    bool small = T.n + T.m <= 8;

    if (x.is_l1() && small) {
        // extreme points |cell|^-1 chi_cell of the L1(L1) ball
        Rational best = 0;
        size_t dim = size_t(T.outer_dim()) * T.inner_dim();
        for (size_t j = 0; j < dim; ++j) {
            MixedFunction e = MixedFunction::zero(T.n, T.m);
            e.v[j] = 1;
            Rational nrm = T.apply(e).l1x_norm_exact(x) * pow2(T.n + T.m);
            if (nrm > best) best = nrm;
        }
        out.upper = Bound::exact_rational(best);
        out.lower = to_double(best);
        out.exact = true;
        out.method = "l1-cell-extremes";
        return out;
    }

    // diagonal perturbation bound: ||T|| <= ||T^root|| + sum_L ||T^L - T^root||
    // plus the off-diagonal mass
    L1Operator base = T.diagonal_entry(1);
    Bound upper = Bound::exact_rational(l1_operator_norm_exact(base));
    for (uint32_t L = 2; L <= T.inner_dim(); ++L) {
        Rational dev = l1_operator_norm_exact(T.diagonal_entry(L) - base);
        if (dev != 0) upper = upper + Bound::exact_rational(dev);
    }
    upper = upper + xdiagonal_distance(T, x);
    out.upper = upper;
    out.method = "diagonal-perturbation";

    // lower bound by probing unit vectors
    double lo = 0.0;
    auto probe = [&](const MixedFunction& raw, double unit_scale) {
        MixedFunction w = T.apply(raw);
        double nrm = w.l1x_norm(x) * unit_scale;
        if (nrm > lo) lo = nrm;
    };
    for (uint32_t M = 1; M <= T.inner_dim(); ++M) {
        StepFunction hm = StepFunction::haar(DyadicInterval{M}, T.m);
        double sc = x.mu(DyadicInterval{M}).double_value();
        if (small) {
            for (uint32_t K = 0; K < T.outer_dim(); ++K) {
                StepFunction e = StepFunction::zero(T.n);
                e.v[K] = pow2(T.n);
                probe(tensor(e, hm), sc);
            }
        } else {
            StepFunction e = StepFunction::zero(T.n);
            e.v[0] = pow2(T.n);
            probe(tensor(e, hm), sc);
        }
    }
    Rng rng(seed);
    for (int it = 0; it < samples; ++it) {
        MixedFunction u = MixedFunction::zero(T.n, T.m);
        for (auto& c : u.v) c = rng.dyadic(8);
        double nrm = u.l1x_norm(x);
        if (nrm > 1e-12) probe(u, 1.0 / nrm);
    }
    out.lower = lo;
    return out;
}

// ---------------------------------------------------------------------------
// Coarsening: keep the leading outer and inner codes.  Both legs are
// conditional expectations, a norm-one projectional pair for every X.
// ---------------------------------------------------------------------------
inline MixedOperator canonical_coarsen(const MixedOperator& T, int n2, int m2) {
    assert(n2 <= T.n && m2 <= T.m);
    MixedOperator r = MixedOperator::zero(n2, m2);
    uint32_t icut = 1u << m2;
    for (const auto& [k, w] : T.blocks) {
        if (k.first > icut || k.second > icut) continue;
        r.blocks.emplace(k, w.truncated(n2));
    }
    r.prune();
    return r;
}

// inclusion leg: the same function on the finer product grid
inline MixedFunction mixed_refine(const MixedFunction& u, int n, int m) {
    assert(n >= u.n && m >= u.m);
    MixedFunction out = MixedFunction::zero(n, m);
    int so = n - u.n, si = m - u.m;
    for (uint32_t s = 0; s < out.outer_dim(); ++s)
        for (uint32_t t = 0; t < out.inner_dim(); ++t) out.at(s, t) = u.at(s >> so, t >> si);
    return out;
}

// expectation leg: cell averages on the coarser product grid
inline MixedFunction mixed_coarse_project(const MixedFunction& u, int n2, int m2) {
    assert(n2 <= u.n && m2 <= u.m);
    MixedFunction out = MixedFunction::zero(n2, m2);
    int so = u.n - n2, si = u.m - m2;
    Rational w = pow2(-(so + si));
    for (uint32_t s = 0; s < u.outer_dim(); ++s)
        for (uint32_t t = 0; t < u.inner_dim(); ++t) out.at(s >> so, t >> si) += u.at(s, t) * w;
    return out;
}

// ---------------------------------------------------------------------------
// Restriction to a union of dyadic intervals.  A union A of 2^j cells at one
// level is isometrically a copy of L1 over a shallower grid: V embeds the
// shallow grid onto A (an L1 isometry), V^-1 R_A maps back with norm one,
// and V (V^-1 R_A) is multiplication by the indicator of A.
// ---------------------------------------------------------------------------
struct GridRestriction {
    int host_depth = 0;
    int level = 0;                // common level of the cells
    std::vector<uint32_t> cells;  // sorted codes, power-of-two count

    static GridRestriction from_cells(int host_depth, int level, std::vector<uint32_t> cells) {
        std::sort(cells.begin(), cells.end());
        cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
        if (cells.empty() || (cells.size() & (cells.size() - 1)) != 0)
            throw std::invalid_argument("restriction needs a power-of-two cell count");
        if (level < 0 || level > host_depth) throw std::invalid_argument("bad restriction level");
        auto [lo, hi] = level_code_range(level);
        for (uint32_t c : cells)
            if (c < lo || c > hi) throw std::invalid_argument("cell code off the stated level");
        (void)lo;
        (void)hi;
        return {host_depth, level, std::move(cells)};
    }

    int parts_log2() const { return ilog2(static_cast<uint32_t>(cells.size())); }
    int source_depth() const { return host_depth - level + parts_log2(); }
    Rational measure() const { return Rational(cells.size()) * pow2(-level); }

    uint32_t to_host_leaf(uint32_t src) const {
        uint32_t width = 1u << (host_depth - level);
        uint32_t part = src / width, off = src % width;
        return DyadicInterval{cells[part]}.leaf_range(host_depth).first + off;
    }

    // V f = |A|^-1 f(phi^-1) on A and 0 elsewhere
    StepFunction embed(const StepFunction& f) const {
        assert(f.depth == source_depth());
        StepFunction g = StepFunction::zero(host_depth);
        Rational c = 1 / measure();
        for (uint32_t i = 0; i < f.v.size(); ++i)
            if (f.v[i] != 0) g.v[to_host_leaf(i)] = f.v[i] * c;
        return g;
    }

    // V^-1 R_A g = |A| (g on A, pulled back)
    StepFunction restrict(const StepFunction& g) const {
        assert(g.depth == host_depth);
        StepFunction f = StepFunction::zero(source_depth());
        Rational c = measure();
        for (uint32_t i = 0; i < f.v.size(); ++i) f.v[i] = g.v[to_host_leaf(i)] * c;
        return f;
    }
};

// S = (V^-1 R_A) T V on the shallow grid; the transfer pair has constant one
inline L1Operator restrict_conjugate(const L1Operator& T, const GridRestriction& r) {
    assert(T.depth == r.host_depth);
    int d = r.source_depth();
    L1Operator s = L1Operator::zero(d);
    for (uint32_t J = 1; J <= s.dim(); ++J) {
        StepFunction hj = StepFunction::haar(DyadicInterval{J}, d);
        hj.scale(1 / DyadicInterval{J}.measure());
        StepFunction w = r.restrict(T.apply(r.embed(hj)));
        HaarCoeffs c = haar_analysis(w);
        for (uint32_t I = 1; I <= s.dim(); ++I) {
            Rational val = c.at(I) * DyadicInterval{I}.measure();
            if (val != 0) s.at(I, J) = val;
        }
    }
    return s;
}

// outer-factor restriction of a mixed operator: (V^-1 R_A x Id) T (V x Id)
inline MixedOperator restrict_conjugate(const MixedOperator& T, const GridRestriction& r) {
    assert(T.n == r.host_depth);
    int d = r.source_depth();
    uint32_t id = T.inner_dim();
    MixedOperator s = MixedOperator::zero(d, T.m);
    for (uint32_t J = 1; J <= (1u << d); ++J) {
        StepFunction hj = StepFunction::haar(DyadicInterval{J}, d);
        hj.scale(1 / DyadicInterval{J}.measure());
        StepFunction ho = r.embed(hj);
        for (uint32_t M = 1; M <= id; ++M) {
            MixedFunction w = T.apply(tensor(ho, StepFunction::haar(DyadicInterval{M}, T.m)));
            MixedFunction wp = map_outer(w, d, [&](const StepFunction& g) { return r.restrict(g); });
            std::vector<Rational> c = joint_analysis(wp);
            for (uint32_t I = 1; I <= (1u << d); ++I)
                for (uint32_t L = 1; L <= id; ++L) {
                    Rational val = c[size_t(I - 1) * id + (L - 1)] * DyadicInterval{I}.measure() *
                                   DyadicInterval{L}.measure();
                    if (val != 0) s.block_ref(L, M).at(I, J) = val;
                }
        }
    }
    s.prune();
    return s;
}

// ---------------------------------------------------------------------------
// Conjugation by faithful copies on one or both factors
// ---------------------------------------------------------------------------
inline MixedFunction mixed_transfer_apply(const FaithfulHaarSystem& osys,
                                          const FaithfulHaarSystem& isys, const MixedFunction& u) {
    MixedFunction t =
        map_outer(u, osys.host_depth, [&](const StepFunction& f) { return transfer_apply(osys, f); });
    return map_inner(t, isys.host_depth,
                     [&](const StepFunction& f) { return transfer_apply(isys, f); });
}

inline MixedFunction mixed_reduction_apply(const FaithfulHaarSystem& osys,
                                           const FaithfulHaarSystem& isys, const MixedFunction& u) {
    MixedFunction t =
        map_outer(u, osys.depth, [&](const StepFunction& f) { return reduction_apply(osys, f); });
    return map_inner(t, isys.depth,
                     [&](const StepFunction& f) { return reduction_apply(isys, f); });
}

namespace detail {

// compression of T by faithful systems on the chosen legs (null = keep leg)
inline MixedOperator mixed_conjugate_worker(const MixedOperator& T, const FaithfulHaarSystem* o,
                                            const FaithfulHaarSystem* i) {
    if (o) assert(T.n == o->host_depth);
    if (i) assert(T.m == i->host_depth);
    int no = o ? o->depth : T.n;
    int mi = i ? i->depth : T.m;
    uint32_t od = 1u << no, id = 1u << mi;
    MixedOperator s = MixedOperator::zero(no, mi);
    for (uint32_t J = 1; J <= od; ++J) {
        StepFunction hj = StepFunction::haar(DyadicInterval{J}, no);
        hj.scale(1 / DyadicInterval{J}.measure());
        StepFunction uo = o ? transfer_apply(*o, hj) : hj;
        for (uint32_t M = 1; M <= id; ++M) {
            StepFunction hm = StepFunction::haar(DyadicInterval{M}, mi);
            StepFunction ui = i ? transfer_apply(*i, hm) : hm;
            MixedFunction w = T.apply(tensor(uo, ui));
            if (o)
                w = map_outer(w, no, [&](const StepFunction& g) { return reduction_apply(*o, g); });
            if (i)
                w = map_inner(w, mi, [&](const StepFunction& g) { return reduction_apply(*i, g); });
            std::vector<Rational> c = joint_analysis(w);
            for (uint32_t I = 1; I <= od; ++I)
                for (uint32_t L = 1; L <= id; ++L) {
                    Rational val = c[size_t(I - 1) * id + (L - 1)] * DyadicInterval{I}.measure() *
                                   DyadicInterval{L}.measure();
                    if (val != 0) s.block_ref(L, M).at(I, J) = val;
                }
        }
    }
    s.prune();
    return s;
}

}  // namespace detail

inline MixedOperator mixed_conjugate(const MixedOperator& T, const FaithfulHaarSystem& osys,
                                     const FaithfulHaarSystem& isys) {
    return detail::mixed_conjugate_worker(T, &osys, &isys);
}

inline MixedOperator mixed_conjugate_outer(const MixedOperator& T, const FaithfulHaarSystem& osys) {
    return detail::mixed_conjugate_worker(T, &osys, nullptr);
}

inline MixedOperator mixed_conjugate_inner(const MixedOperator& T, const FaithfulHaarSystem& isys) {
    return detail::mixed_conjugate_worker(T, nullptr, &isys);
}

}  // namespace haarfact
