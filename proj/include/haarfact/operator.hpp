#pragma once

#include <functional>
#include <map>
#include <optional>

#include "multiplier.hpp"

namespace haarfact {

// thrown when a construction cannot fit into the available grid depth
struct depth_budget_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense operator on depth-n L1 in the Haar pairing convention
//
//   m[I][J] = <h_I, T(|J|^-1 h_J)>        (codes index rows/columns)
//
// so multipliers are diagonal and composition is the plain matrix product.
struct L1Operator {
    int depth = 0;
    std::vector<Rational> m = std::vector<Rational>(1);  // dim*dim row-major

    uint32_t dim() const { return 1u << depth; }

    static L1Operator zero(int depth) {
        L1Operator t;
        t.depth = depth;
        t.m.assign(static_cast<size_t>(1) << (2 * depth), Rational(0));
        return t;
    }

    static L1Operator identity(int depth) {
        L1Operator t = zero(depth);
        for (uint32_t c = 1; c <= t.dim(); ++c) t.at(c, c) = 1;
        return t;
    }

    static L1Operator from_multiplier(const HaarMultiplier& d) {
        L1Operator t = zero(d.depth);
        for (uint32_t c = 1; c <= t.dim(); ++c) t.at(c, c) = d.at(c);
        return t;
    }

    Rational& at(uint32_t ci, uint32_t cj) { return m[size_t(ci - 1) * dim() + (cj - 1)]; }
    const Rational& at(uint32_t ci, uint32_t cj) const {
        return m[size_t(ci - 1) * dim() + (cj - 1)];
    }

    bool is_diagonal() const {
        for (uint32_t i = 1; i <= dim(); ++i)
            for (uint32_t j = 1; j <= dim(); ++j)
                if (i != j && at(i, j) != 0) return false;
        return true;
    }

    HaarMultiplier diagonal_part() const {
        HaarMultiplier d = HaarMultiplier::zeros(depth);
        for (uint32_t c = 1; c <= dim(); ++c) d.at(c) = at(c, c);
        return d;
    }

    // action on expansion coefficients (f = sum c_J h_J convention):
    // c'_I = |I|^-1 sum_J m[I][J] |J| c_J
    std::vector<Rational> apply_coeffs(const std::vector<Rational>& c) const {
        assert(c.size() == dim());
        std::vector<Rational> ct(dim());
        for (uint32_t j = 1; j <= dim(); ++j) ct[j - 1] = c[j - 1] * DyadicInterval{j}.measure();
        std::vector<Rational> out(dim());
        for (uint32_t i = 1; i <= dim(); ++i) {
            Rational y = 0;
            const Rational* row = &m[size_t(i - 1) * dim()];
            for (uint32_t j = 0; j < dim(); ++j) {
                if (ct[j] != 0 && row[j] != 0) y += row[j] * ct[j];
            }
            out[i - 1] = y / DyadicInterval{i}.measure();
        }
        return out;
    }

    StepFunction apply(const StepFunction& f) const {
        assert(f.depth == depth);
        HaarCoeffs c = haar_analysis(f);
        HaarCoeffs out{depth, apply_coeffs(c.c)};
        return haar_synthesis(out);
    }

    // leading submatrix: conjugation by the canonical coarsening pair
    // (inclusion of the coarser grid, conditional expectation back)
    L1Operator truncated(int new_depth) const {
        assert(new_depth <= depth);
        L1Operator t = zero(new_depth);
        for (uint32_t i = 1; i <= t.dim(); ++i)
            for (uint32_t j = 1; j <= t.dim(); ++j) t.at(i, j) = at(i, j);
        return t;
    }

    L1Operator compose(const L1Operator& inner) const {  // this after inner
        assert(depth == inner.depth);
        L1Operator r = zero(depth);
        for (uint32_t i = 0; i < dim(); ++i) {
            for (uint32_t k = 0; k < dim(); ++k) {
                const Rational& a = m[size_t(i) * dim() + k];
                if (a == 0) continue;
                for (uint32_t j = 0; j < dim(); ++j) {
                    const Rational& b = inner.m[size_t(k) * dim() + j];
                    if (b != 0) r.m[size_t(i) * dim() + j] += a * b;
                }
            }
        }
        return r;
    }

    L1Operator& operator+=(const L1Operator& o) {
        assert(depth == o.depth);
        for (size_t i = 0; i < m.size(); ++i) m[i] += o.m[i];
        return *this;
    }

    L1Operator& operator-=(const L1Operator& o) {
        assert(depth == o.depth);
        for (size_t i = 0; i < m.size(); ++i) m[i] -= o.m[i];
        return *this;
    }

    L1Operator operator-(const L1Operator& o) const {
        L1Operator r = *this;
        r -= o;
        return r;
    }

    L1Operator operator+(const L1Operator& o) const {
        L1Operator r = *this;
        r += o;
        return r;
    }

    L1Operator& scale(const Rational& c) {
        for (auto& x : m) x *= c;
        return *this;
    }

    bool operator==(const L1Operator& o) const { return depth == o.depth && m == o.m; }
};

// ||T||_{L1->L1} exactly: the maximum of ||T e||_1 over the extreme points
// e = +-|K|^-1 chi_K of the unit ball, K a depth-n leaf.  The Haar expansion
// of e is supported on K's chain with coefficients theta |J|^-1, so each
// image needs one sparse column combination.
inline Rational l1_operator_norm_exact(const L1Operator& T) {
    int n = T.depth;
    Rational best = 0;
    for (uint32_t leaf = 0; leaf < (1u << n); ++leaf) {
        Chain ch = chain_to(DyadicInterval::from_level_pos(n, leaf).parent());
        HaarCoeffs out = HaarCoeffs::zero(n);
        // theta sign of the final step leaf <- parent
        int last_theta = (leaf % 2 == 0) ? 1 : -1;
        for (uint32_t i = 1; i <= T.dim(); ++i) {
            Rational y = 0;
            for (size_t k = 0; k < ch.codes.size(); ++k) {
                const Rational& v = T.at(i, ch.codes[k]);
                if (v == 0) continue;
                int theta = (k + 1 < ch.codes.size()) ? ch.signs[k] : last_theta;
                y += theta > 0 ? v : -v;
            }
            out.at(i) = y / DyadicInterval{i}.measure();
        }
        Rational norm = haar_synthesis(out).l1_norm();
        if (norm > best) best = norm;
    }
    return best;
}

struct NearestMultiplier {
    HaarMultiplier diag;
    Rational offdiag_bound;  // certified: ||T - diag|| <= offdiag_bound
};

// Diagonal part plus a sound off-diagonal bound: max over deepest-level
// intervals L of the summed off-diagonal column masses along L's chain.
inline NearestMultiplier nearest_multiplier(const L1Operator& T) {
    NearestMultiplier r;
    r.diag = T.diagonal_part();
    std::vector<Rational> colmass(T.dim(), Rational(0));
    for (uint32_t j = 1; j <= T.dim(); ++j) {
        for (uint32_t i = 1; i <= T.dim(); ++i) {
            if (i != j) colmass[j - 1] += rat_abs(T.at(i, j));
        }
    }
    r.offdiag_bound = 0;
    if (T.depth == 0) return r;
    auto [lo, hi] = level_code_range(T.depth - 1);
    for (uint32_t c = lo; c <= hi; ++c) {
        Rational s = 0;
        for (uint32_t code : chain_to(DyadicInterval{c}).codes) s += colmass[code - 1];
        if (s > r.offdiag_bound) r.offdiag_bound = s;
    }
    return r;
}

// ----- faithful Haar systems ---------------------------------------------------
//
// A depth-d Haar-like system inside a host grid (optionally inside a genuine
// host interval `root`).  Output node iota carries
//
//   htilde_iota = sum over blocks B of sign_B h_B
//
// with all blocks of one node at a single reserved host level (one level per
// output rank: rank 0 for node 1, 1 + output level otherwise).  Required
// supports: nodes 1 and 2 fill the root interval; the output children of node
// c live on { htilde_1 htilde_c = +1 } (left) and { = -1 } (right).  Distinct
// levels give exact biorthogonality; the product structure makes the tuple
// (htilde_1 htilde_iota)_iota distributed like the canonical Haar tuple, which
// is the isometry certificate for every rearrangement-invariant norm.
struct FaithfulHaarSystem {
    int host_depth = 0;
    int depth = 0;           // output depth d >= 1; nodes 1..2^d
    DyadicInterval root;     // code 1 or 2: the full interval

    struct Node {
        int host_level = 0;
        std::vector<uint32_t> blocks;
        std::vector<int8_t> signs;
    };
    std::vector<Node> nodes;  // index iota-1

    uint32_t node_total() const { return 1u << depth; }

    int root_level() const { return root.is_root() ? 0 : root.level(); }

    Rational root_measure() const { return root.is_root() ? Rational(1) : root.measure(); }

    StepFunction tilde(uint32_t iota) const {
        const Node& nd = nodes[iota - 1];
        StepFunction f = StepFunction::zero(host_depth);
        for (size_t b = 0; b < nd.blocks.size(); ++b) {
            DyadicInterval B{nd.blocks[b]};
            auto [llo, lhi] = B.left().leaf_range(host_depth);
            auto [rlo, rhi] = B.right().leaf_range(host_depth);
            Rational s{nd.signs[b]};
            for (uint32_t i = llo; i < lhi; ++i) f.v[i] = s;
            for (uint32_t i = rlo; i < rhi; ++i) f.v[i] = -s;
        }
        return f;
    }
};

namespace detail {

inline int faithful_rank(uint32_t iota) {
    return iota == 1 ? 0 : 1 + DyadicInterval{iota}.level();
}

}  // namespace detail

struct FaithfulBuildOptions {
    int base = 2;     // clamped down to fit the host depth
    int stride = 1;
    int tries = 16;   // random sign draws per node, beyond the all-ones start
    uint64_t seed = 1;
};

// penalty to minimize when choosing a node's signs; nullptr = keep all-ones
using SignScore =
    std::function<double(uint32_t iota, const StepFunction& candidate_tilde)>;

inline FaithfulHaarSystem build_faithful_system(int host_depth, int d, DyadicInterval root,
                                                const FaithfulBuildOptions& opt = {},
                                                const SignScore& score = nullptr) {
    assert(d >= 1);
    FaithfulHaarSystem sys;
    sys.host_depth = host_depth;
    sys.depth = d;
    sys.root = root;

    int rl = sys.root_level();
    int base = opt.base;
    int room = host_depth - 1 - rl - 1 - d * opt.stride;
    if (base > room) base = room;
    if (base < 0) {
        throw depth_budget_error("faithful system needs host depth >= root level + 2 + d*stride, have host " +
                                 std::to_string(host_depth));
    }

    uint32_t host_leaves = 1u << host_depth;
    std::vector<std::vector<int8_t>> tilde_vals;  // cached candidate-free values
    tilde_vals.reserve(1u << d);
    sys.nodes.resize(1u << d);

    auto [root_lo, root_hi] = root.leaf_range(host_depth);

    for (uint32_t iota = 1; iota <= sys.node_total(); ++iota) {
        int level = rl + base + 1 + detail::faithful_rank(iota) * opt.stride;
        // required support as a host-leaf mask
        std::vector<uint8_t> support(host_leaves, 0);
        if (iota <= 2) {
            for (uint32_t i = root_lo; i < root_hi; ++i) support[i] = 1;
        } else {
            uint32_t parent = DyadicInterval{iota}.parent().code;
            int8_t want = (DyadicInterval{parent}.left().code == iota) ? 1 : -1;
            const auto& p1 = tilde_vals[0];
            const auto& pp = tilde_vals[parent - 1];
            for (uint32_t i = 0; i < host_leaves; ++i) {
                if (p1[i] * pp[i] == want) support[i] = 1;
            }
        }

        std::vector<uint32_t> blocks;
        auto [clo, chi] = level_code_range(level);
        for (uint32_t c = clo; c <= chi; ++c) {
            auto [blo, bhi] = DyadicInterval{c}.leaf_range(host_depth);
            bool inside = true;
            for (uint32_t i = blo; i < bhi && inside; ++i) inside = support[i];
            if (inside) blocks.push_back(c);
        }
        assert(!blocks.empty());

        // sign search: all-ones first, then seeded random draws
        FaithfulHaarSystem::Node best;
        best.host_level = level;
        best.blocks = blocks;
        best.signs.assign(blocks.size(), 1);
        if (score) {
            sys.nodes[iota - 1] = best;
            double best_pen = score(iota, sys.tilde(iota));
            Rng rng(mix_seed(opt.seed, iota));
            for (int t = 0; t < opt.tries; ++t) {
                FaithfulHaarSystem::Node cand = best;
                for (auto& s : cand.signs) s = static_cast<int8_t>(rng.sign());
                sys.nodes[iota - 1] = cand;
                double pen = score(iota, sys.tilde(iota));
                if (pen < best_pen) {
                    best_pen = pen;
                    best = cand;
                }
            }
        }
        sys.nodes[iota - 1] = best;

        // cache values for the support computations of later nodes
        StepFunction tf = sys.tilde(iota);
        std::vector<int8_t> vals(host_leaves);
        for (uint32_t i = 0; i < host_leaves; ++i) {
            vals[i] = tf.v[i] == 0 ? 0 : (tf.v[i] > 0 ? 1 : -1);
        }
        tilde_vals.push_back(std::move(vals));
    }
    return sys;
}

struct FaithfulCheck {
    bool ok = true;
    std::string reason;
};

// exact structural predicate (block levels, disjointness, supports, halving)
inline FaithfulCheck faithful_check(const FaithfulHaarSystem& sys) {
    auto fail = [](std::string why) { return FaithfulCheck{false, std::move(why)}; };
    if (sys.depth < 1) return fail("depth must be >= 1");
    if (sys.nodes.size() != sys.node_total()) return fail("node count mismatch");
    uint32_t host_leaves = 1u << sys.host_depth;
    auto [root_lo, root_hi] = sys.root.leaf_range(sys.host_depth);

    std::vector<std::vector<int8_t>> vals;
    std::map<int, uint32_t> level_of_rank;
    for (uint32_t iota = 1; iota <= sys.node_total(); ++iota) {
        const auto& nd = sys.nodes[iota - 1];
        if (nd.blocks.size() != nd.signs.size() || nd.blocks.empty()) {
            return fail("node " + std::to_string(iota) + ": malformed blocks");
        }
        if (nd.host_level > sys.host_depth - 1) {
            return fail("node " + std::to_string(iota) + ": blocks too deep for the host grid");
        }
        int rank = detail::faithful_rank(iota);
        auto it = level_of_rank.find(rank);
        if (it == level_of_rank.end()) {
            for (auto& [r, lv] : level_of_rank) {
                if (static_cast<int>(lv) == nd.host_level && r != rank) {
                    return fail("distinct ranks share a host level");
                }
            }
            level_of_rank[rank] = nd.host_level;
        } else if (static_cast<int>(it->second) != nd.host_level) {
            return fail("node " + std::to_string(iota) + ": level differs within its rank");
        }

        std::vector<uint8_t> covered(host_leaves, 0);
        for (size_t b = 0; b < nd.blocks.size(); ++b) {
            DyadicInterval B{nd.blocks[b]};
            if (B.code == 1 || B.level() != nd.host_level) {
                return fail("node " + std::to_string(iota) + ": block off its level");
            }
            if (nd.signs[b] != 1 && nd.signs[b] != -1) {
                return fail("node " + std::to_string(iota) + ": sign not +-1");
            }
            auto [blo, bhi] = B.leaf_range(sys.host_depth);
            if (blo < root_lo || bhi > root_hi) {
                return fail("node " + std::to_string(iota) + ": block outside the root interval");
            }
            for (uint32_t i = blo; i < bhi; ++i) {
                if (covered[i]) return fail("node " + std::to_string(iota) + ": overlapping blocks");
                covered[i] = 1;
            }
        }

        // support identities
        DyadicInterval out{iota};
        Rational want_measure = sys.root_measure() * (iota <= 2 ? Rational(1) : out.measure());
        Rational have = Rational(std::count(covered.begin(), covered.end(), 1)) * pow2(-sys.host_depth);
        if (have != want_measure) {
            return fail("node " + std::to_string(iota) + ": support measure mismatch");
        }
        if (iota <= 2) {
            for (uint32_t i = root_lo; i < root_hi; ++i) {
                if (!covered[i]) return fail("node " + std::to_string(iota) + ": must fill the root interval");
            }
        } else {
            uint32_t parent = out.parent().code;
            int8_t want = (DyadicInterval{parent}.left().code == iota) ? 1 : -1;
            for (uint32_t i = 0; i < host_leaves; ++i) {
                bool in = vals[0][i] * vals[parent - 1][i] == want;
                if (in != static_cast<bool>(covered[i])) {
                    return fail("node " + std::to_string(iota) + ": support != parent product set");
                }
            }
        }

        StepFunction tf = sys.tilde(iota);
        std::vector<int8_t> v(host_leaves);
        for (uint32_t i = 0; i < host_leaves; ++i) v[i] = tf.v[i] == 0 ? 0 : (tf.v[i] > 0 ? 1 : -1);
        vals.push_back(std::move(v));
    }
    return {};
}

// exact Gram identities <htilde_i, htilde_j> = delta_ij |root| |J_out|
inline bool biorthogonality_check(const FaithfulHaarSystem& sys) {
    std::vector<StepFunction> t;
    for (uint32_t iota = 1; iota <= sys.node_total(); ++iota) t.push_back(sys.tilde(iota));
    for (uint32_t i = 1; i <= sys.node_total(); ++i) {
        for (uint32_t j = i; j <= sys.node_total(); ++j) {
            Rational want = 0;
            if (i == j) {
                DyadicInterval out{i};
                want = sys.root_measure() * (i == 1 ? Rational(1) : out.measure());
            }
            if (inner(t[i - 1], t[j - 1]) != want) return false;
        }
    }
    return true;
}

// The multiset of ((htilde_1 htilde_iota)(x))_{iota>=2} tuples, weighted by
// normalized cell measure, must match the canonical Haar tuples at depth d.
// This is the exact isometry certificate (rearrangement invariance).
inline bool distribution_isometry_check(const FaithfulHaarSystem& sys) {
    uint32_t host_leaves = 1u << sys.host_depth;
    std::vector<StepFunction> t;
    for (uint32_t iota = 1; iota <= sys.node_total(); ++iota) t.push_back(sys.tilde(iota));

    auto sign_of = [](const Rational& v) -> int8_t {
        return v == 0 ? int8_t(0) : (v > 0 ? int8_t(1) : int8_t(-1));
    };

    std::map<std::vector<int8_t>, Rational> got, want;
    auto [root_lo, root_hi] = sys.root.leaf_range(sys.host_depth);
    Rational cell = pow2(-sys.host_depth) / sys.root_measure();
    for (uint32_t x = root_lo; x < root_hi && x < host_leaves; ++x) {
        std::vector<int8_t> tuple;
        tuple.reserve(sys.node_total() - 1);
        int8_t s1 = sign_of(t[0].v[x]);
        for (uint32_t iota = 2; iota <= sys.node_total(); ++iota) {
            tuple.push_back(static_cast<int8_t>(s1 * sign_of(t[iota - 1].v[x])));
        }
        got[tuple] += cell;
    }
    for (uint32_t y = 0; y < (1u << sys.depth); ++y) {
        std::vector<int8_t> tuple;
        tuple.reserve(sys.node_total() - 1);
        for (uint32_t iota = 2; iota <= sys.node_total(); ++iota) {
            StepFunction h = StepFunction::haar(DyadicInterval{iota}, sys.depth);
            tuple.push_back(sign_of(h.v[y]));
        }
        want[tuple] += pow2(-sys.depth);
    }
    return got == want;
}

// A f = |root|^-1 sum_J c_J(f) htilde_J : output L1 -> host L1, isometric
inline StepFunction transfer_apply(const FaithfulHaarSystem& sys, const StepFunction& f) {
    assert(f.depth == sys.depth);
    HaarCoeffs c = haar_analysis(f);
    StepFunction g = StepFunction::zero(sys.host_depth);
    for (uint32_t iota = 1; iota <= sys.node_total(); ++iota) {
        if (c.at(iota) == 0) continue;
        StepFunction t = sys.tilde(iota);
        t.scale(c.at(iota));
        g += t;
    }
    g.scale(1 / sys.root_measure());
    return g;
}

// A^-1 P g = sum_J ( <htilde_J, g> / |J| ) h_J : host L1 -> output L1, norm one
inline StepFunction reduction_apply(const FaithfulHaarSystem& sys, const StepFunction& g) {
    assert(g.depth == sys.host_depth);
    HaarCoeffs c = HaarCoeffs::zero(sys.depth);
    for (uint32_t iota = 1; iota <= sys.node_total(); ++iota) {
        DyadicInterval out{iota};
        Rational meas = iota == 1 ? Rational(1) : out.measure();
        c.at(iota) = inner(sys.tilde(iota), g) / meas;
    }
    return haar_synthesis(c);
}

// conjugation S = (A^-1 P) T A, computed exactly:
//   S[I][J] = <htilde_I, T( |J|^-1 |root|^-1 htilde_J )>
inline L1Operator conjugate_by_system(const L1Operator& T, const FaithfulHaarSystem& sys) {
    assert(T.depth == sys.host_depth);
    L1Operator S = L1Operator::zero(sys.depth);
    for (uint32_t j = 1; j <= sys.node_total(); ++j) {
        DyadicInterval out{j};
        Rational meas = j == 1 ? Rational(1) : out.measure();
        StepFunction u = sys.tilde(j);
        u.scale(1 / (meas * sys.root_measure()));
        StepFunction tu = T.apply(u);
        for (uint32_t i = 1; i <= sys.node_total(); ++i) {
            S.at(i, j) = inner(sys.tilde(i), tu);
        }
    }
    return S;
}

// exact operator norms of the two transfer legs (both 1 for a valid system)
inline Rational transfer_norm_exact(const FaithfulHaarSystem& sys) {
    Rational best = 0;
    int d = sys.depth;
    for (uint32_t leaf = 0; leaf < (1u << d); ++leaf) {
        DyadicInterval K = DyadicInterval::from_level_pos(d, leaf);
        StepFunction e = StepFunction::indicator(K, d);
        e.scale(1 / K.measure());
        Rational v = transfer_apply(sys, e).l1_norm();
        if (v > best) best = v;
    }
    return best;
}

inline Rational reduction_norm_exact(const FaithfulHaarSystem& sys) {
    Rational best = 0;
    for (uint32_t leaf = 0; leaf < (1u << sys.host_depth); ++leaf) {
        DyadicInterval K = DyadicInterval::from_level_pos(sys.host_depth, leaf);
        StepFunction e = StepFunction::indicator(K, sys.host_depth);
        e.scale(1 / K.measure());
        Rational v = reduction_apply(sys, e).l1_norm();
        if (v > best) best = v;
    }
    return best;
}

}  // namespace haarfact
