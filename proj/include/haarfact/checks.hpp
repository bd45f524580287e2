#pragma once

// Seeded property suites over random instances, shared by the command-line
// `check-lemmas` runner and the test harness.  Every row reports trial and
// failure counts plus the smallest slack seen; the first failing instance is
// kept in serialized form for replay.

#include <algorithm>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "random_gen.hpp"
#include "serialize.hpp"

namespace haarfact {

struct CheckRow {
    std::string name;
    int trials = 0;
    int failures = 0;
    double worst_margin = std::numeric_limits<double>::infinity();
    std::string detail;  // serialized first counterexample, empty if none

    bool pass() const { return failures == 0; }
};

struct CheckOptions {
    int trials = 200;
    uint64_t seed = 1;
    int max_depth = 6;
    unsigned jobs = 1;
    // test hook: replace the triple-norm sweep by a broken variant that
    // forgets the limit term; the sandwich row must then fail
    bool inject_triple_norm_fault = false;
};

namespace detail {

inline void record_margin(CheckRow& row, const Rational& slack) {
    row.worst_margin = std::min(row.worst_margin, to_double(slack));
}

inline void record_failure(CheckRow& row, const Json& instance, const std::string& note) {
    ++row.failures;
    if (row.detail.empty()) row.detail = note + ": " + instance.dump();
}

// deliberately wrong upward sweep: drops the deepest-entry limit term, so
// constants already expose it (true value |a|, faulty value 0)
inline Rational faulty_triple_norm(const HaarMultiplier& D) {
    Rational best = 0;
    std::function<Rational(uint32_t)> sweep = [&](uint32_t code) -> Rational {
        DyadicInterval I{code};
        bool leaf = !I.is_root() && I.level() == D.depth - 1;
        if (leaf) return Rational(0);
        uint32_t l = I.is_root() ? 2 : 2 * code - 1;
        uint32_t r = I.is_root() ? 2 : 2 * code;
        Rational out;
        for (uint32_t ch : {l, r}) {
            Rational v = rat_abs(D.at(ch) - D.at(code)) + sweep(ch);
            if (v > out) out = v;
            if (l == r) break;
        }
        return out;
    };
    best = sweep(1);
    return best;
}

}  // namespace detail

// ||D|| <= |||D||| <= 3 ||D||, exact, random multipliers at depths 2..max
inline CheckRow check_sandwich(const CheckOptions& opt) {
    CheckRow row;
    row.name = "sandwich";
    if (opt.trials <= 0) return row;
    int depth_lo = 2, depth_hi = std::max(2, opt.max_depth);
    std::vector<CheckRow> slots(size_t(opt.trials));
    parallel_for(size_t(opt.trials), opt.jobs, [&](size_t i) {
        CheckRow& r = slots[i];
        Rng rng(mix_seed(opt.seed, i));
        int depth = depth_lo + int(rng.below(uint64_t(depth_hi - depth_lo + 1)));
        HaarMultiplier d = random_multiplier(depth, rng);
        Rational triple =
            opt.inject_triple_norm_fault ? detail::faulty_triple_norm(d) : triple_norm(d);
        Rational opnorm = l1_multiplier_norm_exact(d);
        r.trials = 1;
        if (triple < opnorm || triple > 3 * opnorm) {
            detail::record_failure(r, Json(d),
                                   "sandwich violated: triple=" + format_rational(triple) +
                                       " opnorm=" + format_rational(opnorm));
            return;
        }
        detail::record_margin(r, triple - opnorm);
        detail::record_margin(r, 3 * opnorm - triple);
    });
    for (auto& r : slots) {
        row.trials += r.trials;
        row.failures += r.failures;
        row.worst_margin = std::min(row.worst_margin, r.worst_margin);
        if (row.detail.empty()) row.detail = r.detail;
    }
    // the identity multiplier is the canonical constant probe; keep it in
    // every run so a broken limit term cannot hide behind random data
    HaarMultiplier id = HaarMultiplier::identity(2);
    Rational triple = opt.inject_triple_norm_fault ? detail::faulty_triple_norm(id)
                                                   : triple_norm(id);
    ++row.trials;
    if (triple < 1 || triple > 3)
        detail::record_failure(row, Json(id),
                               "sandwich violated on the identity: triple=" +
                                   format_rational(triple) + " opnorm=1");
    return row;
}

// chain L1 norm vs entry variation: upper bound exactly, tail lower bound
// with constant 1/3, random coefficient sequences
inline CheckRow check_branch_variation(const CheckOptions& opt) {
    CheckRow row;
    row.name = "branch-variation";
    for (int i = 0; i < opt.trials; ++i) {
        Rng rng(mix_seed(opt.seed ^ 0xb1u, uint64_t(i)));
        size_t len = 1 + rng.below(12);
        std::vector<Rational> a(len + 1);
        for (auto& v : a) v = rng.dyadic(6);
        ++row.trials;

        Rational l1 = chain_l1_norm(a);
        Rational var = chain_variation(a);
        bool ok = l1 <= var;
        Rational slack = var - l1;
        for (size_t m = 0; ok && m <= len; ++m) {
            Rational tail_l1 = chain_l1_tail(a, m);
            Rational tail_var = chain_variation_tail(a, m);
            if (3 * tail_l1 < tail_var) ok = false;
            else slack = std::min(slack, Rational(3 * tail_l1 - tail_var));
        }
        if (!ok) {
            Json j = Json{{"coefficients", a}};
            detail::record_failure(row, j, "variation inequality violated");
        } else {
            detail::record_margin(row, slack);
        }
    }
    return row;
}

// closed-form splitting variance == exhaustive, and Var <= M^2 / N
inline CheckRow check_concentration(const CheckOptions& opt) {
    CheckRow row;
    row.name = "concentration-variance";
    for (int i = 0; i < opt.trials; ++i) {
        Rng rng(mix_seed(opt.seed ^ 0xc0u, uint64_t(i)));
        DoubletonSpace<Rational> g;
        size_t n = 1 + rng.below(12);
        for (size_t k = 0; k < n; ++k) g.pairs.emplace_back(rng.dyadic(5), rng.dyadic(5));
        ++row.trials;

        SplittingStats st = splitting_statistics(g);
        Rational nn{BigInt(n)};
        bool ok = st.exhaustive && st.exhaustive_match && st.variance_bound_ok &&
                  st.variance * nn <= st.bound * st.bound;
        if (!ok) {
            Json pairs = Json::array();
            for (const auto& [x, y] : g.pairs) pairs.push_back(Json{{"a", x}, {"b", y}});
            detail::record_failure(row, pairs, "splitting statistics inconsistent");
        } else {
            detail::record_margin(row, st.bound * st.bound - st.variance * nn);
        }
    }
    return row;
}

// D (x) Id keeps the L1 factor norm in every space; block decomposition is
// inverse to densification
inline CheckRow check_tensor_identity(const CheckOptions& opt) {
    CheckRow row;
    row.name = "tensor-identity";
    const Space spaces[] = {Space::l1(), Space::l2(), Space::lp(Rational(3, 2)),
                            Space::linf()};
    for (int i = 0; i < opt.trials; ++i) {
        Rng rng(mix_seed(opt.seed ^ 0x7eu, uint64_t(i)));
        int n = 1 + int(rng.below(3)), m = 1 + int(rng.below(2));
        HaarMultiplier d = random_multiplier(n, rng, 4);
        const Space& x = spaces[rng.below(4)];
        MixedOperator t =
            tensor_operator(L1Operator::from_multiplier(d), L1Operator::identity(m));
        ++row.trials;

        MixedNormBounds nb = mixed_norm_bounds(t, x);
        Rational want = l1_multiplier_norm_exact(d);
        bool ok = nb.exact && nb.upper.rational_value() == want;

        if (ok) {
            MixedOperator back = block_decompose(n, m, to_dense(t));
            ok = back == t;
        }
        if (!ok) {
            detail::record_failure(row, Json(d), "tensor identity failed in " + x.label());
        } else {
            detail::record_margin(row, 0);
        }
    }
    return row;
}

// factor-bound fold regression plus exact recomputation of icebreaker chains
inline CheckRow check_certificate_algebra(const CheckOptions& opt) {
    CheckRow row;
    row.name = "certificate-algebra";

    // frozen worked example: (1, 0.1) then (2, 0.05) -> (2, 0.25)
    FactorBound a{Bound::exact_rational(1), Bound::exact_rational(Rational(1, 10))};
    FactorBound b{Bound::exact_rational(2), Bound::exact_rational(Rational(1, 20))};
    FactorBound ab = compose_factors(a, b);
    ++row.trials;
    if (ab.c.rational_value() != 2 || ab.eps.rational_value() != Rational(1, 4))
        detail::record_failure(row, Json{{"c", ab.c}, {"eps", ab.eps}},
                               "fold regression failed");

    int chain_trials = std::max(1, opt.trials / 20);
    for (int i = 0; i < chain_trials; ++i) {
        Rng rng(mix_seed(opt.seed ^ 0xcau, uint64_t(i)));
        L1Operator t = random_l1_contraction(4, rng);
        IceCertificate cert = icebreaker(t, Rational(1, 4), 1, {4, mix_seed(opt.seed, i)});
        ++row.trials;
        std::string why;
        if (!cert.verify(&why)) {
            detail::record_failure(row, Json(cert), "chain failed to verify: " + why);
            continue;
        }
        // recomputation matches the claims exactly: re-fold the step errors
        FactorBound fold;
        for (const auto& s : cert.steps) fold = compose_factors(fold, s.fb);
        if (!fold.eps.exact || fold.eps.q != cert.total.eps.q)
            detail::record_failure(row, Json(cert), "recomputed totals differ");
        else
            detail::record_margin(row, Rational(1, 4) - fold.eps.q);
    }
    return row;
}

inline std::vector<CheckRow> run_lemma_checks(const CheckOptions& opt) {
    if (opt.trials <= 0) return {};
    return {check_sandwich(opt), check_branch_variation(opt), check_concentration(opt),
            check_tensor_identity(opt), check_certificate_algebra(opt)};
}

}  // namespace haarfact
