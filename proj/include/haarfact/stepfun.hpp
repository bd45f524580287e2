#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dyadic.hpp"
#include "rational.hpp"
#include "rng.hpp"

namespace haarfact {

// Function constant on the 2^depth dyadic leaves of [0,1); exact values.
struct StepFunction {
    int depth = 0;
    std::vector<Rational> v = std::vector<Rational>(1);  // size 2^depth, leaf order

    static StepFunction zero(int depth) { return {depth, std::vector<Rational>(1u << depth)}; }

    static StepFunction constant(int depth, Rational c) {
        return {depth, std::vector<Rational>(1u << depth, std::move(c))};
    }

    static StepFunction indicator(DyadicInterval I, int depth) {
        StepFunction f = zero(depth);
        auto [lo, hi] = I.leaf_range(depth);
        for (uint32_t i = lo; i < hi; ++i) f.v[i] = 1;
        return f;
    }

    // h_root = constant 1; otherwise +1 on the left half, -1 on the right
    static StepFunction haar(DyadicInterval I, int depth) {
        if (I.is_root()) return constant(depth, 1);
        StepFunction f = zero(depth);
        auto [llo, lhi] = I.left().leaf_range(depth);
        auto [rlo, rhi] = I.right().leaf_range(depth);
        for (uint32_t i = llo; i < lhi; ++i) f.v[i] = 1;
        for (uint32_t i = rlo; i < rhi; ++i) f.v[i] = -1;
        return f;
    }

    StepFunction refined(int new_depth) const {
        assert(new_depth >= depth);
        StepFunction f = zero(new_depth);
        uint32_t w = 1u << (new_depth - depth);
        for (uint32_t i = 0; i < v.size(); ++i)
            for (uint32_t k = 0; k < w; ++k) f.v[i * w + k] = v[i];
        return f;
    }

    StepFunction& operator+=(const StepFunction& o) {
        assert(depth == o.depth);
        for (size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }

    StepFunction& operator-=(const StepFunction& o) {
        assert(depth == o.depth);
        for (size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
        return *this;
    }

    StepFunction& scale(const Rational& c) {
        for (auto& x : v) x *= c;
        return *this;
    }

    StepFunction operator+(const StepFunction& o) const {
        StepFunction r = *this;
        r += o;
        return r;
    }

    StepFunction operator-(const StepFunction& o) const {
        StepFunction r = *this;
        r -= o;
        return r;
    }

    bool operator==(const StepFunction& o) const { return depth == o.depth && v == o.v; }

    Rational integral() const {
        Rational s = 0;
        for (const auto& x : v) s += x;
        return s * pow2(-depth);
    }

    Rational l1_norm() const {
        Rational s = 0;
        for (const auto& x : v) s += rat_abs(x);
        return s * pow2(-depth);
    }

    Rational linf_norm() const {
        Rational m = 0;
        for (const auto& x : v) {
            Rational a = rat_abs(x);
            if (a > m) m = a;
        }
        return m;
    }
};

inline StepFunction pointwise_product(const StepFunction& f, const StepFunction& g) {
    assert(f.depth == g.depth);
    StepFunction r = f;
    for (size_t i = 0; i < r.v.size(); ++i) r.v[i] *= g.v[i];
    return r;
}

inline Rational inner(const StepFunction& f, const StepFunction& g) {
    assert(f.depth == g.depth);
    Rational s = 0;
    for (size_t i = 0; i < f.v.size(); ++i) s += f.v[i] * g.v[i];
    return s * pow2(-f.depth);
}

// Coefficients c indexed by code-1 in the expansion f = sum_code c[code] h_code;
// equivalently c_I = <h_I, f> / |I| for genuine I and c_root = integral(f).
struct HaarCoeffs {
    int depth = 0;
    std::vector<Rational> c = std::vector<Rational>(1);  // size 2^depth

    static HaarCoeffs zero(int depth) { return {depth, std::vector<Rational>(1u << depth)}; }

    Rational& at(uint32_t code) { return c[code - 1]; }
    const Rational& at(uint32_t code) const { return c[code - 1]; }
};

inline HaarCoeffs haar_analysis(const StepFunction& f) {
    int n = f.depth;
    HaarCoeffs out = HaarCoeffs::zero(n);
    std::vector<Rational> avg = f.v;
    for (int j = n - 1; j >= 0; --j) {
        for (uint32_t i = 0; i < (1u << j); ++i) {
            Rational a = (avg[2 * i] + avg[2 * i + 1]) / 2;
            out.c[(1u << j) + i] = (avg[2 * i] - avg[2 * i + 1]) / 2;  // code 2^j+i+1
            avg[i] = std::move(a);
        }
    }
    out.c[0] = avg[0];
    return out;
}

inline StepFunction haar_synthesis(const HaarCoeffs& coeffs) {
    int n = coeffs.depth;
    std::vector<Rational> vals(1, coeffs.c[0]);
    for (int j = 0; j < n; ++j) {
        std::vector<Rational> next(1u << (j + 1));
        for (uint32_t i = 0; i < (1u << j); ++i) {
            const Rational& d = coeffs.c[(1u << j) + i];
            next[2 * i] = vals[i] + d;
            next[2 * i + 1] = vals[i] - d;
        }
        vals = std::move(next);
    }
    return {n, std::move(vals)};
}

// Expansion of |I|^-1 chi_I along the chain to I: with I_0 = root, ..., I_k0 = I
// and signs theta, the coefficient of h_{I_k} is theta_k / |I_k| for k < k0.
inline HaarCoeffs normalized_indicator_coeffs(DyadicInterval I, int depth) {
    assert(I.is_root() || I.level() <= depth);
    HaarCoeffs out = HaarCoeffs::zero(depth);
    if (I.is_root()) {  // chi_root is the constant h_root itself
        out.at(1) = 1;
        return out;
    }
    Chain ch = chain_to(I);
    for (size_t k = 0; k + 1 < ch.codes.size(); ++k) {
        DyadicInterval Ik{ch.codes[k]};
        out.at(Ik.code) = Rational(ch.signs[k]) / Ik.measure();
    }
    return out;
}

// L_p over [0,1), 1 <= p <= inf; rational p so the normalizer exponents are
// exact.  mu_A = |A|^(-1/p) normalizes indicators/Haar functions in the space,
// nu_A = |A|^(-1/p') in the dual; mu_A nu_A = |A|^-1 always.
class Space {
  public:
    static Space lp(Rational p) {
        if (p < 1) throw std::invalid_argument("Lp space needs p >= 1");
        Space s;
        s.p_ = std::move(p);
        s.inf_ = false;
        return s;
    }

    static Space l1() { return lp(Rational(1)); }
    static Space l2() { return lp(Rational(2)); }

    static Space linf() {
        Space s;
        s.inf_ = true;
        return s;
    }

    bool is_linf() const { return inf_; }
    bool is_l1() const { return !inf_ && p_ == 1; }

    const Rational& p() const {
        assert(!inf_);
        return p_;
    }

    std::string label() const {
        if (inf_) return "Linf";
        if (denominator(p_) == 1) return "L" + numerator(p_).str();
        return "Lp:" + format_rational(p_);
    }

    bool operator==(const Space& o) const { return inf_ == o.inf_ && p_ == o.p_; }

    // log2 of mu_A / nu_A for |A| = 2^-level (level 0 for the root symbol)
    Rational mu_log2(int level) const {
        if (inf_) return Rational(0);
        return Rational(level) / p_;
    }

    Rational nu_log2(int level) const {
        if (inf_) return Rational(level);
        return Rational(level) * (1 - 1 / p_);
    }

    DyadPow mu(DyadicInterval A) const { return DyadPow::from_log2(mu_log2(-A.log2_measure())); }
    DyadPow nu(DyadicInterval A) const { return DyadPow::from_log2(nu_log2(-A.log2_measure())); }

    bool exact_norms() const { return inf_ || p_ == 1; }

    Rational norm_exact(const StepFunction& f) const {
        assert(exact_norms());
        return inf_ ? f.linf_norm() : f.l1_norm();
    }

    double norm(const StepFunction& f) const {
        if (inf_) return to_double(f.linf_norm());
        if (p_ == 1) return to_double(f.l1_norm());
        double pd = to_double(p_);
        double s = 0.0;
        for (const auto& x : f.v) s += std::pow(std::fabs(to_double(x)), pd);
        s *= std::exp2(static_cast<double>(-f.depth));
        return std::pow(s, 1.0 / pd);
    }

  private:
    Rational p_ = 1;
    bool inf_ = false;
};

// r_k = sum of all level-k Haar functions; needs grid depth >= k+1
inline StepFunction rademacher(int k, int depth) {
    assert(depth >= k + 1);
    StepFunction f = StepFunction::zero(depth);
    uint32_t half = 1u << (depth - k - 1);
    for (uint32_t i = 0; i < f.v.size(); ++i) f.v[i] = ((i / half) % 2 == 0) ? 1 : -1;
    return f;
}

struct RademacherReport {
    double constant = 0.0;
    std::string argmin;
    int n = 0;
};

// Diagnostic (heuristic, not a certificate): smallest ratio
// ||sum a_k r_k||_X / sum |a_k| found over a fixed probe family.
inline RademacherReport rademacher_l1_constant(const Space& space, int n, uint64_t seed = 1,
                                               int tries = 32) {
    assert(n >= 1);
    int depth = n + 1;
    std::vector<StepFunction> r;
    r.reserve(n);
    for (int k = 1; k <= n; ++k) r.push_back(rademacher(k, depth));

    RademacherReport rep;
    rep.n = n;
    rep.constant = -1.0;
    auto consider = [&](const std::vector<Rational>& a, const std::string& label) {
        Rational denom = 0;
        StepFunction f = StepFunction::zero(depth);
        for (int k = 0; k < n; ++k) {
            denom += rat_abs(a[k]);
            StepFunction t = r[k];
            t.scale(a[k]);
            f += t;
        }
        if (denom == 0) return;
        double ratio = space.norm(f) / to_double(denom);
        if (rep.constant < 0 || ratio < rep.constant) {
            rep.constant = ratio;
            rep.argmin = label;
        }
    };

    std::vector<Rational> a(n, Rational(1));
    consider(a, "all-ones");
    for (int k = 0; k < n; ++k) a[k] = (k % 2 == 0) ? 1 : -1;
    consider(a, "alternating");
    std::fill(a.begin(), a.end(), Rational(0));
    a[0] = 1;
    consider(a, "singleton");

    Rng rng(seed);
    for (int t = 0; t < tries; ++t) {
        for (int k = 0; k < n; ++k) a[k] = Rational(rng.sign());
        consider(a, "random-signs");
        for (int k = 0; k < n; ++k) a[k] = rng.dyadic(6);
        consider(a, "random-dyadic");
    }
    return rep;
}

}  // namespace haarfact
