#include <catch2/catch_amalgamated.hpp>

#include "haarfact/stepfun.hpp"

using namespace haarfact;

namespace {

StepFunction random_step(Rng& rng, int depth, int bits = 6) {
    StepFunction f = StepFunction::zero(depth);
    for (auto& x : f.v) x = rng.dyadic(bits);
    return f;
}

}  // namespace

TEST_CASE("haar function values") {
    StepFunction h = StepFunction::haar(DyadicInterval::from_level_pos(1, 0), 2);
    CHECK(h.v == std::vector<Rational>{1, -1, 0, 0});
    StepFunction ones = StepFunction::haar(DyadicInterval::root(), 2);
    CHECK(ones.v == std::vector<Rational>{1, 1, 1, 1});
    CHECK(StepFunction::haar(DyadicInterval::whole(), 1).v == std::vector<Rational>{1, -1});
}

TEST_CASE("haar system is orthogonal with <h_I,h_I> = |I|") {
    const int n = 5;
    for (uint32_t ci = 1; ci <= (1u << n); ++ci) {
        for (uint32_t cj = 1; cj <= (1u << n); ++cj) {
            DyadicInterval I{ci}, J{cj};
            Rational ip = inner(StepFunction::haar(I, n), StepFunction::haar(J, n));
            CHECK(ip == (ci == cj ? I.measure() : Rational(0)));
        }
    }
}

TEST_CASE("analysis picks out haar coefficients") {
    const int n = 5;
    for (uint32_t cj = 1; cj <= (1u << n); ++cj) {
        HaarCoeffs c = haar_analysis(StepFunction::haar(DyadicInterval{cj}, n));
        for (uint32_t ci = 1; ci <= (1u << n); ++ci) {
            CHECK(c.at(ci) == (ci == cj ? Rational(1) : Rational(0)));
        }
    }

    // against the inner-product definition on random functions
    Rng rng(101);
    for (int rep = 0; rep < 20; ++rep) {
        StepFunction f = random_step(rng, n);
        HaarCoeffs c = haar_analysis(f);
        for (uint32_t code = 1; code <= (1u << n); ++code) {
            DyadicInterval I{code};
            CHECK(c.at(code) == inner(StepFunction::haar(I, n), f) / I.measure());
        }
    }
}

TEST_CASE("analysis and synthesis are exact inverses") {
    Rng rng(20240907);
    for (int rep = 0; rep < 10000; ++rep) {
        int depth = static_cast<int>(rng.below(10)) + 1;
        StepFunction f = random_step(rng, depth);
        CHECK(haar_synthesis(haar_analysis(f)) == f);
    }
    for (int rep = 0; rep < 200; ++rep) {
        int depth = static_cast<int>(rng.below(8)) + 1;
        HaarCoeffs c = HaarCoeffs::zero(depth);
        for (auto& x : c.c) x = rng.dyadic(6);
        CHECK(haar_analysis(haar_synthesis(c)).c == c.c);
    }
    // depth 0: a single constant
    StepFunction f0{0, {Rational(7, 3)}};
    CHECK(haar_synthesis(haar_analysis(f0)) == f0);
}

TEST_CASE("normalized indicator expansion") {
    for (int depth = 1; depth <= 7; ++depth) {
        for (uint32_t code = 1; code <= (1u << depth); ++code) {
            DyadicInterval I{code};
            StepFunction expect = StepFunction::indicator(I, depth);
            expect.scale(1 / I.measure());
            CHECK(haar_synthesis(normalized_indicator_coeffs(I, depth)) == expect);
        }
    }
}

TEST_CASE("exact norms") {
    StepFunction f{2, {Rational(1), Rational(-3), Rational(0), Rational(2)}};
    CHECK(f.l1_norm() == Rational(6, 4));
    CHECK(f.linf_norm() == 3);
    CHECK(f.integral() == Rational(0));
    CHECK(Space::l1().norm_exact(f) == Rational(3, 2));
    CHECK(Space::linf().norm_exact(f) == 3);
}

TEST_CASE("Lp norms and normalizers") {
    // ||chi_I||_p = |I|^(1/p)
    for (int level = 0; level <= 4; ++level) {
        DyadicInterval I = DyadicInterval::from_level_pos(level, 0);
        StepFunction chi = StepFunction::indicator(I, 5);
        CHECK_THAT(Space::l2().norm(chi),
                   Catch::Matchers::WithinRel(std::exp2(-level / 2.0), 1e-12));
        CHECK_THAT(Space::lp(Rational(3)).norm(chi),
                   Catch::Matchers::WithinRel(std::exp2(-level / 3.0), 1e-12));
    }

    // mu_A nu_A = 1/|A| exactly, for rational p
    for (const Rational& p : {Rational(1), Rational(3, 2), Rational(2), Rational(7, 3)}) {
        Space x = Space::lp(p);
        for (int level = 0; level <= 20; ++level) {
            CHECK(x.mu_log2(level) + x.nu_log2(level) == level);
        }
    }
    Space xi = Space::linf();
    CHECK(xi.mu_log2(9) == 0);
    CHECK(xi.nu_log2(9) == 9);

    // exact collapse when the exponent is integral
    CHECK(Space::l2().mu(DyadicInterval::from_level_pos(4, 3)).rational_value() == 4);
    CHECK(Space::l2().nu(DyadicInterval::from_level_pos(4, 3)).rational_value() == 4);
    CHECK_FALSE(Space::lp(Rational(3)).mu(DyadicInterval::from_level_pos(4, 0)).integral());
    CHECK(Space::l1().nu(DyadicInterval::from_level_pos(7, 0)).rational_value() == 1);
    CHECK(Space::l1().mu(DyadicInterval::root()).rational_value() == 1);
}

TEST_CASE("rademacher functions") {
    for (int k = 1; k <= 5; ++k) {
        int depth = k + 2;
        StepFunction expect = StepFunction::zero(depth);
        auto [lo, hi] = level_code_range(k);
        for (uint32_t code = lo; code <= hi; ++code) {
            expect += StepFunction::haar(DyadicInterval{code}, depth);
        }
        CHECK(rademacher(k, depth) == expect);
    }
}

TEST_CASE("rademacher L1 constant diagnostics") {
    // orthonormality makes the L2 value n^{-1/2} (all-ones is a true minimizer)
    for (int n : {2, 3, 4}) {
        RademacherReport rep = rademacher_l1_constant(Space::l2(), n, 5, 16);
        CHECK_THAT(rep.constant, Catch::Matchers::WithinAbs(1.0 / std::sqrt(double(n)), 1e-9));
    }
    // L1, n = 2: ||r_1 + r_2||_1 = 1 against coefficient mass 2
    RademacherReport rep = rademacher_l1_constant(Space::l1(), 2, 5, 16);
    CHECK_THAT(rep.constant, Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK(rep.n == 2);
    CHECK_FALSE(rep.argmin.empty());
}
