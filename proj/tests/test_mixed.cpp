#include <catch2/catch_amalgamated.hpp>

#include "haarfact/mixed.hpp"

using namespace haarfact;

namespace {

StepFunction random_step(Rng& rng, int depth, int bits = 6) {
    StepFunction f = StepFunction::zero(depth);
    for (auto& x : f.v) x = rng.dyadic(bits);
    return f;
}

MixedFunction random_mixed(Rng& rng, int n, int m, int bits = 6) {
    MixedFunction u = MixedFunction::zero(n, m);
    for (auto& x : u.v) x = rng.dyadic(bits);
    return u;
}

L1Operator random_op(Rng& rng, int depth, int bits = 4) {
    L1Operator t = L1Operator::zero(depth);
    for (auto& x : t.m) x = rng.dyadic(bits);
    return t;
}

MixedOperator random_mixed_op(Rng& rng, int n, int m, int bits = 4) {
    MixedOperator t = MixedOperator::zero(n, m);
    for (uint32_t L = 1; L <= (1u << m); ++L)
        for (uint32_t M = 1; M <= (1u << m); ++M)
            t.blocks.emplace(std::make_pair(L, M), random_op(rng, n, bits));
    t.prune();
    return t;
}

std::vector<Rational> matmul(const std::vector<Rational>& a, const std::vector<Rational>& b,
                             size_t dim) {
    std::vector<Rational> c(dim * dim);
    for (size_t i = 0; i < dim; ++i)
        for (size_t k = 0; k < dim; ++k) {
            if (a[i * dim + k] == 0) continue;
            for (size_t j = 0; j < dim; ++j) c[i * dim + j] += a[i * dim + k] * b[k * dim + j];
        }
    return c;
}

}  // namespace

TEST_CASE("joint transforms are mutually inverse and split on tensors") {
    Rng rng(11);
    for (auto [n, m] : {std::pair<int, int>{0, 0}, {1, 2}, {3, 2}, {2, 3}, {4, 1}}) {
        for (int rep = 0; rep < 5; ++rep) {
            MixedFunction u = random_mixed(rng, n, m);
            REQUIRE(joint_synthesis(n, m, joint_analysis(u)) == u);
        }
    }
    int n = 3, m = 2;
    StepFunction f = random_step(rng, n), g = random_step(rng, m);
    std::vector<Rational> c = joint_analysis(tensor(f, g));
    HaarCoeffs cf = haar_analysis(f), cg = haar_analysis(g);
    for (uint32_t j = 0; j < (1u << n); ++j)
        for (uint32_t k = 0; k < (1u << m); ++k)
            REQUIRE(c[size_t(j) * (1u << m) + k] == cf.c[j] * cg.c[k]);
}

TEST_CASE("identity operator acts as the identity") {
    Rng rng(5);
    MixedOperator id = MixedOperator::identity(3, 2);
    REQUIRE(id.is_x_diagonal());
    for (uint32_t L = 1; L <= id.inner_dim(); ++L)
        REQUIRE(id.diagonal_entry(L) == L1Operator::identity(3));
    for (int rep = 0; rep < 4; ++rep) {
        MixedFunction u = random_mixed(rng, 3, 2);
        REQUIRE(id.apply(u) == u);
    }
    REQUIRE(equal_diagonal_part(id).has_value());
}

TEST_CASE("apply matches the dense value-coordinate action") {
    Rng rng(23);
    MixedOperator t = random_mixed_op(rng, 2, 2);
    std::vector<Rational> a = to_dense(t);
    size_t dim = size_t(t.outer_dim()) * t.inner_dim();
    for (int rep = 0; rep < 4; ++rep) {
        MixedFunction u = random_mixed(rng, 2, 2);
        MixedFunction w = t.apply(u);
        for (size_t i = 0; i < dim; ++i) {
            Rational acc = 0;
            for (size_t j = 0; j < dim; ++j) acc += a[i * dim + j] * u.v[j];
            REQUIRE(w.v[i] == acc);
        }
    }
}

TEST_CASE("block decomposition inverts the dense form") {
    Rng rng(37);
    for (auto [n, m] : {std::pair<int, int>{2, 2}, {1, 3}, {3, 1}}) {
        MixedOperator t = random_mixed_op(rng, n, m);
        REQUIRE(block_decompose(n, m, to_dense(t)) == t);
    }
    size_t dim = 1u << 4;
    std::vector<Rational> eye(dim * dim);
    for (size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1;
    REQUIRE(block_decompose(2, 2, eye) == MixedOperator::identity(2, 2));
}

TEST_CASE("tensor operators factor on elementary tensors") {
    Rng rng(41);
    L1Operator s = random_op(rng, 2), r = random_op(rng, 2);
    MixedOperator t = tensor_operator(s, r);
    for (int rep = 0; rep < 5; ++rep) {
        StepFunction f = random_step(rng, 2), g = random_step(rng, 2);
        REQUIRE(t.apply(tensor(f, g)) == tensor(s.apply(f), r.apply(g)));
    }

    MixedOperator sid = tensor_operator(s, L1Operator::identity(2));
    REQUIRE(sid.is_x_diagonal());
    for (uint32_t L = 1; L <= sid.inner_dim(); ++L) REQUIRE(sid.diagonal_entry(L) == s);
    auto eq = equal_diagonal_part(sid);
    REQUIRE(eq.has_value());
    REQUIRE(*eq == s);

    MixedOperator skew = sid;
    skew.block_ref(2, 3).at(1, 1) = 1;
    REQUIRE_FALSE(equal_diagonal_part(skew).has_value());
}

TEST_CASE("composition agrees with sequential application and dense products") {
    Rng rng(53);
    MixedOperator t1 = random_mixed_op(rng, 2, 2), t2 = random_mixed_op(rng, 2, 2);
    MixedOperator c = t1.compose(t2);
    for (int rep = 0; rep < 4; ++rep) {
        MixedFunction u = random_mixed(rng, 2, 2);
        REQUIRE(c.apply(u) == t1.apply(t2.apply(u)));
    }
    size_t dim = size_t(t1.outer_dim()) * t1.inner_dim();
    REQUIRE(to_dense(c) == matmul(to_dense(t1), to_dense(t2), dim));
}

TEST_CASE("embedding and projection legs are exact inverses with unit scale") {
    Rng rng(61);
    Space x = Space::lp(Rational(3));
    int m = 3;
    for (uint32_t M : {1u, 2u, 5u, 8u}) {
        StepFunction f = random_step(rng, 2);
        ScaledMixedFunction ej = embed_j(f, M, m, x);
        ScaledStepFunction pq = project_q(ej.raw, M, x);

        StepFunction expect = f;
        expect.scale(DyadicInterval{M}.measure());
        REQUIRE(pq.raw == expect);

        DyadPow prod = ej.scale * pq.scale;
        REQUIRE(prod.integral());
        REQUIRE(prod.rational_value() * DyadicInterval{M}.measure() == 1);

        for (uint32_t other : {1u, 2u, 5u, 8u}) {
            if (other == M) continue;
            StepFunction crossed = project_q(ej.raw, other, x).raw;
            REQUIRE(crossed == StepFunction::zero(2));
        }
    }

    // the embedding is an isometry into L1(X); exact check for X = L1
    Space l1 = Space::l1();
    for (uint32_t M : {2u, 6u}) {
        StepFunction f = random_step(rng, 3);
        ScaledMixedFunction ej = embed_j(f, M, m, l1);
        REQUIRE(ej.scale.integral());
        REQUIRE(ej.raw.l1x_norm_exact(l1) * ej.scale.rational_value() == f.l1_norm());
    }
}

TEST_CASE("off-diagonal distance certifies the gap to the diagonal part") {
    Rng rng(71);
    Space l1 = Space::l1();
    L1Operator s = random_op(rng, 2), w = random_op(rng, 2);
    MixedOperator t = tensor_operator(s, L1Operator::identity(2));
    t.block_ref(2, 3) = w;

    Bound xd = xdiagonal_distance(t, l1);
    REQUIRE(xd.exact);
    // for X = L1: nu_L = 1 and mu_M = |M|^-1
    REQUIRE(xd.rational_value() == l1_operator_norm_exact(w) / DyadicInterval{3}.measure());

    MixedOperator diag = drop_offdiagonal(t);
    REQUIRE(diag.is_x_diagonal());
    MixedNormBounds gap = mixed_norm_bounds(t - diag, l1);
    REQUIRE(gap.exact);
    REQUIRE(gap.upper.rational_value() <= xd.rational_value());
    REQUIRE(xdiagonal_distance(diag, l1).rational_value() == 0);
}

TEST_CASE("norm bounds are exact for constant-diagonal operators") {
    Rng rng(83);
    L1Operator s = random_op(rng, 3);
    Rational nrm = l1_operator_norm_exact(s);
    MixedOperator t = tensor_operator(s, L1Operator::identity(3));
    for (const Space& x : {Space::l1(), Space::l2(), Space::linf()}) {
        MixedNormBounds b = mixed_norm_bounds(t, x);
        REQUIRE(b.exact);
        REQUIRE(b.upper.exact);
        REQUIRE(b.upper.rational_value() == nrm);
        REQUIRE(b.lower == Catch::Approx(to_double(nrm)));
    }
}

TEST_CASE("norm bounds match the column-sum oracle in L1(L1)") {
    Rng rng(89);
    MixedOperator t = random_mixed_op(rng, 2, 2);
    std::vector<Rational> a = to_dense(t);
    size_t dim = size_t(t.outer_dim()) * t.inner_dim();
    Rational oracle = 0;
    for (size_t j = 0; j < dim; ++j) {
        Rational col = 0;
        for (size_t i = 0; i < dim; ++i) col += rat_abs(a[i * dim + j]);
        if (col > oracle) oracle = col;
    }
    MixedNormBounds b = mixed_norm_bounds(t, Space::l1());
    REQUIRE(b.exact);
    REQUIRE(b.upper.rational_value() == oracle);
    REQUIRE(b.lower == Catch::Approx(to_double(oracle)));
}

TEST_CASE("sampled lower bounds never exceed the certified upper bound") {
    Rng rng(97);
    Space l2 = Space::l2();
    for (int rep = 0; rep < 5; ++rep) {
        MixedOperator t = random_mixed_op(rng, 2, 2);
        MixedNormBounds b = mixed_norm_bounds(t, l2, 32, 1000 + rep);
        REQUIRE(b.lower <= b.upper.value_upper() * (1 + 1e-9));
        REQUIRE(b.lower > 0.0);
    }
}

TEST_CASE("coarsening is compression by grid averaging") {
    Rng rng(101);
    MixedOperator t = random_mixed_op(rng, 3, 2);
    MixedOperator c = canonical_coarsen(t, 2, 1);
    for (int rep = 0; rep < 5; ++rep) {
        MixedFunction u = random_mixed(rng, 2, 1);
        MixedFunction via_fine = mixed_coarse_project(t.apply(mixed_refine(u, 3, 2)), 2, 1);
        REQUIRE(c.apply(u) == via_fine);
        REQUIRE(mixed_coarse_project(mixed_refine(u, 3, 2), 2, 1) == u);
        REQUIRE(mixed_refine(u, 3, 2).l1x_norm_exact(Space::l1()) == u.l1x_norm_exact(Space::l1()));
    }
    REQUIRE(canonical_coarsen(t, 3, 2) == t);
    REQUIRE(canonical_coarsen(MixedOperator::identity(3, 2), 2, 1) ==
            MixedOperator::identity(2, 1));
}

TEST_CASE("grid restriction embeds isometrically onto the union") {
    Rng rng(103);
    GridRestriction r = GridRestriction::from_cells(4, 2, {7, 5});
    REQUIRE(r.cells == std::vector<uint32_t>{5, 7});
    REQUIRE(r.source_depth() == 3);
    REQUIRE(r.measure() == Rational(1, 2));

    for (int rep = 0; rep < 5; ++rep) {
        StepFunction f = random_step(rng, 3);
        StepFunction g = r.embed(f);
        REQUIRE(g.l1_norm() == f.l1_norm());
        REQUIRE(g.integral() == f.integral());
        REQUIRE(r.restrict(g) == f);
    }

    // embed(restrict(.)) multiplies by the union's indicator
    StepFunction h = random_step(rng, 4);
    StepFunction back = r.embed(r.restrict(h));
    StepFunction mask = StepFunction::indicator(DyadicInterval{5}, 4);
    mask += StepFunction::indicator(DyadicInterval{7}, 4);
    REQUIRE(back == pointwise_product(h, mask));
    REQUIRE(r.restrict(h).l1_norm() <= h.l1_norm());

    REQUIRE_THROWS_AS(GridRestriction::from_cells(4, 2, {5, 6, 7}), std::invalid_argument);
    REQUIRE_THROWS_AS(GridRestriction::from_cells(4, 2, {3, 4}), std::invalid_argument);
    // duplicates collapse; a singleton is a valid power-of-two union
    REQUIRE(GridRestriction::from_cells(4, 2, {5, 5}).cells == std::vector<uint32_t>{5});
}

TEST_CASE("restriction conjugation compresses the operator exactly") {
    Rng rng(107);
    GridRestriction r = GridRestriction::from_cells(4, 2, {5, 7});

    REQUIRE(restrict_conjugate(L1Operator::identity(4), r) == L1Operator::identity(3));
    L1Operator t = random_op(rng, 4);
    L1Operator s = restrict_conjugate(t, r);
    for (int rep = 0; rep < 5; ++rep) {
        StepFunction f = random_step(rng, 3);
        REQUIRE(s.apply(f) == r.restrict(t.apply(r.embed(f))));
    }

    // selecting every cell of a level loses nothing
    GridRestriction full = GridRestriction::from_cells(3, 1, {3, 4});
    L1Operator t3 = random_op(rng, 3);
    REQUIRE(restrict_conjugate(t3, full) == t3);

    MixedOperator tm = random_mixed_op(rng, 4, 2);
    MixedOperator sm = restrict_conjugate(tm, r);
    REQUIRE(restrict_conjugate(MixedOperator::identity(4, 2), r) == MixedOperator::identity(3, 2));
    for (int rep = 0; rep < 3; ++rep) {
        MixedFunction u = random_mixed(rng, 3, 2);
        MixedFunction fine =
            tm.apply(map_outer(u, 4, [&](const StepFunction& f) { return r.embed(f); }));
        MixedFunction expect =
            map_outer(fine, 3, [&](const StepFunction& g) { return r.restrict(g); });
        REQUIRE(sm.apply(u) == expect);
    }
}

TEST_CASE("mixed conjugation compresses through the faithful legs") {
    Rng rng(109);
    FaithfulHaarSystem osys = build_faithful_system(4, 2, DyadicInterval::root());
    FaithfulHaarSystem isys = build_faithful_system(3, 1, DyadicInterval::root());
    REQUIRE(faithful_check(osys).ok);
    REQUIRE(faithful_check(isys).ok);

    REQUIRE(mixed_conjugate(MixedOperator::identity(4, 3), osys, isys) ==
            MixedOperator::identity(2, 1));

    MixedOperator t = random_mixed_op(rng, 4, 3, 3);
    MixedOperator s = mixed_conjugate(t, osys, isys);
    for (int rep = 0; rep < 3; ++rep) {
        MixedFunction u = random_mixed(rng, 2, 1);
        MixedFunction expect =
            mixed_reduction_apply(osys, isys, t.apply(mixed_transfer_apply(osys, isys, u)));
        REQUIRE(s.apply(u) == expect);
    }

    // the transfer legs are isometric
    for (int rep = 0; rep < 3; ++rep) {
        MixedFunction u = random_mixed(rng, 2, 1);
        MixedFunction v = mixed_transfer_apply(osys, isys, u);
        REQUIRE(v.l1x_norm_exact(Space::l1()) == u.l1x_norm_exact(Space::l1()));
        REQUIRE(v.l1x_norm(Space::l2()) == Catch::Approx(u.l1x_norm(Space::l2())).epsilon(1e-12));
        REQUIRE(mixed_reduction_apply(osys, isys, v) == u);
    }

    // conjugation respects the tensor structure leg by leg
    L1Operator so = random_op(rng, 4), ri = random_op(rng, 3);
    MixedOperator lhs = mixed_conjugate(tensor_operator(so, ri), osys, isys);
    MixedOperator rhs =
        tensor_operator(conjugate_by_system(so, osys), conjugate_by_system(ri, isys));
    REQUIRE(lhs == rhs);

    MixedOperator lhso = mixed_conjugate_outer(tensor_operator(so, L1Operator::identity(3)), osys);
    REQUIRE(lhso == tensor_operator(conjugate_by_system(so, osys), L1Operator::identity(3)));

    MixedOperator lhsi = mixed_conjugate_inner(tensor_operator(L1Operator::identity(4), ri), isys);
    REQUIRE(lhsi == tensor_operator(L1Operator::identity(4), conjugate_by_system(ri, isys)));
}

TEST_CASE("parent-child deviations read the diagonal drift") {
    int n = 2, m = 2;
    L1Operator s = L1Operator::identity(n);
    std::vector<Rational> drift{Rational(0), Rational(1, 4), Rational(1, 2), Rational(3, 8)};
    MixedOperator t = MixedOperator::zero(n, m);
    for (uint32_t L = 1; L <= (1u << m); ++L) {
        L1Operator e = L1Operator::identity(n);
        e.scale(1 + drift[L - 1]);
        e.scale(DyadicInterval{L}.measure());
        t.blocks.emplace(std::make_pair(L, L), std::move(e));
    }
    std::vector<DiagonalDeviation> dev = parent_child_deviations(t);
    REQUIRE(dev.size() == 3);
    REQUIRE(dev[0].parent == 1);
    REQUIRE(dev[0].child == 2);
    REQUIRE(dev[0].norm == Rational(1, 4));
    REQUIRE(dev[1].parent == 2);
    REQUIRE(dev[1].child == 3);
    REQUIRE(dev[1].norm == Rational(1, 4));
    REQUIRE(dev[2].parent == 2);
    REQUIRE(dev[2].child == 4);
    REQUIRE(dev[2].norm == Rational(1, 8));
}
