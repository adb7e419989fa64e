#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tda/dense_attn.hpp"
#include "test_util.hpp"

using namespace tda;

// Frozen oracle values, computed with high-precision arithmetic:
//   tau(i=1, beta=1, kappa=1, d=64) = sqrt(2 ln 2 / 64)
//   (0.5 - tau)^2
constexpr double kTau1 = 0.14717625281443434;
constexpr double kTau1Sq = 0.12448459657806395;

TEST_CASE("l2_normalize_rows examples") {
    Array4<double> x(1, 1, 1, 2);
    x.data = {3.0, 4.0};
    l2_normalize_rows(x);
    CHECK(x.data[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(x.data[1] == doctest::Approx(0.8).epsilon(1e-12));

    Array4<double> unit(1, 1, 1, 4);
    unit.data = {1.0, 0.0, 0.0, 0.0};
    l2_normalize_rows(unit);
    CHECK(unit.data[0] == 1.0);
    CHECK(unit.data[1] == 0.0);

    Array4<double> ones(1, 1, 1, 2);
    ones.data = {1.0, 1.0};
    l2_normalize_rows(ones);
    // oracle: 1/sqrt(2)
    CHECK(ones.data[0] == doctest::Approx(0.7071067811865476).epsilon(1e-12));
    CHECK(ones.data[1] == doctest::Approx(0.7071067811865476).epsilon(1e-12));
}

TEST_CASE("l2_normalize_rows zero-norm row error names the index") {
    Array4<double> x(1, 2, 2, 3);
    x.data.assign(x.data.size(), 1.0);
    x.row(0, 1, 1)[0] = 0.0;
    x.row(0, 1, 1)[1] = 0.0;
    x.row(0, 1, 1)[2] = 0.0;
    CHECK_THROWS_WITH_AS(l2_normalize_rows(x), doctest::Contains("h=1, t=1"), std::invalid_argument);
}

TEST_CASE("normalization preserves direction and unit norm") {
    auto rng = make_engine(11);
    auto x = test::random_array<double>(2, 2, 5, 16, rng);
    auto orig = x;
    l2_normalize_rows(x);
    for (std::int64_t r = 0; r < 2 * 2 * 5; ++r) {
        const double* p = x.data.data() + r * 16;
        const double* o = orig.data.data() + r * 16;
        CHECK(row_norm(p, 16) == doctest::Approx(1.0).epsilon(1e-6));
        // direction preserved: p parallel to o
        const double dp = dot_wide(p, o, 16);
        CHECK(dp == doctest::Approx(row_norm(o, 16)).epsilon(1e-9));
    }
}

TEST_CASE("threshold schedule examples") {
    AttnParams p;
    p.beta = 1.0;
    p.kappa = 2.0;
    CHECK(threshold(1, p, 64) == 0.0);  // ln((1+1)/2) = 0

    p.kappa = 1.0;
    CHECK(threshold(1, p, 64) == doctest::Approx(kTau1).epsilon(1e-12));
    // in-test oracle: direct formula
    CHECK(threshold(1, p, 64) == doctest::Approx(std::sqrt(2.0 * std::log(2.0) / 64.0)).epsilon(1e-15));

    p.kappa = 4.0;  // log argument negative -> clamped to 0
    CHECK(threshold(1, p, 64) == 0.0);
}

TEST_CASE("threshold is monotone non-decreasing in i") {
    auto rng = make_engine(12);
    std::uniform_real_distribution<double> bdist(0.1, 3.0), kdist(0.1, 8.0);
    for (int rep = 0; rep < 20; ++rep) {
        AttnParams p;
        p.beta = bdist(rng);
        p.kappa = kdist(rng);
        double prev = threshold(1, p, 32);
        CHECK(prev >= 0.0);
        for (std::int64_t i = 2; i <= 5000; i += 7) {
            const double cur = threshold(i, p, 32);
            CHECK(cur >= prev);
            prev = cur;
        }
    }
}

TEST_CASE("tra_dense: rectifier at threshold and derived power weight") {
    // tau_1 = 0 exactly when kappa = 2; an orthogonal key scores exactly 0
    AttnParams p;
    p.beta = 1.0;
    p.kappa = 2.0;
    p.power = 2;
    AttnBatch<double> b;
    b.q = Array4<double>(1, 1, 1, 4);
    b.k = Array4<double>(1, 1, 1, 4);
    b.v = Array4<double>(1, 1, 1, 4);
    b.q.data = {1.0, 0.0, 0.0, 0.0};
    b.k.data = {0.0, 1.0, 0.0, 0.0};
    b.v.data = {1.0, 2.0, 3.0, 4.0};
    auto res = tra_dense(b, p);
    CHECK(res.weights.data[0] == 0.0);

    // s = 0.5 against tau_1(kappa=1, d=64): a = (0.5 - tau)^2
    AttnParams p2;
    p2.kappa = 1.0;
    p2.power = 2;
    AttnBatch<double> b2;
    b2.q = Array4<double>(1, 1, 1, 64);
    b2.k = Array4<double>(1, 1, 1, 64);
    b2.v = Array4<double>(1, 1, 1, 64);
    b2.q.data[0] = 1.0;
    b2.k.data[0] = 0.5;
    b2.k.data[1] = std::sqrt(0.75);
    b2.v.data[0] = 1.0;
    auto res2 = tra_dense(b2, p2);
    CHECK(res2.weights.data[0] == doctest::Approx(kTau1Sq).epsilon(1e-9));
}

TEST_CASE("tra_dense: empty survivor row gives zero output") {
    // T = 1 with kappa < 2 so tau_1 > 0, and orthogonal q/k so s = 0 < tau
    AttnParams p;
    p.kappa = 1.0;
    AttnBatch<double> b;
    b.q = Array4<double>(1, 1, 1, 8);
    b.k = Array4<double>(1, 1, 1, 8);
    b.v = Array4<double>(1, 1, 1, 8);
    b.q.data[0] = 2.0;
    b.k.data[1] = 3.0;
    for (int i = 0; i < 8; ++i) b.v.data[i] = 1.0 + i;
    auto res = tra_dense(b, p);
    for (int i = 0; i < 8; ++i) CHECK(res.output.data[i] == 0.0);
}

TEST_CASE("tra exact sparsity: a > 0 iff s > tau") {
    auto rng = make_engine(13);
    AttnParams p;
    p.kappa = 1.0;
    p.power = 2;
    auto batch = test::random_batch<double>(2, 2, 17, 8, rng);
    auto res = tra_dense(batch, p);
    Array4<double> qn = batch.q, kn = batch.k;
    l2_normalize_rows(qn);
    l2_normalize_rows(kn);
    for (std::int64_t bi = 0; bi < 2; ++bi)
        for (std::int64_t hi = 0; hi < 2; ++hi)
            for (std::int64_t i = 0; i < 17; ++i) {
                const double tau = threshold(i + 1, p, 8);
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double s = dot_wide(qn.row(bi, hi, i), kn.row(bi, hi, j), 8);
                    const double w = res.weights.row(bi, hi, i)[j];
                    if (s > tau)
                        CHECK(w > 0.0);
                    else
                        CHECK(w == 0.0);
                }
            }
}

TEST_CASE("causal mask zeros are bitwise exact for every mechanism") {
    auto rng = make_engine(14);
    AttnParams p;
    auto batch = test::random_batch<float>(1, 2, 9, 8, rng, /*scale=*/1.0);
    batch.q2 = test::random_array<float>(1, 2, 9, 8, rng);
    batch.k2 = test::random_array<float>(1, 2, 9, 8, rng);
    const double scale = 1.0 / std::sqrt(8.0);
    auto all = {softmax_dense(batch, scale), rela_dense(batch, scale), diff_softmax_dense(batch, p, scale),
                tra_dense(batch, p), tda_dense(batch, p)};
    for (const auto& res : all)
        for (std::int64_t hi = 0; hi < 2; ++hi)
            for (std::int64_t i = 0; i < 9; ++i)
                for (std::int64_t j = i + 1; j < 9; ++j)
                    CHECK(res.weights.row(0, hi, i)[j] == 0.0f);
}

TEST_CASE("softmax_dense examples") {
    // uniform scores over 4 visible keys -> each weight 1/4
    AttnBatch<double> b;
    b.q = Array4<double>(1, 1, 4, 4);
    b.k = Array4<double>(1, 1, 4, 4);
    b.v = Array4<double>(1, 1, 4, 4);
    for (std::int64_t t = 0; t < 4; ++t) {
        b.q.row(0, 0, t)[0] = 1.0;
        b.k.row(0, 0, t)[0] = 1.0;  // identical keys -> equal scores
        b.v.row(0, 0, t)[t] = 1.0;
    }
    auto res = softmax_dense(b, 0.5);
    for (std::int64_t j = 0; j < 4; ++j)
        CHECK(res.weights.row(0, 0, 3)[j] == doctest::Approx(0.25).epsilon(1e-12));
    // T = 1: single visible key
    CHECK(res.weights.row(0, 0, 0)[0] == doctest::Approx(1.0).epsilon(1e-12));

    // scores [ln 1, ln 3] -> weights [0.25, 0.75]
    AttnBatch<double> b2;
    b2.q = Array4<double>(1, 1, 2, 4);
    b2.k = Array4<double>(1, 1, 2, 4);
    b2.v = Array4<double>(1, 1, 2, 4);
    b2.q.row(0, 0, 1)[0] = 2.0;  // scale 1/sqrt(4) = 0.5 -> score = k[0]
    b2.k.row(0, 0, 0)[0] = 0.0;
    b2.k.row(0, 0, 1)[0] = std::log(3.0);
    auto res2 = softmax_dense(b2, 0.5);
    CHECK(res2.weights.row(0, 0, 1)[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(res2.weights.row(0, 0, 1)[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows are stochastic and non-negative") {
    auto rng = make_engine(15);
    auto batch = test::random_batch<double>(2, 2, 12, 8, rng);
    auto res = softmax_dense(batch, 1.0 / std::sqrt(8.0));
    for (std::int64_t bi = 0; bi < 2; ++bi)
        for (std::int64_t hi = 0; hi < 2; ++hi)
            for (std::int64_t i = 0; i < 12; ++i) {
                double sum = 0.0;
                for (std::int64_t j = 0; j <= i; ++j) {
                    CHECK(res.weights.row(bi, hi, i)[j] >= 0.0);
                    sum += res.weights.row(bi, hi, i)[j];
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
}

TEST_CASE("rela_dense examples") {
    AttnBatch<double> b;
    b.q = Array4<double>(1, 1, 2, 4);
    b.k = Array4<double>(1, 1, 2, 4);
    b.v = Array4<double>(1, 1, 2, 4);
    // row 0: score 2.0 at scale 1 -> weight 2.0
    b.q.row(0, 0, 0)[0] = 1.0;
    b.k.row(0, 0, 0)[0] = 2.0;
    // row 1: score -0.5 -> weight 0
    b.q.row(0, 0, 1)[1] = 1.0;
    b.k.row(0, 0, 1)[1] = -0.5;
    b.v.row(0, 0, 0)[0] = 1.0;
    auto res = rela_dense(b, 1.0);
    CHECK(res.weights.row(0, 0, 0)[0] == 2.0);
    CHECK(res.weights.row(0, 0, 1)[1] == 0.0);

    // all-negative scores -> zero weights, LayerNorm(0) = 0
    AttnBatch<double> b2;
    b2.q = Array4<double>(1, 1, 3, 4);
    b2.k = Array4<double>(1, 1, 3, 4);
    b2.v = Array4<double>(1, 1, 3, 4);
    for (std::int64_t t = 0; t < 3; ++t) {
        b2.q.row(0, 0, t)[0] = 1.0;
        b2.k.row(0, 0, t)[0] = -1.0;
        b2.v.row(0, 0, t)[1] = 5.0;
    }
    auto res2 = rela_dense(b2, 1.0);
    for (const double w : res2.weights.data) CHECK(w == 0.0);
    for (const double o : res2.output.data) CHECK(o == 0.0);
}

TEST_CASE("diff_softmax_dense examples and row sums") {
    auto rng = make_engine(16);
    auto batch = test::random_batch<double>(1, 2, 10, 8, rng, 1.0);
    const double scale = 1.0 / std::sqrt(8.0);

    // identical views with lambda = 1 cancel exactly
    AttnBatch<double> same = batch;
    same.q2 = batch.q;
    same.k2 = batch.k;
    AttnParams p1;
    p1.lambda = 1.0;
    auto res = diff_softmax_dense(same, p1, scale);
    for (const double w : res.weights.data) CHECK(w == doctest::Approx(0.0).epsilon(1e-12));

    // lambda = 0 reduces to standard softmax
    batch.q2 = test::random_array<double>(1, 2, 10, 8, rng);
    batch.k2 = test::random_array<double>(1, 2, 10, 8, rng);
    AttnParams p0;
    p0.lambda = 0.0;
    auto a = diff_softmax_dense(batch, p0, scale);
    auto b = softmax_dense(batch, scale);
    CHECK(test::max_abs_diff(a.weights, b.weights) < 1e-12);
    CHECK(test::max_abs_diff(a.output, b.output) < 1e-12);

    // visible row sums equal 1 - lambda
    AttnParams p04;
    p04.lambda = 0.4;
    auto c = diff_softmax_dense(batch, p04, scale);
    for (std::int64_t hi = 0; hi < 2; ++hi)
        for (std::int64_t i = 0; i < 10; ++i) {
            double sum = 0.0;
            for (std::int64_t j = 0; j <= i; ++j) sum += c.weights.row(0, hi, i)[j];
            CHECK(sum == doctest::Approx(0.6).epsilon(1e-9));
        }

    // missing second view errors
    AttnBatch<double> single;
    single.q = batch.q;
    single.k = batch.k;
    single.v = batch.v;
    CHECK_THROWS_AS(diff_softmax_dense(single, p04, scale), std::invalid_argument);
    CHECK_THROWS_AS(tda_dense(single, p04), std::invalid_argument);
}

TEST_CASE("tda_dense examples") {
    auto rng = make_engine(17);
    auto batch = test::random_batch<double>(1, 2, 8, 16, rng, /*two_views=*/false);
    batch.q2 = test::random_array<double>(1, 2, 8, 16, rng);
    batch.k2 = test::random_array<double>(1, 2, 8, 16, rng);

    // lambda = 0: identical to tra_dense on view 1
    AttnParams p0;
    p0.lambda = 0.0;
    auto tda0 = tda_dense(batch, p0);
    AttnBatch<double> v1{batch.q, batch.k, batch.v, {}, {}};
    auto tra0 = tra_dense(v1, p0);
    CHECK(test::max_abs_diff(tda0.output, tra0.output) == 0.0);
    CHECK(test::max_abs_diff(tda0.weights, tra0.weights) == 0.0);

    // identical views with lambda = 1: perfect cancellation
    AttnBatch<double> same = batch;
    same.q2 = batch.q;
    same.k2 = batch.k;
    AttnParams p1;
    p1.lambda = 1.0;
    auto res = tda_dense(same, p1);
    for (const double w : res.weights.data) CHECK(w == 0.0);
    for (const double o : res.output.data) CHECK(o == 0.0);

    // direct arithmetic: a1 = 0.3, a2 = 0.5, lambda = 0.4 -> 0.1 (p = 1, tau = 0)
    AttnParams pd;
    pd.kappa = 2.0;  // tau_1 = 0
    pd.power = 1;
    pd.lambda = 0.4;
    AttnBatch<double> d;
    d.q = Array4<double>(1, 1, 1, 4);
    d.k = Array4<double>(1, 1, 1, 4);
    d.v = Array4<double>(1, 1, 1, 4);
    d.q2 = Array4<double>(1, 1, 1, 4);
    d.k2 = Array4<double>(1, 1, 1, 4);
    d.q.data = {1, 0, 0, 0};
    d.k.data = {0.3, std::sqrt(1.0 - 0.09), 0, 0};
    d.q2.data = {1, 0, 0, 0};
    d.k2.data = {0.5, std::sqrt(0.75), 0, 0};
    d.v.data = {1, 0, 0, 0};
    auto rd = tda_dense(d, pd);
    CHECK(rd.weights.data[0] == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("tda linearity: signed aggregation equals view difference") {
    auto rng = make_engine(18);
    auto batch = test::random_batch<double>(2, 2, 13, 8, rng, /*two_views=*/true);
    AttnParams p;
    p.lambda = 0.7;
    const double lam = p.lambda_clamped();
    auto tda = tda_dense(batch, p);
    AttnBatch<double> v1{batch.q, batch.k, batch.v, {}, {}};
    AttnBatch<double> v2{batch.q2, batch.k2, batch.v, {}, {}};
    auto r1 = tra_dense(v1, p);
    auto r2 = tra_dense(v2, p);
    // reconstruct the pre-norm aggregations from weights and v
    for (std::int64_t bi = 0; bi < 2; ++bi)
        for (std::int64_t hi = 0; hi < 2; ++hi)
            for (std::int64_t i = 0; i < 13; ++i)
                for (std::int64_t e = 0; e < 8; ++e) {
                    double agg_tda = 0.0, agg1 = 0.0, agg2 = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        agg_tda += tda.weights.row(bi, hi, i)[j] * batch.v.row(bi, hi, j)[e];
                        agg1 += r1.weights.row(bi, hi, i)[j] * batch.v.row(bi, hi, j)[e];
                        agg2 += r2.weights.row(bi, hi, i)[j] * batch.v.row(bi, hi, j)[e];
                    }
                    CHECK(std::fabs(agg_tda - (agg1 - lam * agg2)) <= 1e-6);
                }
}

TEST_CASE("tra weights are invariant to positive rescaling of q and k rows") {
    auto rng = make_engine(19);
    AttnParams p;
    auto batch = test::random_batch<double>(1, 1, 9, 8, rng);
    auto base = tra_dense(batch, p);
    auto scaled = batch;
    std::uniform_real_distribution<double> sdist(0.1, 10.0);
    for (std::int64_t t = 0; t < 9; ++t) {
        const double sq = sdist(rng), sk = sdist(rng);
        for (std::int64_t e = 0; e < 8; ++e) {
            scaled.q.row(0, 0, t)[e] *= sq;
            scaled.k.row(0, 0, t)[e] *= sk;
        }
    }
    auto res = tra_dense(scaled, p);
    CHECK(test::max_abs_diff(res.weights, base.weights) <= 1e-6);
}

TEST_CASE("rmsnorm examples") {
    std::vector<double> x = {0.0, 0.0, 0.0};
    std::vector<double> y(3);
    rmsnorm<double>(x.data(), nullptr, 3, 1e-6, y.data());
    for (const double v : y) CHECK(v == 0.0);

    std::vector<double> c(5, 3.7), yc(5);
    rmsnorm<double>(c.data(), nullptr, 5, 1e-12, yc.data());
    for (const double v : yc) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<double> ab = {3.0, 4.0}, yab(2);
    rmsnorm<double>(ab.data(), nullptr, 2, 0.0, yab.data());
    // oracle: rms = sqrt(12.5)
    CHECK(yab[0] == doctest::Approx(0.8485281374238570).epsilon(1e-12));
    CHECK(yab[1] == doctest::Approx(1.1313708498984762).epsilon(1e-12));
}

// Monte Carlo echo of the survivor bound on unit-sphere inputs: mean nonzero
// count per weight row stays below kappa + 3 SE.
TEST_CASE("survivor bound on random unit-sphere inputs") {
    auto rng = make_engine(20);
    AttnParams p;  // beta = 1 >= empirical sigma, kappa = 1
    const std::int64_t d = 64;
    for (const std::int64_t T : {std::int64_t(64), std::int64_t(256), std::int64_t(1024)}) {
        const std::int64_t mats = std::max<std::int64_t>(2, 1100 / T + 1);
        double sum = 0.0, sumsq = 0.0;
        std::int64_t rows = 0;
        for (std::int64_t m = 0; m < mats; ++m) {
            AttnBatch<float> batch;
            batch.q = test::random_unit_rows<float>(1, 1, T, d, rng);
            batch.k = test::random_unit_rows<float>(1, 1, T, d, rng);
            batch.v = test::random_array<float>(1, 1, T, d, rng);
            auto res = tra_dense(batch, p);
            for (std::int64_t i = 0; i < T; ++i) {
                std::int64_t nz = 0;
                for (std::int64_t j = 0; j <= i; ++j)
                    if (res.weights.row(0, 0, i)[j] != 0.0f) ++nz;
                sum += static_cast<double>(nz);
                sumsq += static_cast<double>(nz) * static_cast<double>(nz);
                ++rows;
            }
        }
        REQUIRE(rows >= 1000);
        const double mean = sum / static_cast<double>(rows);
        const double var = (sumsq - static_cast<double>(rows) * mean * mean) / static_cast<double>(rows - 1);
        const double se = std::sqrt(std::max(0.0, var) / static_cast<double>(rows));
        CHECK(mean <= p.kappa + 3.0 * se);
    }
}
