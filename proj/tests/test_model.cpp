#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "tda/dense_attn.hpp"
#include "tda/model.hpp"
#include "test_util.hpp"

using namespace tda;

namespace {

ModelConfig micro_config(Mechanism mech) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.context_len = 8;
    cfg.mechanism = mech;
    cfg.seed = 41;
    // thresholds low enough that several entries survive at tiny T
    cfg.attn.beta = 0.3;
    return cfg;
}

std::vector<std::uint8_t> micro_tokens() { return {72, 101, 108, 108, 111}; }

template <typename Real>
double model_loss(LmModel<Real>& m, const std::vector<std::uint8_t>& toks,
                  const std::vector<std::uint8_t>& tgts) {
    SeqWork<Real> work;
    return m.forward_seq(toks, work, tgts);
}

}  // namespace

TEST_CASE("rope basics: identity at position 0, isometry, relative property") {
    auto rng = make_engine(400);
    const std::int64_t T = 6, d = 8;
    std::vector<double> x(static_cast<std::size_t>(T * d));
    std::normal_distribution<double> dist;
    for (auto& v : x) v = dist(rng);

    auto rotated = rope_apply(x, d, 10000.0);
    for (std::int64_t e = 0; e < d; ++e) CHECK(rotated[e] == doctest::Approx(x[e]).epsilon(1e-12));

    for (std::int64_t t = 0; t < T; ++t) {
        double n0 = 0.0, n1 = 0.0;
        for (std::int64_t e = 0; e < d; ++e) {
            n0 += x[t * d + e] * x[t * d + e];
            n1 += rotated[t * d + e] * rotated[t * d + e];
        }
        CHECK(std::sqrt(n1) == doctest::Approx(std::sqrt(n0)).epsilon(1e-6));
    }

    // <rope(q,a), rope(k,b)> depends only on b - a
    std::vector<double> q(d), k(d);
    for (auto& v : q) v = dist(rng);
    for (auto& v : k) v = dist(rng);
    for (const auto& [a, b, s] : {std::tuple{0, 3, 2}, std::tuple{1, 5, 7}, std::tuple{4, 2, 3}}) {
        auto rot_at = [&](const std::vector<double>& v, std::int64_t pos) {
            std::vector<double> out = v;
            rope_apply_rows(out.data(), 1, d, 10000.0, pos);
            return out;
        };
        const auto qa = rot_at(q, a), kb = rot_at(k, b);
        const auto qas = rot_at(q, a + s), kbs = rot_at(k, b + s);
        double d0 = 0.0, d1 = 0.0;
        for (std::int64_t e = 0; e < d; ++e) {
            d0 += qa[e] * kb[e];
            d1 += qas[e] * kbs[e];
        }
        CHECK(d0 == doctest::Approx(d1).epsilon(1e-5));
    }

    std::vector<double> odd(6);
    CHECK_THROWS_AS(rope_apply(odd, 3, 10000.0), std::invalid_argument);
}

TEST_CASE("config validation") {
    ModelConfig cfg = micro_config(Mechanism::TRA);
    cfg.n_heads = 3;  // d_model 16 not divisible
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    ModelConfig odd = micro_config(Mechanism::TRA);
    odd.d_model = 6;
    odd.n_heads = 2;  // head_dim 3 is odd
    CHECK_THROWS_AS(odd.validate(), std::invalid_argument);

    ModelConfig stream_softmax = micro_config(Mechanism::Softmax);
    stream_softmax.use_streaming = true;
    CHECK_THROWS_AS(stream_softmax.validate(), std::invalid_argument);
}

TEST_CASE("block with zeroed output projections is a pure double norm") {
    auto model = LmModel<double>::build(micro_config(Mechanism::TRA));
    const auto& refs = model.layers[0];
    std::fill(model.params.param(refs.wo), model.params.param(refs.wo) + 16 * 16, 0.0);
    std::fill(model.params.param(refs.w2), model.params.param(refs.w2) + 64 * 16, 0.0);

    auto rng = make_engine(402);
    std::normal_distribution<double> dist;
    const std::int64_t T = 4;
    std::vector<double> x(static_cast<std::size_t>(T * 16));
    for (auto& v : x) v = dist(rng);

    auto out = model.block_forward(0, x, T);
    for (std::int64_t i = 0; i < T; ++i) {
        std::vector<double> once(16), twice(16);
        rmsnorm<double>(x.data() + i * 16, nullptr, 16, model.cfg.attn.norm_epsilon, once.data());
        rmsnorm<double>(once.data(), nullptr, 16, model.cfg.attn.norm_epsilon, twice.data());
        for (int e = 0; e < 16; ++e) CHECK(out[i * 16 + e] == doctest::Approx(twice[e]).epsilon(1e-12));
    }
}

TEST_CASE("model TRA attention agrees with the dense reference oracle") {
    auto model = LmModel<double>::build(micro_config(Mechanism::TRA));
    auto toks = micro_tokens();
    SeqWork<double> work;
    model.forward_seq(toks, work);

    const int H = 2, d = 8, C = 16;
    const std::int64_t T = static_cast<std::int64_t>(toks.size());
    for (int l = 0; l < 2; ++l) {
        const auto& L = work.layers[l];
        AttnBatch<double> packed;
        packed.q = Array4<double>(1, H, T, d);
        packed.k = Array4<double>(1, H, T, d);
        packed.v = Array4<double>(1, H, T, d);
        for (int h = 0; h < H; ++h)
            for (std::int64_t t = 0; t < T; ++t)
                for (int e = 0; e < d; ++e) {
                    packed.q.row(0, h, t)[e] = L.qr[t * C + h * d + e];
                    packed.k.row(0, h, t)[e] = L.kr[t * C + h * d + e];
                    packed.v.row(0, h, t)[e] = L.v[t * C + h * d + e];
                }
        AttnParams p = model.cfg.attn;
        p.beta = model.beta_value(l, 0);
        auto oracle = tra_dense(packed, p);
        // model stores the rectified margin; compare weights after the power
        for (int h = 0; h < H; ++h)
            for (std::int64_t i = 0; i < T; ++i)
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double r = L.att1[(static_cast<std::size_t>(h) * T + i) * T + j];
                    const double w = r > 0.0 ? pow_int(r, p.power) : 0.0;
                    CHECK(w == doctest::Approx(oracle.weights.row(0, h, i)[j]).epsilon(1e-9));
                }
        // and the pre-norm aggregation matches sum w * v
        for (int h = 0; h < H; ++h)
            for (std::int64_t i = 0; i < T; ++i)
                for (int e = 0; e < d; ++e) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j)
                        acc += oracle.weights.row(0, h, i)[j] * packed.v.row(0, h, j)[e];
                    CHECK(L.agg[i * C + h * d + e] == doctest::Approx(acc).epsilon(1e-9));
                }
    }
}

TEST_CASE("TDA with clamped-to-zero lambda equals TRA with shared parameters") {
    ModelConfig tda_cfg = micro_config(Mechanism::TDA);
    tda_cfg.attn.lambda = -0.3;  // effective lambda 0
    auto tda = LmModel<double>::build(tda_cfg);
    auto tra = LmModel<double>::build(micro_config(Mechanism::TRA));
    // copy every shared parameter by name so only the dormant view differs
    for (const auto& e : tra.params.entries) {
        const auto* src = tda.params.find(e.name);
        REQUIRE(src != nullptr);
        std::copy(tda.params.w.data() + src->offset, tda.params.w.data() + src->offset + src->count,
                  tra.params.w.data() + e.offset);
    }
    auto toks = micro_tokens();
    SeqWork<double> wa, wb;
    tda.forward_seq(toks, wa);
    tra.forward_seq(toks, wb);
    for (std::size_t i = 0; i < wa.logits.size(); ++i)
        CHECK(wa.logits[i] == doctest::Approx(wb.logits[i]).epsilon(1e-6));
}

TEST_CASE("forward is deterministic across fresh builds and matches the recorded golden") {
    const auto cfg = micro_config(Mechanism::TDA);
    auto a = LmModel<float>::build(cfg);
    auto b = LmModel<float>::build(cfg);
    auto toks = micro_tokens();
    SeqWork<float> wa, wb;
    a.forward_seq(toks, wa);
    b.forward_seq(toks, wb);
    REQUIRE(wa.logits.size() == wb.logits.size());
    for (std::size_t i = 0; i < wa.logits.size(); ++i) CHECK(wa.logits[i] == wb.logits[i]);

    // FNV-1a over logits bit patterns, recorded from the first verified build
    // (guarded by the dense-oracle test above). Sensitive to compiler flags;
    // re-record if the toolchain changes.
    std::uint64_t h = 1469598103934665603ULL;
    for (const float x : wa.logits) {
        std::uint32_t bits;
        std::memcpy(&bits, &x, 4);
        for (int byte = 0; byte < 4; ++byte) {
            h ^= (bits >> (8 * byte)) & 0xff;
            h *= 1099511628211ULL;
        }
    }
    CHECK(h == 0x2a12a0e85c52a37dULL);
}

TEST_CASE("untrained model validation loss is near ln(vocab)") {
    auto model = Model::build(micro_config(Mechanism::TDA));
    auto rng = make_engine(403);
    std::vector<std::uint8_t> toks(8), tgts(8);
    double loss = 0.0;
    const int reps = 16;
    SeqWork<float> work;
    for (int r = 0; r < reps; ++r) {
        for (auto& t : toks) t = static_cast<std::uint8_t>(rng() % 256);
        for (auto& t : tgts) t = static_cast<std::uint8_t>(rng() % 256);
        loss += model.forward_seq(toks, work, tgts);
    }
    loss /= reps;
    CHECK(loss == doctest::Approx(std::log(256.0)).epsilon(0.1 / std::log(256.0)));
}

TEST_CASE("parameter counts outside attention are mechanism-independent") {
    const std::int64_t base = LmModel<float>::build(micro_config(Mechanism::Softmax))
                                  .non_attention_param_count();
    for (const Mechanism m : {Mechanism::ReLA, Mechanism::DiffSoftmax, Mechanism::TRA, Mechanism::TDA})
        CHECK(LmModel<float>::build(micro_config(m)).non_attention_param_count() == base);
}

TEST_CASE("full-parameter gradient check per mechanism (64-bit)") {
    auto toks = micro_tokens();
    std::vector<std::uint8_t> tgts = {101, 108, 108, 111, 33};
    for (const Mechanism mech : {Mechanism::Softmax, Mechanism::ReLA, Mechanism::DiffSoftmax,
                                 Mechanism::TRA, Mechanism::TDA}) {
        CAPTURE(mechanism_name(mech));
        auto model = LmModel<double>::build(micro_config(mech));
        SeqWork<double> work;
        model.params.zero_grad();
        model.forward_seq(toks, work, tgts);
        model.backward_seq(toks, tgts, work, 1.0);
        const std::vector<double> analytic = model.params.g;

        const double h = 1e-5;
        double diff_sq = 0.0, norm_sq = 0.0;
        for (std::size_t i = 0; i < model.params.w.size(); ++i) {
            const double keep = model.params.w[i];
            model.params.w[i] = keep + h;
            const double lp = model_loss(model, toks, tgts);
            model.params.w[i] = keep - h;
            const double lm = model_loss(model, toks, tgts);
            model.params.w[i] = keep;
            const double fd = (lp - lm) / (2.0 * h);
            diff_sq += (fd - analytic[i]) * (fd - analytic[i]);
            norm_sq += std::max(fd * fd, analytic[i] * analytic[i]);
        }
        const double rel = std::sqrt(diff_sq / std::max(norm_sq, 1e-300));
        CHECK(rel <= 1e-3);
    }
}

TEST_CASE("gradient of the threshold scale matches finite differences") {
    for (const Mechanism mech : {Mechanism::TRA, Mechanism::TDA}) {
        CAPTURE(mechanism_name(mech));
        auto model = LmModel<double>::build(micro_config(mech));
        auto toks = micro_tokens();
        std::vector<std::uint8_t> tgts = {1, 2, 3, 4, 5};
        SeqWork<double> work;
        model.params.zero_grad();
        model.forward_seq(toks, work, tgts);
        model.backward_seq(toks, tgts, work, 1.0);

        for (int l = 0; l < model.cfg.n_layers; ++l) {
            const auto& refs = model.layers[l];
            const double analytic = model.params.grad(refs.beta)[0];
            const double h = 1e-6;
            double* beta = model.params.param(refs.beta);
            const double keep = *beta;
            *beta = keep + h;
            const double lp = model_loss(model, toks, tgts);
            *beta = keep - h;
            const double lm = model_loss(model, toks, tgts);
            *beta = keep;
            const double fd = (lp - lm) / (2.0 * h);
            CHECK(std::fabs(fd - analytic) <= 1e-3 * std::max({std::fabs(fd), std::fabs(analytic), 1e-8}));
        }
    }
}

TEST_CASE("lambda gradient matches finite differences and respects the clamp") {
    auto model = LmModel<double>::build(micro_config(Mechanism::TDA));
    auto toks = micro_tokens();
    std::vector<std::uint8_t> tgts = {9, 8, 7, 6, 5};
    SeqWork<double> work;
    model.params.zero_grad();
    model.forward_seq(toks, work, tgts);
    model.backward_seq(toks, tgts, work, 1.0);
    for (int l = 0; l < model.cfg.n_layers; ++l) {
        const auto& refs = model.layers[l];
        const double analytic = model.params.grad(refs.lambda)[0];
        const double h = 1e-6;
        double* lam = model.params.param(refs.lambda);
        const double keep = *lam;
        *lam = keep + h;
        const double lp = model_loss(model, toks, tgts);
        *lam = keep - h;
        const double lm = model_loss(model, toks, tgts);
        *lam = keep;
        const double fd = (lp - lm) / (2.0 * h);
        CHECK(std::fabs(fd - analytic) <= 1e-4 * std::max({std::fabs(fd), std::fabs(analytic), 1e-8}));
    }

    // outside (0,1) the clamp kills the gradient
    ModelConfig clamped = micro_config(Mechanism::TDA);
    clamped.attn.lambda = 1.4;
    auto m2 = LmModel<double>::build(clamped);
    SeqWork<double> w2;
    m2.params.zero_grad();
    m2.forward_seq(toks, w2, tgts);
    m2.backward_seq(toks, tgts, w2, 1.0);
    for (int l = 0; l < m2.cfg.n_layers; ++l)
        CHECK(m2.params.grad(m2.layers[l].lambda)[0] == 0.0);
}

TEST_CASE("greedy decode basics") {
    auto model = Model::build(micro_config(Mechanism::Softmax));
    std::vector<std::uint8_t> prompt = {10, 20, 30};
    CHECK(model.greedy_decode(prompt, 0).empty());
    auto a = model.greedy_decode(prompt, 4);
    auto b = model.greedy_decode(prompt, 4);
    CHECK(a == b);
    CHECK_THROWS_AS(model.greedy_decode(prompt, 6), std::invalid_argument);  // 3 + 6 > 8
}

TEST_CASE("per-head beta allocates one scalar per head and trains per head") {
    ModelConfig cfg = micro_config(Mechanism::TRA);
    cfg.per_head_beta = true;
    auto model = LmModel<double>::build(cfg);
    CHECK(model.params.entries[model.layers[0].beta].count == 2);
    CHECK(model.beta_value(0, 0) == model.beta_value(0, 1));

    auto toks = micro_tokens();
    std::vector<std::uint8_t> tgts = {5, 5, 5, 5, 5};
    SeqWork<double> work;
    model.params.zero_grad();
    model.forward_seq(toks, work, tgts);
    model.backward_seq(toks, tgts, work, 1.0);
    const double h = 1e-6;
    for (int head = 0; head < 2; ++head) {
        const double analytic = model.params.grad(model.layers[0].beta)[head];
        double* beta = model.params.param(model.layers[0].beta) + head;
        const double keep = *beta;
        *beta = keep + h;
        const double lp = model_loss(model, toks, tgts);
        *beta = keep - h;
        const double lm = model_loss(model, toks, tgts);
        *beta = keep;
        const double fd = (lp - lm) / (2.0 * h);
        CHECK(std::fabs(fd - analytic) <= 1e-3 * std::max({std::fabs(fd), std::fabs(analytic), 1e-8}));
    }
}
