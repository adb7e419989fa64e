#include "tda/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "tda/tensor_ops.hpp"

namespace tda {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
    if (d_model < 1 || n_layers < 1 || n_heads < 1)
        throw std::invalid_argument("ModelConfig: dims must be >= 1");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    if (head_dim() % 2 != 0)
        throw std::invalid_argument("ModelConfig: head_dim must be even (RoPE pairs channels)");
    if (context_len < 1) throw std::invalid_argument("ModelConfig: context_len must be >= 1");
    if (!(rope_theta > 0.0)) throw std::invalid_argument("ModelConfig: rope_theta must be > 0");
    if (use_streaming && mechanism != Mechanism::TRA && mechanism != Mechanism::TDA)
        throw std::invalid_argument("ModelConfig: streaming path exists only for TRA/TDA");
    attn.validate();
    tiles.validate();
}

namespace {

template <typename Real>
void fill_normal(Real* p, std::size_t n, double std_dev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std_dev);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<Real>(dist(rng));
}

template <typename Real>
void fill_const(Real* p, std::size_t n, double v) {
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<Real>(v);
}

template <typename Real>
void resize_layer(typename SeqWork<Real>::Layer& L, const ModelConfig& cfg, std::int64_t T,
                  bool differential, bool dense_weights) {
    const std::size_t tc = static_cast<std::size_t>(T * cfg.d_model);
    const std::size_t tf = static_cast<std::size_t>(T * 4 * cfg.d_model);
    const std::size_t htt = static_cast<std::size_t>(cfg.n_heads) * T * T;
    auto rs = [](std::vector<Real>& v, std::size_t n) { v.assign(n, Real(0)); };
    rs(L.x_in, tc);
    rs(L.q, tc);
    rs(L.k, tc);
    rs(L.v, tc);
    rs(L.qr, tc);
    rs(L.kr, tc);
    if (differential) {
        rs(L.q2, tc);
        rs(L.k2, tc);
        rs(L.q2r, tc);
        rs(L.k2r, tc);
    }
    const bool tra_like =
        (cfg.mechanism == Mechanism::TRA || cfg.mechanism == Mechanism::TDA);
    if (tra_like) {
        rs(L.qh, tc);
        rs(L.kh, tc);
        if (differential) {
            rs(L.q2h, tc);
            rs(L.k2h, tc);
        }
    }
    if (dense_weights) {
        rs(L.att1, htt);
        if (differential) rs(L.att2, htt);
    } else {
        L.att1.clear();
        L.att2.clear();
        if (differential) rs(L.att2, tc);  // streaming TDA: stores the view-2 aggregation
    }
    rs(L.agg, tc);
    rs(L.head_out, tc);
    rs(L.attn_out, tc);
    rs(L.resid1, tc);
    rs(L.h1, tc);
    rs(L.ffn_pre, tf);
    rs(L.ffn_act, tf);
    rs(L.ffn_out, tc);
    rs(L.resid2, tc);
    rs(L.out, tc);
}

}  // namespace

template <typename Real>
LmModel<Real> LmModel<Real>::build(const ModelConfig& cfg) {
    cfg.validate();
    LmModel<Real> m;
    m.cfg = cfg;
    const int C = cfg.d_model, H = cfg.n_heads, d = cfg.head_dim(), F = 4 * cfg.d_model;
    auto& P = m.params;

    m.tok_emb = P.add("tok_emb", {cfg.vocab_size, C}, true);
    const bool diff = is_differential(cfg.mechanism);
    const bool tra_like = cfg.mechanism == Mechanism::TRA || cfg.mechanism == Mechanism::TDA;
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerRefs r;
        const std::string pre = "layer" + std::to_string(l) + ".";
        r.wq = P.add(pre + "attn.wq", {C, C}, true);
        r.wk = P.add(pre + "attn.wk", {C, C}, true);
        r.wv = P.add(pre + "attn.wv", {C, C}, true);
        r.wo = P.add(pre + "attn.wo", {C, C}, true);
        if (diff) {
            r.wq2 = P.add(pre + "attn.wq2", {C, C}, true);
            r.wk2 = P.add(pre + "attn.wk2", {C, C}, true);
        }
        if (tra_like) {
            r.out_gain = P.add(pre + "attn.out_gain", {H, d}, false);
            r.beta = P.add(pre + "attn.beta", {cfg.per_head_beta ? H : 1}, false);
        } else if (cfg.mechanism == Mechanism::ReLA) {
            r.out_gain = P.add(pre + "attn.out_gain", {H, d}, false);
            r.out_bias = P.add(pre + "attn.out_bias", {H, d}, false);
        }
        if (diff) r.lambda = P.add(pre + "attn.lambda", {1}, false);
        r.norm1 = P.add(pre + "norm1.gain", {C}, false);
        r.norm2 = P.add(pre + "norm2.gain", {C}, false);
        r.w1 = P.add(pre + "ffn.w1", {C, F}, true);
        r.w2 = P.add(pre + "ffn.w2", {F, C}, true);
        m.layers.push_back(r);
    }
    m.lm_head = P.add("lm_head", {C, cfg.vocab_size}, true);

    // init
    std::mt19937_64 rng(cfg.seed);
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);
    fill_normal(P.param(m.tok_emb), P.entries[m.tok_emb].count, base_std, rng);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& r = m.layers[l];
        fill_normal(P.param(r.wq), P.entries[r.wq].count, base_std, rng);
        fill_normal(P.param(r.wk), P.entries[r.wk].count, base_std, rng);
        fill_normal(P.param(r.wv), P.entries[r.wv].count, base_std, rng);
        fill_normal(P.param(r.wo), P.entries[r.wo].count, resid_std, rng);
        if (r.wq2 != kNoParam) {
            fill_normal(P.param(r.wq2), P.entries[r.wq2].count, base_std, rng);
            fill_normal(P.param(r.wk2), P.entries[r.wk2].count, base_std, rng);
        }
        if (r.out_gain != kNoParam) fill_const(P.param(r.out_gain), P.entries[r.out_gain].count, 1.0);
        if (r.out_bias != kNoParam) fill_const(P.param(r.out_bias), P.entries[r.out_bias].count, 0.0);
        if (r.beta != kNoParam) fill_const(P.param(r.beta), P.entries[r.beta].count, cfg.attn.beta);
        if (r.lambda != kNoParam) fill_const(P.param(r.lambda), P.entries[r.lambda].count, cfg.attn.lambda);
        fill_const(P.param(r.norm1), P.entries[r.norm1].count, 1.0);
        fill_const(P.param(r.norm2), P.entries[r.norm2].count, 1.0);
        fill_normal(P.param(r.w1), P.entries[r.w1].count, base_std, rng);
        fill_normal(P.param(r.w2), P.entries[r.w2].count, resid_std, rng);
    }
    fill_normal(P.param(m.lm_head), P.entries[m.lm_head].count, base_std, rng);

    m.rope = RopeTable<Real>(cfg.context_len, d, cfg.rope_theta);
    return m;
}

template <typename Real>
double LmModel<Real>::beta_value(int layer, int head) const {
    const auto& r = layers[layer];
    if (r.beta == kNoParam) return cfg.attn.beta;
    const Real* b = params.param(r.beta);
    return static_cast<double>(cfg.per_head_beta ? b[head] : b[0]);
}

template <typename Real>
double LmModel<Real>::lambda_raw(int layer) const {
    const auto& r = layers[layer];
    if (r.lambda == kNoParam) return cfg.attn.lambda;
    return static_cast<double>(params.param(r.lambda)[0]);
}

namespace {

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

// ---------------------------------------------------------------------------
// dense attention forward for one layer, all mechanisms
// ---------------------------------------------------------------------------
template <typename Real>
void attn_heads_forward_dense(const LmModel<Real>& m, int l, typename SeqWork<Real>::Layer& L,
                              std::int64_t T) {
    const ModelConfig& cfg = m.cfg;
    const int C = cfg.d_model, H = cfg.n_heads, d = cfg.head_dim();
    const int p = cfg.attn.power;
    const double kappa = cfg.attn.kappa;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const auto& refs = m.layers[l];
    const bool tra_like = cfg.mechanism == Mechanism::TRA || cfg.mechanism == Mechanism::TDA;
    const double lam = refs.lambda != kNoParam ? clamp01(m.lambda_raw(l)) : 0.0;

    // keys live transposed per head ([d, T] panels) so score rows vectorize
    std::vector<Real> kt(static_cast<std::size_t>(d) * T), k2t;
    if (is_differential(cfg.mechanism)) k2t.resize(static_cast<std::size_t>(d) * T);
    std::vector<Real> srow(static_cast<std::size_t>(T)), srow2(static_cast<std::size_t>(T));
    std::vector<double> drow(static_cast<std::size_t>(T)), drow2(static_cast<std::size_t>(T));

    auto transpose_head = [&](const std::vector<Real>& mat, int co, std::vector<Real>& out) {
        for (std::int64_t j = 0; j < T; ++j)
            for (int e = 0; e < d; ++e) out[static_cast<std::size_t>(e) * T + j] = mat[j * C + co + e];
    };
    auto score_row = [&](const Real* qrow, const std::vector<Real>& keys_t, std::int64_t count,
                         std::vector<Real>& out) {
        std::fill(out.begin(), out.begin() + count, Real(0));
        for (int e = 0; e < d; ++e) {
            const Real qe = qrow[e];
            const Real* krow = keys_t.data() + static_cast<std::size_t>(e) * T;
            for (std::int64_t j = 0; j < count; ++j) out[j] += qe * krow[j];
        }
    };

    for (int h = 0; h < H; ++h) {
        const int co = h * d;  // column offset of this head
        const double beta = m.beta_value(l, h);
        transpose_head(tra_like ? L.kh : L.kr, co, kt);
        if (cfg.mechanism == Mechanism::TDA)
            transpose_head(L.k2h, co, k2t);
        else if (cfg.mechanism == Mechanism::DiffSoftmax)
            transpose_head(L.k2r, co, k2t);

        for (std::int64_t i = 0; i < T; ++i) {
            const Real* qi = (tra_like ? L.qh.data() : L.qr.data()) + i * C + co;
            const Real* q2i = is_differential(cfg.mechanism)
                                  ? (cfg.mechanism == Mechanism::TDA ? L.q2h.data() : L.q2r.data()) +
                                        i * C + co
                                  : nullptr;
            Real* a1 = L.att1.data() + (static_cast<std::size_t>(h) * T + i) * T;
            Real* a2 = L.att2.empty() ? nullptr : L.att2.data() + (static_cast<std::size_t>(h) * T + i) * T;
            Real* agg = L.agg.data() + i * C + co;
            std::fill(agg, agg + d, Real(0));

            score_row(qi, kt, i + 1, srow);
            if (q2i) score_row(q2i, k2t, i + 1, srow2);

            switch (cfg.mechanism) {
                case Mechanism::Softmax: {
                    for (std::int64_t j = 0; j <= i; ++j) drow[j] = static_cast<double>(srow[j]) * scale;
                    softmax_visible(drow.data(), i + 1, a1);
                    break;
                }
                case Mechanism::ReLA: {
                    for (std::int64_t j = 0; j <= i; ++j) {
                        const double s = static_cast<double>(srow[j]) * scale;
                        a1[j] = s > 0.0 ? static_cast<Real>(s) : Real(0);
                    }
                    break;
                }
                case Mechanism::DiffSoftmax: {
                    for (std::int64_t j = 0; j <= i; ++j) {
                        drow[j] = static_cast<double>(srow[j]) * scale;
                        drow2[j] = static_cast<double>(srow2[j]) * scale;
                    }
                    softmax_visible(drow.data(), i + 1, a1);
                    softmax_visible(drow2.data(), i + 1, a2);
                    break;
                }
                case Mechanism::TRA:
                case Mechanism::TDA: {
                    const double tau = threshold_raw(i + 1, beta, kappa, d);
                    // att stores the rectified margin R = (s - tau)_+
                    for (std::int64_t j = 0; j <= i; ++j) {
                        const double x = static_cast<double>(srow[j]) - tau;
                        a1[j] = x > 0.0 ? static_cast<Real>(x) : Real(0);
                    }
                    if (cfg.mechanism == Mechanism::TDA)
                        for (std::int64_t j = 0; j <= i; ++j) {
                            const double x = static_cast<double>(srow2[j]) - tau;
                            a2[j] = x > 0.0 ? static_cast<Real>(x) : Real(0);
                        }
                    break;
                }
            }

            // aggregate sum_j w_ij v_j
            for (std::int64_t j = 0; j <= i; ++j) {
                Real w;
                switch (cfg.mechanism) {
                    case Mechanism::Softmax:
                    case Mechanism::ReLA:
                        w = a1[j];
                        break;
                    case Mechanism::DiffSoftmax:
                        w = static_cast<Real>(static_cast<double>(a1[j]) - lam * static_cast<double>(a2[j]));
                        break;
                    case Mechanism::TRA:
                        w = a1[j] != Real(0) ? static_cast<Real>(pow_int(static_cast<double>(a1[j]), p))
                                             : Real(0);
                        break;
                    default: {  // TDA
                        double wv = a1[j] != Real(0) ? pow_int(static_cast<double>(a1[j]), p) : 0.0;
                        if (a2[j] != Real(0)) wv -= lam * pow_int(static_cast<double>(a2[j]), p);
                        w = static_cast<Real>(wv);
                        break;
                    }
                }
                if (w == Real(0)) continue;
                const Real* vj = L.v.data() + j * C + co;
                for (int e = 0; e < d; ++e) agg[e] += w * vj[e];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// streaming attention forward (TRA / TDA) for one layer
// ---------------------------------------------------------------------------
template <typename Real>
void attn_heads_forward_streaming(const LmModel<Real>& m, int l, typename SeqWork<Real>::Layer& L,
                                  std::int64_t T) {
    const ModelConfig& cfg = m.cfg;
    const int C = cfg.d_model, H = cfg.n_heads, d = cfg.head_dim();
    const auto& refs = m.layers[l];
    const double lam = refs.lambda != kNoParam ? clamp01(m.lambda_raw(l)) : 0.0;

    AttnBatch<Real> view;
    view.q = Array4<Real>(1, 1, T, d);
    view.k = Array4<Real>(1, 1, T, d);
    view.v = Array4<Real>(1, 1, T, d);
    Array4<Real> o(1, 1, T, d);

    for (int h = 0; h < H; ++h) {
        const int co = h * d;
        AttnParams hp = cfg.attn;
        hp.beta = m.beta_value(l, h);
        for (std::int64_t i = 0; i < T; ++i) {
            std::copy(L.qr.data() + i * C + co, L.qr.data() + i * C + co + d, view.q.row(0, 0, i));
            std::copy(L.kr.data() + i * C + co, L.kr.data() + i * C + co + d, view.k.row(0, 0, i));
            std::copy(L.v.data() + i * C + co, L.v.data() + i * C + co + d, view.v.row(0, 0, i));
        }
        tra_forward_streaming(view, hp, cfg.tiles, o, /*normalize=*/true);
        for (std::int64_t i = 0; i < T; ++i)
            std::copy(o.row(0, 0, i), o.row(0, 0, i) + d, L.agg.data() + i * C + co);

        if (cfg.mechanism == Mechanism::TDA) {
            for (std::int64_t i = 0; i < T; ++i) {
                std::copy(L.q2r.data() + i * C + co, L.q2r.data() + i * C + co + d, view.q.row(0, 0, i));
                std::copy(L.k2r.data() + i * C + co, L.k2r.data() + i * C + co + d, view.k.row(0, 0, i));
            }
            tra_forward_streaming(view, hp, cfg.tiles, o, /*normalize=*/true);
            for (std::int64_t i = 0; i < T; ++i) {
                Real* o2row = L.att2.data() + i * C + co;  // view-2 aggregation, kept for backward
                Real* aggrow = L.agg.data() + i * C + co;
                for (int e = 0; e < d; ++e) {
                    o2row[e] = o.row(0, 0, i)[e];
                    aggrow[e] = static_cast<Real>(static_cast<double>(aggrow[e]) -
                                                  lam * static_cast<double>(o2row[e]));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// dense attention backward for one layer; fills d_qr/d_kr (+view2), d_v and
// the scalar grads. d_agg holds the upstream gradient of L.agg.
// ---------------------------------------------------------------------------
template <typename Real>
void attn_heads_backward_dense(LmModel<Real>& m, int l, typename SeqWork<Real>::Layer& L,
                               SeqWork<Real>& W, std::int64_t T) {
    const ModelConfig& cfg = m.cfg;
    const int C = cfg.d_model, H = cfg.n_heads, d = cfg.head_dim();
    const int p = cfg.attn.power;
    const double kappa = cfg.attn.kappa;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    auto& refs = m.layers[l];
    const bool tra_like = cfg.mechanism == Mechanism::TRA || cfg.mechanism == Mechanism::TDA;
    const double lam_raw = refs.lambda != kNoParam ? m.lambda_raw(l) : 0.0;
    const double lam = clamp01(lam_raw);

    std::vector<Real> da_r(static_cast<std::size_t>(T));
    std::vector<double> da(static_cast<std::size_t>(T));
    std::vector<Real> vt(static_cast<std::size_t>(d) * T);
    double dlam_acc = 0.0;

    for (int h = 0; h < H; ++h) {
        const int co = h * d;
        double dbeta_acc = 0.0;
        for (std::int64_t j = 0; j < T; ++j)
            for (int e = 0; e < d; ++e) vt[static_cast<std::size_t>(e) * T + j] = L.v[j * C + co + e];
        for (std::int64_t i = 0; i < T; ++i) {
            const Real* dagg = W.d_agg.data() + i * C + co;
            const Real* a1 = L.att1.data() + (static_cast<std::size_t>(h) * T + i) * T;
            const Real* a2 = L.att2.empty() ? nullptr
                                            : L.att2.data() + (static_cast<std::size_t>(h) * T + i) * T;

            // da_j = <d_agg_i, v_j> for visible j, computed against the transposed panel
            std::fill(da_r.begin(), da_r.begin() + i + 1, Real(0));
            for (int e = 0; e < d; ++e) {
                const Real ge = dagg[e];
                const Real* vrow = vt.data() + static_cast<std::size_t>(e) * T;
                for (std::int64_t j = 0; j <= i; ++j) da_r[j] += ge * vrow[j];
            }
            for (std::int64_t j = 0; j <= i; ++j) da[j] = static_cast<double>(da_r[j]);

            switch (cfg.mechanism) {
                case Mechanism::Softmax: {
                    double sig = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j) sig += da[j] * static_cast<double>(a1[j]);
                    const Real* qi = L.qr.data() + i * C + co;
                    Real* dqi = W.d_q.data() + i * C + co;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        const Real pj = a1[j];
                        if (pj != Real(0)) {
                            Real* dvj = W.d_v.data() + j * C + co;
                            for (int e = 0; e < d; ++e) dvj[e] += pj * dagg[e];
                        }
                        const Real ds = static_cast<Real>(static_cast<double>(pj) * (da[j] - sig) * scale);
                        const Real* kj = L.kr.data() + j * C + co;
                        Real* dkj = W.d_k.data() + j * C + co;
                        for (int e = 0; e < d; ++e) {
                            dqi[e] += ds * kj[e];
                            dkj[e] += ds * qi[e];
                        }
                    }
                    break;
                }
                case Mechanism::ReLA: {
                    const Real* qi = L.qr.data() + i * C + co;
                    Real* dqi = W.d_q.data() + i * C + co;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        const Real aj = a1[j];
                        if (aj == Real(0)) continue;  // dead rectifier
                        Real* dvj = W.d_v.data() + j * C + co;
                        for (int e = 0; e < d; ++e) dvj[e] += aj * dagg[e];
                        const Real ds = static_cast<Real>(da[j] * scale);
                        const Real* kj = L.kr.data() + j * C + co;
                        Real* dkj = W.d_k.data() + j * C + co;
                        for (int e = 0; e < d; ++e) {
                            dqi[e] += ds * kj[e];
                            dkj[e] += ds * qi[e];
                        }
                    }
                    break;
                }
                case Mechanism::DiffSoftmax: {
                    double sig1 = 0.0, sig2 = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        sig1 += da[j] * static_cast<double>(a1[j]);
                        sig2 += da[j] * static_cast<double>(a2[j]);
                        dlam_acc -= da[j] * static_cast<double>(a2[j]);
                        const Real w = static_cast<Real>(static_cast<double>(a1[j]) -
                                                         lam * static_cast<double>(a2[j]));
                        if (w != Real(0)) {
                            Real* dvj = W.d_v.data() + j * C + co;
                            for (int e = 0; e < d; ++e) dvj[e] += w * dagg[e];
                        }
                    }
                    const Real* q1i = L.qr.data() + i * C + co;
                    const Real* q2i = L.q2r.data() + i * C + co;
                    Real* dq1i = W.d_q.data() + i * C + co;
                    Real* dq2i = W.d_q2.data() + i * C + co;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        const Real ds1 =
                            static_cast<Real>(static_cast<double>(a1[j]) * (da[j] - sig1) * scale);
                        const Real ds2 =
                            static_cast<Real>(-lam * static_cast<double>(a2[j]) * (da[j] - sig2) * scale);
                        const Real* k1j = L.kr.data() + j * C + co;
                        const Real* k2j = L.k2r.data() + j * C + co;
                        Real* dk1j = W.d_k.data() + j * C + co;
                        Real* dk2j = W.d_k2.data() + j * C + co;
                        for (int e = 0; e < d; ++e) {
                            dq1i[e] += ds1 * k1j[e];
                            dk1j[e] += ds1 * q1i[e];
                            dq2i[e] += ds2 * k2j[e];
                            dk2j[e] += ds2 * q2i[e];
                        }
                    }
                    break;
                }
                case Mechanism::TRA:
                case Mechanism::TDA: {
                    double dtau_i = 0.0;
                    const Real* qi = L.qh.data() + i * C + co;
                    Real* dqi = W.d_q.data() + i * C + co;
                    const Real* q2i = cfg.mechanism == Mechanism::TDA ? L.q2h.data() + i * C + co : nullptr;
                    Real* dq2i = cfg.mechanism == Mechanism::TDA ? W.d_q2.data() + i * C + co : nullptr;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        const double r1 = static_cast<double>(a1[j]);
                        const double r2 = a2 ? static_cast<double>(a2[j]) : 0.0;
                        if (r1 == 0.0 && r2 == 0.0) continue;
                        double w = r1 > 0.0 ? pow_int(r1, p) : 0.0;
                        double w2v = 0.0;
                        if (cfg.mechanism == Mechanism::TDA && r2 > 0.0) {
                            w2v = pow_int(r2, p);
                            w -= lam * w2v;
                        }
                        if (w != 0.0) {
                            const Real wr = static_cast<Real>(w);
                            Real* dvj = W.d_v.data() + j * C + co;
                            for (int e = 0; e < d; ++e) dvj[e] += wr * dagg[e];
                        }
                        if (cfg.mechanism == Mechanism::TDA) dlam_acc -= da[j] * w2v;
                        if (r1 > 0.0) {
                            const double g1 = static_cast<double>(p) * pow_int(r1, p - 1);
                            const double ds1d = da[j] * g1;
                            dtau_i -= ds1d;
                            const Real ds1 = static_cast<Real>(ds1d);
                            const Real* kj = L.kh.data() + j * C + co;
                            Real* dkj = W.d_k.data() + j * C + co;
                            for (int e = 0; e < d; ++e) {
                                dqi[e] += ds1 * kj[e];
                                dkj[e] += ds1 * qi[e];
                            }
                        }
                        if (cfg.mechanism == Mechanism::TDA && r2 > 0.0) {
                            const double g2 = static_cast<double>(p) * pow_int(r2, p - 1);
                            const double ds2raw = da[j] * g2;
                            dtau_i += lam * ds2raw;  // tau is shared by both views
                            const Real ds2 = static_cast<Real>(-lam * ds2raw);
                            const Real* k2j = L.k2h.data() + j * C + co;
                            Real* dk2j = W.d_k2.data() + j * C + co;
                            for (int e = 0; e < d; ++e) {
                                dq2i[e] += ds2 * k2j[e];
                                dk2j[e] += ds2 * q2i[e];
                            }
                        }
                    }
                    dbeta_acc += dtau_i * threshold_raw(i + 1, 1.0, kappa, d);
                    break;
                }
            }
        }
        if (tra_like && refs.beta != kNoParam && cfg.attn.train_beta) {
            Real* gb = m.params.grad(refs.beta);
            gb[cfg.per_head_beta ? h : 0] += static_cast<Real>(dbeta_acc);
        }
    }
    if (refs.lambda != kNoParam && cfg.attn.train_lambda && lam_raw > 0.0 && lam_raw < 1.0)
        m.params.grad(refs.lambda)[0] += static_cast<Real>(dlam_acc);
}

// ---------------------------------------------------------------------------
// streaming attention backward (TRA / TDA): kernel grads chained through the
// L2 normalization, plus beta/lambda scalar grads.
// ---------------------------------------------------------------------------
template <typename Real>
void attn_heads_backward_streaming(LmModel<Real>& m, int l, typename SeqWork<Real>::Layer& L,
                                   SeqWork<Real>& W, std::int64_t T) {
    const ModelConfig& cfg = m.cfg;
    const int C = cfg.d_model, H = cfg.n_heads, d = cfg.head_dim();
    const double kappa = cfg.attn.kappa;
    auto& refs = m.layers[l];
    const double lam_raw = refs.lambda != kNoParam ? m.lambda_raw(l) : 0.0;
    const double lam = clamp01(lam_raw);

    AttnBatch<Real> view;
    view.q = Array4<Real>(1, 1, T, d);
    view.k = Array4<Real>(1, 1, T, d);
    view.v = Array4<Real>(1, 1, T, d);
    Array4<Real> upstream(1, 1, T, d), dtau(1, 1, T, 1);
    double dlam_acc = 0.0;

    for (int h = 0; h < H; ++h) {
        const int co = h * d;
        AttnParams hp = cfg.attn;
        hp.beta = m.beta_value(l, h);
        double dbeta_acc = 0.0;

        auto run_view = [&](const std::vector<Real>& qsrc, const std::vector<Real>& ksrc,
                            Real* dq_dst, Real* dk_dst, double upstream_scale) {
            for (std::int64_t i = 0; i < T; ++i) {
                std::copy(qsrc.data() + i * C + co, qsrc.data() + i * C + co + d, view.q.row(0, 0, i));
                std::copy(ksrc.data() + i * C + co, ksrc.data() + i * C + co + d, view.k.row(0, 0, i));
                std::copy(L.v.data() + i * C + co, L.v.data() + i * C + co + d, view.v.row(0, 0, i));
                const Real* dagg = W.d_agg.data() + i * C + co;
                for (int e = 0; e < d; ++e)
                    upstream.row(0, 0, i)[e] = static_cast<Real>(upstream_scale * static_cast<double>(dagg[e]));
            }
            GradTriple<Real> g =
                tra_backward_streaming(view, hp, upstream, cfg.tiles, /*normalize=*/true, nullptr, &dtau);
            // chain dq~ -> d(rope(q)) and accumulate
            Array4<Real> dq = l2_normalize_backward(view.q, g.dq);
            Array4<Real> dk = l2_normalize_backward(view.k, g.dk);
            for (std::int64_t i = 0; i < T; ++i) {
                for (int e = 0; e < d; ++e) {
                    dq_dst[i * C + co + e] += dq.row(0, 0, i)[e];
                    dk_dst[i * C + co + e] += dk.row(0, 0, i)[e];
                    W.d_v.data()[i * C + co + e] += g.dv.row(0, 0, i)[e];
                }
                dbeta_acc += static_cast<double>(*dtau.row(0, 0, i)) * threshold_raw(i + 1, 1.0, kappa, d);
            }
        };

        run_view(L.qr, L.kr, W.d_q.data(), W.d_k.data(), 1.0);
        if (cfg.mechanism == Mechanism::TDA && lam != 0.0)
            run_view(L.q2r, L.k2r, W.d_q2.data(), W.d_k2.data(), -lam);
        if (cfg.mechanism == Mechanism::TDA) {
            // d(lambda_c) = -<d_agg, O2>, with O2 the stored view-2 aggregation
            for (std::int64_t i = 0; i < T; ++i) {
                const Real* dagg = W.d_agg.data() + i * C + co;
                const Real* o2 = L.att2.data() + i * C + co;
                for (int e = 0; e < d; ++e)
                    dlam_acc -= static_cast<double>(dagg[e]) * static_cast<double>(o2[e]);
            }
        }

        if (refs.beta != kNoParam && cfg.attn.train_beta) {
            Real* gb = m.params.grad(refs.beta);
            gb[cfg.per_head_beta ? h : 0] += static_cast<Real>(dbeta_acc);
        }
    }
    if (refs.lambda != kNoParam && cfg.attn.train_lambda && lam_raw > 0.0 && lam_raw < 1.0)
        m.params.grad(refs.lambda)[0] += static_cast<Real>(dlam_acc);
}

// per-head output norm (RMSNorm for TRA/TDA, LayerNorm for ReLA, identity otherwise)
template <typename Real>
void head_norm_forward(const LmModel<Real>& m, int l, typename SeqWork<Real>::Layer& L, std::int64_t T) {
    const ModelConfig& cfg = m.cfg;
    const int C = cfg.d_model, H = cfg.n_heads, d = cfg.head_dim();
    const auto& refs = m.layers[l];
    if (refs.out_gain == kNoParam) {
        std::copy(L.agg.begin(), L.agg.end(), L.head_out.begin());
        return;
    }
    const Real* gain = m.params.param(refs.out_gain);
    const Real* bias = refs.out_bias != kNoParam ? m.params.param(refs.out_bias) : nullptr;
    for (std::int64_t i = 0; i < T; ++i)
        for (int h = 0; h < H; ++h) {
            const Real* x = L.agg.data() + i * C + h * d;
            Real* y = L.head_out.data() + i * C + h * d;
            if (cfg.mechanism == Mechanism::ReLA)
                layernorm_fwd(x, gain + h * d, bias + h * d, d, cfg.attn.norm_epsilon, y);
            else
                rmsnorm_fwd(x, gain + h * d, d, cfg.attn.norm_epsilon, y);
        }
}

template <typename Real>
void head_norm_backward(LmModel<Real>& m, int l, typename SeqWork<Real>::Layer& L, SeqWork<Real>& W,
                        std::int64_t T) {
    const ModelConfig& cfg = m.cfg;
    const int C = cfg.d_model, H = cfg.n_heads, d = cfg.head_dim();
    const auto& refs = m.layers[l];
    std::fill(W.d_agg.begin(), W.d_agg.end(), Real(0));
    if (refs.out_gain == kNoParam) {
        std::copy(W.d_head.begin(), W.d_head.end(), W.d_agg.begin());
        return;
    }
    const Real* gain = m.params.param(refs.out_gain);
    Real* dgain = m.params.grad(refs.out_gain);
    Real* dbias = refs.out_bias != kNoParam ? m.params.grad(refs.out_bias) : nullptr;
    for (std::int64_t i = 0; i < T; ++i)
        for (int h = 0; h < H; ++h) {
            const Real* x = L.agg.data() + i * C + h * d;
            const Real* dy = W.d_head.data() + i * C + h * d;
            Real* dx = W.d_agg.data() + i * C + h * d;
            if (cfg.mechanism == Mechanism::ReLA)
                layernorm_bwd(x, gain + h * d, dy, d, cfg.attn.norm_epsilon, dx, dgain + h * d,
                              dbias + h * d);
            else
                rmsnorm_bwd(x, gain + h * d, dy, d, cfg.attn.norm_epsilon, dx, dgain + h * d);
        }
}

// rope rotate all heads of every row of src into dst (dst may alias src)
template <typename Real>
void rope_all_heads(const RopeTable<Real>& rope, const std::vector<Real>& src, std::vector<Real>& dst,
                    std::int64_t T, int H, int d, bool transpose) {
    if (&dst != &src) std::copy(src.begin(), src.end(), dst.begin());
    for (std::int64_t i = 0; i < T; ++i)
        for (int h = 0; h < H; ++h) rope.rotate(dst.data() + i * (H * d) + h * d, i, transpose);
}

// normalize the per-head segments of every row (TRA/TDA score inputs)
template <typename Real>
void normalize_heads(const std::vector<Real>& src, std::vector<Real>& dst, std::int64_t T, int H, int d) {
    std::copy(src.begin(), src.end(), dst.begin());
    for (std::int64_t i = 0; i < T; ++i)
        for (int h = 0; h < H; ++h) l2_normalize_row(dst.data() + i * (H * d) + h * d, d);
}

// chain d(x_hat) -> d(x) for per-head normalized rows; accumulates into dx
template <typename Real>
void normalize_heads_backward(const std::vector<Real>& x, const std::vector<Real>& dxhat,
                              std::vector<Real>& dx, std::int64_t T, int H, int d) {
    for (std::int64_t i = 0; i < T; ++i)
        for (int h = 0; h < H; ++h) {
            const Real* xr = x.data() + i * (H * d) + h * d;
            const Real* gr = dxhat.data() + i * (H * d) + h * d;
            Real* out = dx.data() + i * (H * d) + h * d;
            double nrm = 0.0;
            for (int e = 0; e < d; ++e) nrm += static_cast<double>(xr[e]) * static_cast<double>(xr[e]);
            nrm = std::sqrt(nrm);
            const double inv = 1.0 / nrm;
            double proj = 0.0;
            for (int e = 0; e < d; ++e)
                proj += static_cast<double>(xr[e]) * inv * static_cast<double>(gr[e]);
            for (int e = 0; e < d; ++e)
                out[e] += static_cast<Real>((static_cast<double>(gr[e]) -
                                             static_cast<double>(xr[e]) * inv * proj) * inv);
        }
}

template <typename Real>
void layer_forward(const LmModel<Real>& m, int l, const std::vector<Real>& x_in,
                   typename SeqWork<Real>::Layer& L, std::int64_t T, bool force_dense) {
    const ModelConfig& cfg = m.cfg;
    const int C = cfg.d_model, H = cfg.n_heads, d = cfg.head_dim(), F = 4 * C;
    const auto& refs = m.layers[l];
    const auto& P = m.params;
    const bool diff = is_differential(cfg.mechanism);
    const bool tra_like = cfg.mechanism == Mechanism::TRA || cfg.mechanism == Mechanism::TDA;

    std::copy(x_in.begin(), x_in.end(), L.x_in.begin());
    gemm_nn(L.x_in.data(), P.param(refs.wq), L.q.data(), T, C, C, false);
    gemm_nn(L.x_in.data(), P.param(refs.wk), L.k.data(), T, C, C, false);
    gemm_nn(L.x_in.data(), P.param(refs.wv), L.v.data(), T, C, C, false);
    if (diff) {
        gemm_nn(L.x_in.data(), P.param(refs.wq2), L.q2.data(), T, C, C, false);
        gemm_nn(L.x_in.data(), P.param(refs.wk2), L.k2.data(), T, C, C, false);
    }
    rope_all_heads(m.rope, L.q, L.qr, T, H, d, false);
    rope_all_heads(m.rope, L.k, L.kr, T, H, d, false);
    if (diff) {
        rope_all_heads(m.rope, L.q2, L.q2r, T, H, d, false);
        rope_all_heads(m.rope, L.k2, L.k2r, T, H, d, false);
    }

    const bool streaming = cfg.use_streaming && !force_dense;
    if (tra_like && !streaming) {
        normalize_heads(L.qr, L.qh, T, H, d);
        normalize_heads(L.kr, L.kh, T, H, d);
        if (cfg.mechanism == Mechanism::TDA) {
            normalize_heads(L.q2r, L.q2h, T, H, d);
            normalize_heads(L.k2r, L.k2h, T, H, d);
        }
    }
    if (streaming)
        attn_heads_forward_streaming(m, l, L, T);
    else
        attn_heads_forward_dense(m, l, L, T);
    head_norm_forward(m, l, L, T);

    gemm_nn(L.head_out.data(), P.param(refs.wo), L.attn_out.data(), T, C, C, false);
    for (std::int64_t i = 0; i < T * C; ++i) L.resid1[i] = L.x_in[i] + L.attn_out[i];
    for (std::int64_t i = 0; i < T; ++i)
        rmsnorm_fwd(L.resid1.data() + i * C, P.param(refs.norm1), C, cfg.attn.norm_epsilon,
                    L.h1.data() + i * C);

    gemm_nn(L.h1.data(), P.param(refs.w1), L.ffn_pre.data(), T, C, F, false);
    for (std::int64_t i = 0; i < T * F; ++i) L.ffn_act[i] = gelu(L.ffn_pre[i]);
    gemm_nn(L.ffn_act.data(), P.param(refs.w2), L.ffn_out.data(), T, F, C, false);
    for (std::int64_t i = 0; i < T * C; ++i) L.resid2[i] = L.h1[i] + L.ffn_out[i];
    for (std::int64_t i = 0; i < T; ++i)
        rmsnorm_fwd(L.resid2.data() + i * C, P.param(refs.norm2), C, cfg.attn.norm_epsilon,
                    L.out.data() + i * C);
}

}  // namespace

template <typename Real>
double LmModel<Real>::forward_seq(std::span<const std::uint8_t> tokens, SeqWork<Real>& work,
                                  std::span<const std::uint8_t> targets) const {
    const std::int64_t T = static_cast<std::int64_t>(tokens.size());
    if (T < 1) throw std::invalid_argument("forward_seq: empty sequence");
    if (T > cfg.context_len) throw std::invalid_argument("forward_seq: sequence exceeds context_len");
    if (!targets.empty() && targets.size() != tokens.size())
        throw std::invalid_argument("forward_seq: targets size mismatch");
    const int C = cfg.d_model, V = cfg.vocab_size;
    const bool diff = is_differential(cfg.mechanism);
    const bool dense_weights = !cfg.use_streaming;

    work.t = T;
    work.x0.assign(static_cast<std::size_t>(T * C), Real(0));
    work.layers.resize(cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; ++l)
        resize_layer<Real>(work.layers[l], cfg, T, diff, dense_weights);
    work.logits.assign(static_cast<std::size_t>(T * V), Real(0));

    const Real* emb = params.param(tok_emb);
    for (std::int64_t i = 0; i < T; ++i)
        std::copy(emb + tokens[i] * C, emb + tokens[i] * C + C, work.x0.data() + i * C);

    const std::vector<Real>* x = &work.x0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        layer_forward(*this, l, *x, work.layers[l], T, /*force_dense=*/false);
        x = &work.layers[l].out;
    }
    gemm_nn(x->data(), params.param(lm_head), work.logits.data(), T, C, V, false);

    if (targets.empty()) return 0.0;
    work.probs.assign(static_cast<std::size_t>(T * V), Real(0));
    double loss = 0.0;
    for (std::int64_t i = 0; i < T; ++i) {
        const Real* row = work.logits.data() + i * V;
        double mx = static_cast<double>(row[0]);
        for (int v = 1; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
        double denom = 0.0;
        for (int v = 0; v < V; ++v) denom += std::exp(static_cast<double>(row[v]) - mx);
        const double logz = mx + std::log(denom);
        loss += logz - static_cast<double>(row[targets[i]]);
        Real* prow = work.probs.data() + i * V;
        for (int v = 0; v < V; ++v)
            prow[v] = static_cast<Real>(std::exp(static_cast<double>(row[v]) - logz));
    }
    return loss / static_cast<double>(T);
}

template <typename Real>
void LmModel<Real>::backward_seq(std::span<const std::uint8_t> tokens,
                                 std::span<const std::uint8_t> targets, SeqWork<Real>& work,
                                 double loss_scale) {
    const std::int64_t T = work.t;
    const int C = cfg.d_model, V = cfg.vocab_size, H = cfg.n_heads, d = cfg.head_dim(), F = 4 * C;
    const bool diff = is_differential(cfg.mechanism);
    const bool tra_like = cfg.mechanism == Mechanism::TRA || cfg.mechanism == Mechanism::TDA;
    auto& P = params;

    const std::size_t tc = static_cast<std::size_t>(T * C);
    auto rs = [](std::vector<Real>& v, std::size_t n) { v.assign(n, Real(0)); };
    rs(work.d_x, tc);
    rs(work.d_mid, tc);
    rs(work.d_q, tc);
    rs(work.d_k, tc);
    rs(work.d_v, tc);
    rs(work.d_agg, tc);
    rs(work.d_head, tc);
    rs(work.d_ffn, static_cast<std::size_t>(T * F));
    if (diff) {
        rs(work.d_q2, tc);
        rs(work.d_k2, tc);
    }

    // d logits = (probs - onehot) * loss_scale / T
    std::vector<Real> dlogits(static_cast<std::size_t>(T * V));
    const double sc = loss_scale / static_cast<double>(T);
    for (std::int64_t i = 0; i < T; ++i) {
        const Real* prow = work.probs.data() + i * V;
        Real* drow = dlogits.data() + i * V;
        for (int v = 0; v < V; ++v) drow[v] = static_cast<Real>(static_cast<double>(prow[v]) * sc);
        drow[targets[i]] -= static_cast<Real>(sc);
    }

    const std::vector<Real>& last = cfg.n_layers > 0 ? work.layers.back().out : work.x0;
    gemm_tn(last.data(), dlogits.data(), P.grad(lm_head), T, C, V, true);
    gemm_nt(dlogits.data(), P.param(lm_head), work.d_x.data(), T, V, C, false);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        auto& L = work.layers[l];
        const auto& refs = layers[l];

        // RMSNorm2
        std::fill(work.d_mid.begin(), work.d_mid.end(), Real(0));
        for (std::int64_t i = 0; i < T; ++i)
            rmsnorm_bwd(L.resid2.data() + i * C, P.param(refs.norm2), work.d_x.data() + i * C, C,
                        cfg.attn.norm_epsilon, work.d_mid.data() + i * C, P.grad(refs.norm2));
        // d_mid = d resid2 -> splits into d h1 (residual) and d ffn_out
        gemm_tn(L.ffn_act.data(), work.d_mid.data(), P.grad(refs.w2), T, F, C, true);
        gemm_nt(work.d_mid.data(), P.param(refs.w2), work.d_ffn.data(), T, C, F, false);
        for (std::int64_t i = 0; i < T * F; ++i)
            work.d_ffn[i] = static_cast<Real>(static_cast<double>(work.d_ffn[i]) *
                                              static_cast<double>(gelu_grad(L.ffn_pre[i])));
        gemm_tn(L.h1.data(), work.d_ffn.data(), P.grad(refs.w1), T, C, F, true);
        // d h1 = residual + through W1
        gemm_nt(work.d_ffn.data(), P.param(refs.w1), work.d_x.data(), T, F, C, false);
        for (std::int64_t i = 0; i < T * C; ++i) work.d_x[i] += work.d_mid[i];

        // RMSNorm1
        std::fill(work.d_mid.begin(), work.d_mid.end(), Real(0));
        for (std::int64_t i = 0; i < T; ++i)
            rmsnorm_bwd(L.resid1.data() + i * C, P.param(refs.norm1), work.d_x.data() + i * C, C,
                        cfg.attn.norm_epsilon, work.d_mid.data() + i * C, P.grad(refs.norm1));
        // d_mid = d resid1 -> d x_in (residual) and d attn_out
        gemm_tn(L.head_out.data(), work.d_mid.data(), P.grad(refs.wo), T, C, C, true);
        std::fill(work.d_head.begin(), work.d_head.end(), Real(0));
        gemm_nt(work.d_mid.data(), P.param(refs.wo), work.d_head.data(), T, C, C, false);

        head_norm_backward(*this, l, L, work, T);

        std::fill(work.d_q.begin(), work.d_q.end(), Real(0));
        std::fill(work.d_k.begin(), work.d_k.end(), Real(0));
        std::fill(work.d_v.begin(), work.d_v.end(), Real(0));
        if (diff) {
            std::fill(work.d_q2.begin(), work.d_q2.end(), Real(0));
            std::fill(work.d_k2.begin(), work.d_k2.end(), Real(0));
        }
        if (cfg.use_streaming)
            attn_heads_backward_streaming(*this, l, L, work, T);
        else
            attn_heads_backward_dense(*this, l, L, work, T);

        if (tra_like && !cfg.use_streaming) {
            // d_q currently holds d(q_hat); chain through the normalization
            std::vector<Real> dq_hat;
            dq_hat.swap(work.d_q);
            rs(work.d_q, tc);
            normalize_heads_backward(L.qr, dq_hat, work.d_q, T, H, d);
            dq_hat.swap(work.d_k);
            rs(work.d_k, tc);
            normalize_heads_backward(L.kr, dq_hat, work.d_k, T, H, d);
            if (cfg.mechanism == Mechanism::TDA) {
                dq_hat.swap(work.d_q2);
                rs(work.d_q2, tc);
                normalize_heads_backward(L.q2r, dq_hat, work.d_q2, T, H, d);
                dq_hat.swap(work.d_k2);
                rs(work.d_k2, tc);
                normalize_heads_backward(L.k2r, dq_hat, work.d_k2, T, H, d);
            }
        }

        // rope transpose
        rope_all_heads(rope, work.d_q, work.d_q, T, H, d, true);
        rope_all_heads(rope, work.d_k, work.d_k, T, H, d, true);
        if (diff) {
            rope_all_heads(rope, work.d_q2, work.d_q2, T, H, d, true);
            rope_all_heads(rope, work.d_k2, work.d_k2, T, H, d, true);
        }

        // projections; d x_in accumulates the residual of d resid1
        gemm_tn(L.x_in.data(), work.d_q.data(), P.grad(refs.wq), T, C, C, true);
        gemm_tn(L.x_in.data(), work.d_k.data(), P.grad(refs.wk), T, C, C, true);
        gemm_tn(L.x_in.data(), work.d_v.data(), P.grad(refs.wv), T, C, C, true);
        std::fill(work.d_x.begin(), work.d_x.end(), Real(0));
        gemm_nt(work.d_q.data(), P.param(refs.wq), work.d_x.data(), T, C, C, true);
        gemm_nt(work.d_k.data(), P.param(refs.wk), work.d_x.data(), T, C, C, true);
        gemm_nt(work.d_v.data(), P.param(refs.wv), work.d_x.data(), T, C, C, true);
        if (diff) {
            gemm_tn(L.x_in.data(), work.d_q2.data(), P.grad(refs.wq2), T, C, C, true);
            gemm_tn(L.x_in.data(), work.d_k2.data(), P.grad(refs.wk2), T, C, C, true);
            gemm_nt(work.d_q2.data(), P.param(refs.wq2), work.d_x.data(), T, C, C, true);
            gemm_nt(work.d_k2.data(), P.param(refs.wk2), work.d_x.data(), T, C, C, true);
        }
        for (std::int64_t i = 0; i < T * C; ++i) work.d_x[i] += work.d_mid[i];
    }

    // embedding
    Real* demb = P.grad(tok_emb);
    for (std::int64_t i = 0; i < T; ++i) {
        const Real* dx = work.d_x.data() + i * C;
        Real* row = demb + tokens[i] * C;
        for (int c = 0; c < C; ++c) row[c] += dx[c];
    }
}

template <typename Real>
std::vector<Real> LmModel<Real>::block_forward(int layer, std::span<const Real> x, std::int64_t t) const {
    if (layer < 0 || layer >= cfg.n_layers) throw std::invalid_argument("block_forward: bad layer");
    if (t > cfg.context_len) throw std::invalid_argument("block_forward: sequence exceeds context_len");
    typename SeqWork<Real>::Layer L;
    resize_layer<Real>(L, cfg, t, is_differential(cfg.mechanism), !cfg.use_streaming);
    std::vector<Real> xin(x.begin(), x.end());
    layer_forward(*this, layer, xin, L, t, /*force_dense=*/false);
    return L.out;
}

template <typename Real>
std::vector<WeightMatrix> LmModel<Real>::collect_weights(std::span<const std::uint8_t> tokens) const {
    const std::int64_t T = static_cast<std::int64_t>(tokens.size());
    if (T < 1 || T > cfg.context_len) throw std::invalid_argument("collect_weights: bad length");
    const int C = cfg.d_model, H = cfg.n_heads;
    const bool diff = is_differential(cfg.mechanism);

    // run the dense path regardless of cfg.use_streaming so weights materialize
    SeqWork<Real> work;
    work.t = T;
    work.x0.assign(static_cast<std::size_t>(T * C), Real(0));
    work.layers.resize(cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; ++l) resize_layer<Real>(work.layers[l], cfg, T, diff, true);
    const Real* emb = params.param(tok_emb);
    for (std::int64_t i = 0; i < T; ++i)
        std::copy(emb + tokens[i] * C, emb + tokens[i] * C + C, work.x0.data() + i * C);
    const std::vector<Real>* x = &work.x0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        layer_forward(*this, l, *x, work.layers[l], T, /*force_dense=*/true);
        x = &work.layers[l].out;
    }

    const int p = cfg.attn.power;
    std::vector<WeightMatrix> out;
    out.reserve(static_cast<std::size_t>(cfg.n_layers) * H);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& L = work.layers[l];
        const double lam = layers[l].lambda != kNoParam ? clamp01(lambda_raw(l)) : 0.0;
        for (int h = 0; h < H; ++h) {
            WeightMatrix w;
            w.layer = l;
            w.head = h;
            w.t = T;
            w.a.assign(static_cast<std::size_t>(T * T), 0.0);
            for (std::int64_t i = 0; i < T; ++i)
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double r1 =
                        static_cast<double>(L.att1[(static_cast<std::size_t>(h) * T + i) * T + j]);
                    double val = 0.0;
                    switch (cfg.mechanism) {
                        case Mechanism::Softmax:
                        case Mechanism::ReLA:
                            val = r1;
                            break;
                        case Mechanism::DiffSoftmax: {
                            const double r2 = static_cast<double>(
                                L.att2[(static_cast<std::size_t>(h) * T + i) * T + j]);
                            val = r1 - lam * r2;
                            break;
                        }
                        case Mechanism::TRA:
                            val = r1 > 0.0 ? pow_int(r1, p) : 0.0;
                            break;
                        case Mechanism::TDA: {
                            const double r2 = static_cast<double>(
                                L.att2[(static_cast<std::size_t>(h) * T + i) * T + j]);
                            val = (r1 > 0.0 ? pow_int(r1, p) : 0.0) -
                                  lam * (r2 > 0.0 ? pow_int(r2, p) : 0.0);
                            break;
                        }
                    }
                    w.a[i * T + j] = val;
                }
            out.push_back(std::move(w));
        }
    }
    return out;
}

template <typename Real>
std::vector<std::uint8_t> LmModel<Real>::greedy_decode(std::span<const std::uint8_t> prompt,
                                                       int max_new) const {
    if (prompt.empty()) throw std::invalid_argument("greedy_decode: empty prompt");
    if (static_cast<std::int64_t>(prompt.size()) + max_new > cfg.context_len)
        throw std::invalid_argument("greedy_decode: prompt length + max_new exceeds context_len");
    std::vector<std::uint8_t> tokens(prompt.begin(), prompt.end());
    std::vector<std::uint8_t> generated;
    SeqWork<Real> work;
    for (int step = 0; step < max_new; ++step) {
        forward_seq(tokens, work);
        const Real* row = work.logits.data() + (static_cast<std::int64_t>(tokens.size()) - 1) * cfg.vocab_size;
        int best = 0;
        for (int v = 1; v < cfg.vocab_size; ++v)
            if (row[v] > row[best]) best = v;  // ties resolve to the lowest id
        tokens.push_back(static_cast<std::uint8_t>(best));
        generated.push_back(static_cast<std::uint8_t>(best));
    }
    return generated;
}

template <typename Real>
std::int64_t LmModel<Real>::non_attention_param_count() const {
    std::int64_t n = 0;
    for (const auto& e : params.entries)
        if (e.name.find("attn.") == std::string::npos) n += static_cast<std::int64_t>(e.count);
    return n;
}

template struct LmModel<float>;
template struct LmModel<double>;

}  // namespace tda
