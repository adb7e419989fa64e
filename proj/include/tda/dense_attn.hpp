#pragma once

// Dense reference implementations of all attention mechanisms. These
// materialize the full weight matrix and serve as the correctness oracle for
// the streaming kernel, so clarity and wide accumulation win over speed here.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "tda/attn_params.hpp"
#include "tda/batch.hpp"

namespace tda {

template <typename Real>
inline double dot_wide(const Real* a, const Real* b, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

// Euclidean row norm in double.
template <typename Real>
inline double row_norm(const Real* x, std::int64_t n) {
    return std::sqrt(dot_wide(x, x, n));
}

// L2-normalize every length-d row of x in place. Throws on a zero-norm row,
// naming the flat row index of the offender.
template <typename Real>
inline void l2_normalize_rows(Array4<Real>& x) {
    const std::int64_t rows = x.b * x.h * x.t;
    for (std::int64_t r = 0; r < rows; ++r) {
        Real* p = x.data.data() + r * x.d;
        const double nrm = row_norm(p, x.d);
        if (!(nrm > 0.0))
            throw std::invalid_argument("l2_normalize_rows: zero-norm row at (b=" +
                                        std::to_string(r / (x.h * x.t)) + ", h=" +
                                        std::to_string((r / x.t) % x.h) + ", t=" +
                                        std::to_string(r % x.t) + ")");
        const double inv = 1.0 / nrm;
        for (std::int64_t i = 0; i < x.d; ++i) p[i] = static_cast<Real>(static_cast<double>(p[i]) * inv);
    }
}

// Single-row variant used by tests and the tiny LM.
template <typename Real>
inline void l2_normalize_row(Real* x, std::int64_t n) {
    const double nrm = row_norm(x, n);
    if (!(nrm > 0.0)) throw std::invalid_argument("l2_normalize_row: zero-norm row");
    const double inv = 1.0 / nrm;
    for (std::int64_t i = 0; i < n; ++i) x[i] = static_cast<Real>(static_cast<double>(x[i]) * inv);
}

// y_k = gain_k * x_k / sqrt(mean(x^2) + eps); rmsnorm(0) = 0.
template <typename Real>
inline void rmsnorm(const Real* x, const Real* gain, std::int64_t n, double eps, Real* y) {
    const double ms = dot_wide(x, x, n) / static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (std::int64_t i = 0; i < n; ++i) {
        const double g = gain ? static_cast<double>(gain[i]) : 1.0;
        y[i] = static_cast<Real>(g * static_cast<double>(x[i]) * inv);
    }
}

// Standard LayerNorm with optional gain/bias (the ReLA output norm).
template <typename Real>
inline void layernorm(const Real* x, const Real* gain, const Real* bias, std::int64_t n, double eps,
                      Real* y) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += static_cast<double>(x[i]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double c = static_cast<double>(x[i]) - mean;
        var += c * c;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < n; ++i) {
        const double g = gain ? static_cast<double>(gain[i]) : 1.0;
        const double b = bias ? static_cast<double>(bias[i]) : 0.0;
        y[i] = static_cast<Real>(g * (static_cast<double>(x[i]) - mean) * inv + b);
    }
}

// Causal row softmax over scores[0..i]; writes probabilities into out.
template <typename Real>
inline void softmax_visible(const double* scores, std::int64_t count, Real* out) {
    double mx = scores[0];
    for (std::int64_t j = 1; j < count; ++j) mx = std::max(mx, scores[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < count; ++j) denom += std::exp(scores[j] - mx);
    for (std::int64_t j = 0; j < count; ++j)
        out[j] = static_cast<Real>(std::exp(scores[j] - mx) / denom);
}

namespace detail {

// Aggregate out_i = sum_j w_ij * v_j for one (b,h), wide accumulation.
template <typename Real>
inline void aggregate_row(const Real* w_row, std::int64_t count, const Array4<Real>& v,
                          std::int64_t bi, std::int64_t hi, double* acc, std::int64_t d) {
    for (std::int64_t i = 0; i < d; ++i) acc[i] = 0.0;
    for (std::int64_t j = 0; j < count; ++j) {
        const double w = static_cast<double>(w_row[j]);
        if (w == 0.0) continue;
        const Real* vr = v.row(bi, hi, j);
        for (std::int64_t i = 0; i < d; ++i) acc[i] += w * static_cast<double>(vr[i]);
    }
}

// Shared score machinery: fills result.weights for one thresholded view.
// q,k must already be L2-normalized. Weights are (s - tau_i)_+^p, exact zero
// under the causal mask.
template <typename Real>
inline void tra_weights_view(const Array4<Real>& qn, const Array4<Real>& kn, const AttnParams& params,
                             Array4<Real>& w) {
    const std::int64_t B = qn.b, H = qn.h, T = qn.t, d = qn.d;
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi)
            for (std::int64_t i = 0; i < T; ++i) {
                Real* wr = w.row(bi, hi, i);
                const double tau = threshold_raw(i + 1, params.beta, params.kappa, static_cast<int>(d));
                const Real* qi = qn.row(bi, hi, i);
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double s = dot_wide(qi, kn.row(bi, hi, j), d);
                    const double x = s - tau;
                    wr[j] = x > 0.0 ? static_cast<Real>(pow_int(x, params.power)) : Real(0);
                }
                // masked tail stays exactly zero
            }
}

}  // namespace detail

// Threshold Rectified Attention, dense reference.
// Per row i: s_ij = <q~_i, k~_j>; a_ij = (s_ij - tau_i)_+^p for j <= i;
// output_i = RMSNorm(sum_j a_ij v_j) with unit gain.
template <typename Real>
inline AttnResult<Real> tra_dense(const AttnBatch<Real>& batch, const AttnParams& params) {
    batch.validate();
    params.validate();
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;

    Array4<Real> qn = batch.q, kn = batch.k;
    l2_normalize_rows(qn);
    l2_normalize_rows(kn);

    AttnResult<Real> res;
    res.mechanism = Mechanism::TRA;
    res.output = Array4<Real>(B, H, T, d);
    res.weights = Array4<Real>(B, H, T, T);
    detail::tra_weights_view(qn, kn, params, res.weights);

    std::vector<double> acc(static_cast<std::size_t>(d));
    std::vector<Real> agg(static_cast<std::size_t>(d));
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi)
            for (std::int64_t i = 0; i < T; ++i) {
                detail::aggregate_row(res.weights.row(bi, hi, i), i + 1, batch.v, bi, hi, acc.data(), d);
                for (std::int64_t c = 0; c < d; ++c) agg[c] = static_cast<Real>(acc[c]);
                rmsnorm<Real>(agg.data(), nullptr, d, params.norm_epsilon, res.output.row(bi, hi, i));
            }
    return res;
}

// Threshold Differential Attention, dense reference.
// Both views share tau_i; delta_a = a1 - clamp(lambda) * a2; output is the
// RMSNormed aggregation of the signed weights.
template <typename Real>
inline AttnResult<Real> tda_dense(const AttnBatch<Real>& batch, const AttnParams& params) {
    batch.validate(/*need_second_view=*/true);
    params.validate();
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;
    const double lam = params.lambda_clamped();

    Array4<Real> q1 = batch.q, k1 = batch.k, q2 = batch.q2, k2 = batch.k2;
    l2_normalize_rows(q1);
    l2_normalize_rows(k1);
    l2_normalize_rows(q2);
    l2_normalize_rows(k2);

    AttnResult<Real> res;
    res.mechanism = Mechanism::TDA;
    res.output = Array4<Real>(B, H, T, d);
    res.weights = Array4<Real>(B, H, T, T);
    Array4<Real> w2(B, H, T, T);
    detail::tra_weights_view(q1, k1, params, res.weights);
    detail::tra_weights_view(q2, k2, params, w2);
    for (std::size_t idx = 0; idx < res.weights.data.size(); ++idx)
        res.weights.data[idx] =
            static_cast<Real>(static_cast<double>(res.weights.data[idx]) - lam * static_cast<double>(w2.data[idx]));

    std::vector<double> acc(static_cast<std::size_t>(d));
    std::vector<Real> agg(static_cast<std::size_t>(d));
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi)
            for (std::int64_t i = 0; i < T; ++i) {
                detail::aggregate_row(res.weights.row(bi, hi, i), i + 1, batch.v, bi, hi, acc.data(), d);
                for (std::int64_t c = 0; c < d; ++c) agg[c] = static_cast<Real>(acc[c]);
                rmsnorm<Real>(agg.data(), nullptr, d, params.norm_epsilon, res.output.row(bi, hi, i));
            }
    return res;
}

// Row-stochastic causal softmax attention on S = QK^T * scale.
template <typename Real>
inline AttnResult<Real> softmax_dense(const AttnBatch<Real>& batch, double scale) {
    batch.validate();
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;

    AttnResult<Real> res;
    res.mechanism = Mechanism::Softmax;
    res.output = Array4<Real>(B, H, T, d);
    res.weights = Array4<Real>(B, H, T, T);

    std::vector<double> scores(static_cast<std::size_t>(T));
    std::vector<double> acc(static_cast<std::size_t>(d));
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi)
            for (std::int64_t i = 0; i < T; ++i) {
                const Real* qi = batch.q.row(bi, hi, i);
                for (std::int64_t j = 0; j <= i; ++j)
                    scores[j] = scale * dot_wide(qi, batch.k.row(bi, hi, j), d);
                Real* wr = res.weights.row(bi, hi, i);
                softmax_visible(scores.data(), i + 1, wr);
                detail::aggregate_row(wr, i + 1, batch.v, bi, hi, acc.data(), d);
                Real* out = res.output.row(bi, hi, i);
                for (std::int64_t c = 0; c < d; ++c) out[c] = static_cast<Real>(acc[c]);
            }
    return res;
}

// Rectified linear attention: A = max(S, 0), output LayerNorm(AV) (unit gain).
template <typename Real>
inline AttnResult<Real> rela_dense(const AttnBatch<Real>& batch, double scale, double norm_eps = 1e-6) {
    batch.validate();
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;

    AttnResult<Real> res;
    res.mechanism = Mechanism::ReLA;
    res.output = Array4<Real>(B, H, T, d);
    res.weights = Array4<Real>(B, H, T, T);

    std::vector<double> acc(static_cast<std::size_t>(d));
    std::vector<Real> agg(static_cast<std::size_t>(d));
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi)
            for (std::int64_t i = 0; i < T; ++i) {
                const Real* qi = batch.q.row(bi, hi, i);
                Real* wr = res.weights.row(bi, hi, i);
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double s = scale * dot_wide(qi, batch.k.row(bi, hi, j), d);
                    wr[j] = s > 0.0 ? static_cast<Real>(s) : Real(0);
                }
                detail::aggregate_row(wr, i + 1, batch.v, bi, hi, acc.data(), d);
                for (std::int64_t c = 0; c < d; ++c) agg[c] = static_cast<Real>(acc[c]);
                layernorm<Real>(agg.data(), nullptr, nullptr, d, norm_eps, res.output.row(bi, hi, i));
            }
    return res;
}

// Differential softmax attention: A = softmax(S1) - clamp(lambda) * softmax(S2).
template <typename Real>
inline AttnResult<Real> diff_softmax_dense(const AttnBatch<Real>& batch, const AttnParams& params,
                                           double scale) {
    batch.validate(/*need_second_view=*/true);
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;
    const double lam = params.lambda_clamped();

    AttnResult<Real> res;
    res.mechanism = Mechanism::DiffSoftmax;
    res.output = Array4<Real>(B, H, T, d);
    res.weights = Array4<Real>(B, H, T, T);

    std::vector<double> s1(static_cast<std::size_t>(T)), s2(static_cast<std::size_t>(T));
    std::vector<Real> p1(static_cast<std::size_t>(T)), p2(static_cast<std::size_t>(T));
    std::vector<double> acc(static_cast<std::size_t>(d));
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi)
            for (std::int64_t i = 0; i < T; ++i) {
                const Real* q1i = batch.q.row(bi, hi, i);
                const Real* q2i = batch.q2.row(bi, hi, i);
                for (std::int64_t j = 0; j <= i; ++j) {
                    s1[j] = scale * dot_wide(q1i, batch.k.row(bi, hi, j), d);
                    s2[j] = scale * dot_wide(q2i, batch.k2.row(bi, hi, j), d);
                }
                softmax_visible(s1.data(), i + 1, p1.data());
                softmax_visible(s2.data(), i + 1, p2.data());
                Real* wr = res.weights.row(bi, hi, i);
                for (std::int64_t j = 0; j <= i; ++j)
                    wr[j] = static_cast<Real>(static_cast<double>(p1[j]) - lam * static_cast<double>(p2[j]));
                detail::aggregate_row(wr, i + 1, batch.v, bi, hi, acc.data(), d);
                Real* out = res.output.row(bi, hi, i);
                for (std::int64_t c = 0; c < d; ++c) out[c] = static_cast<Real>(acc[c]);
            }
    return res;
}

}  // namespace tda
