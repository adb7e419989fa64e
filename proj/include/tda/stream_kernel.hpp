#pragma once

// Tile-blocked streaming TRA forward/backward and the TDA wrapper. The
// contract: no T x T intermediate is ever materialized; transient scratch per
// worker is O(B_M*B_N + (B_M+B_N)*d). All scratch goes through ScratchArena so
// tests and the bench can audit allocation sizes.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "tda/attn_params.hpp"
#include "tda/batch.hpp"
#include "tda/dense_attn.hpp"

namespace tda {

struct TileConfig {
    std::int64_t block_m = 64;  // query tile rows
    std::int64_t block_n = 64;  // key/value tile columns

    void validate() const {
        if (block_m < 1 || block_n < 1)
            throw std::invalid_argument("TileConfig: block sizes must be >= 1");
    }
};

template <typename Real>
struct GradTriple {
    Array4<Real> dq, dk, dv;
};

struct ScratchStats {
    std::size_t live_bytes = 0;
    std::size_t peak_bytes = 0;
    std::size_t max_request_bytes = 0;
    std::size_t max_request_elems = 0;
    std::size_t n_requests = 0;
};

// Instrumented scratch allocator. Buffers live until the arena dies; the
// kernels allocate a fixed set of tiles up front and reuse them, so this is
// not a hot path.
class ScratchArena {
  public:
    template <typename T>
    std::span<T> alloc(std::size_t n) {
        const std::size_t bytes = n * sizeof(T);
        stats_.n_requests += 1;
        stats_.live_bytes += bytes;
        stats_.peak_bytes = std::max(stats_.peak_bytes, stats_.live_bytes);
        stats_.max_request_bytes = std::max(stats_.max_request_bytes, bytes);
        stats_.max_request_elems = std::max(stats_.max_request_elems, n);
        blocks_.push_back(std::make_unique<std::byte[]>(bytes));
        T* p = reinterpret_cast<T*>(blocks_.back().get());
        std::fill(p, p + n, T{});
        return {p, n};
    }

    const ScratchStats& stats() const { return stats_; }

  private:
    std::vector<std::unique_ptr<std::byte[]>> blocks_;
    ScratchStats stats_;
};

namespace kernel_detail {

// Copy rows [start, start+count) of one (b,h) slice into a tile, optionally
// L2-normalizing each row.
template <typename Real>
inline void load_tile(const Array4<Real>& src, std::int64_t bi, std::int64_t hi, std::int64_t start,
                      std::int64_t count, bool normalize, std::span<Real> tile) {
    const std::int64_t d = src.d;
    for (std::int64_t r = 0; r < count; ++r) {
        const Real* in = src.row(bi, hi, start + r);
        Real* out = tile.data() + r * d;
        std::copy(in, in + d, out);
        if (normalize) {
            const double nrm = row_norm(out, d);
            if (!(nrm > 0.0))
                throw std::invalid_argument("streaming kernel: zero-norm row at (b=" +
                                            std::to_string(bi) + ", h=" + std::to_string(hi) +
                                            ", t=" + std::to_string(start + r) + ")");
            const double inv = 1.0 / nrm;
            for (std::int64_t c = 0; c < d; ++c)
                out[c] = static_cast<Real>(static_cast<double>(out[c]) * inv);
        }
    }
}

}  // namespace kernel_detail

// Streaming TRA forward. Returns the raw aggregation sum_j (s_ij - tau_i)_+^p v_j
// (the caller applies any output norm). Key tiles are processed in ascending
// order with index-order reductions inside each tile, so results are
// reproducible per tile config.
template <typename Real>
inline void tra_forward_streaming(const AttnBatch<Real>& batch, const AttnParams& params,
                                  const TileConfig& tiles, Array4<Real>& out, bool normalize = true,
                                  ScratchArena* arena = nullptr) {
    batch.validate();
    params.validate();
    tiles.validate();
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;
    if (!out.same_shape(batch.q)) out = Array4<Real>(B, H, T, d);

    ScratchArena local;
    ScratchArena& a = arena ? *arena : local;
    const std::int64_t bm = std::min(tiles.block_m, T);
    const std::int64_t bn = std::min(tiles.block_n, T);

    auto q_tile = a.template alloc<Real>(static_cast<std::size_t>(bm * d));
    auto k_tile = a.template alloc<Real>(static_cast<std::size_t>(bn * d));
    auto w_tile = a.template alloc<Real>(static_cast<std::size_t>(bm * bn));
    auto tau = a.template alloc<double>(static_cast<std::size_t>(bm));
    auto acc = a.template alloc<double>(static_cast<std::size_t>(bm * d));

    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi)
            for (std::int64_t m0 = 0; m0 < T; m0 += bm) {
                const std::int64_t rows = std::min(bm, T - m0);
                kernel_detail::load_tile(batch.q, bi, hi, m0, rows, normalize, q_tile);
                for (std::int64_t r = 0; r < rows; ++r)
                    tau[r] = threshold_raw(m0 + r + 1, params.beta, params.kappa, static_cast<int>(d));
                std::fill(acc.begin(), acc.begin() + rows * d, 0.0);

                const std::int64_t last_row = m0 + rows - 1;
                for (std::int64_t n0 = 0; n0 <= last_row; n0 += bn) {
                    const std::int64_t cols = std::min(bn, T - n0);
                    kernel_detail::load_tile(batch.k, bi, hi, n0, cols, normalize, k_tile);

                    // scores -> thresholded weights, masked entries exactly 0
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const Real* qr = q_tile.data() + r * d;
                        Real* wr = w_tile.data() + r * cols;
                        const std::int64_t visible = std::min(cols, m0 + r - n0 + 1);
                        for (std::int64_t c = 0; c < visible; ++c) {
                            const double s = dot_wide(qr, k_tile.data() + c * d, d);
                            const double x = s - tau[r];
                            wr[c] = x > 0.0 ? static_cast<Real>(pow_int(x, params.power)) : Real(0);
                        }
                        for (std::int64_t c = std::max<std::int64_t>(visible, 0); c < cols; ++c)
                            wr[c] = Real(0);
                    }

                    // acc += W * V_n
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const Real* wr = w_tile.data() + r * cols;
                        double* ar = acc.data() + r * d;
                        for (std::int64_t c = 0; c < cols; ++c) {
                            const double w = static_cast<double>(wr[c]);
                            if (w == 0.0) continue;
                            const Real* vr = batch.v.row(bi, hi, n0 + c);
                            for (std::int64_t e = 0; e < d; ++e) ar[e] += w * static_cast<double>(vr[e]);
                        }
                    }
                }
                for (std::int64_t r = 0; r < rows; ++r) {
                    Real* orow = out.row(bi, hi, m0 + r);
                    const double* ar = acc.data() + r * d;
                    for (std::int64_t e = 0; e < d; ++e) orow[e] = static_cast<Real>(ar[e]);
                }
            }
}

template <typename Real>
inline Array4<Real> tra_forward_streaming(const AttnBatch<Real>& batch, const AttnParams& params,
                                          const TileConfig& tiles, bool normalize = true,
                                          ScratchArena* arena = nullptr) {
    Array4<Real> out(batch.q.b, batch.q.h, batch.q.t, batch.q.d);
    tra_forward_streaming(batch, params, tiles, out, normalize, arena);
    return out;
}

// Streaming TRA backward. Recomputes scores tile by tile; returns gradients
// with respect to the (normalized, when normalize=true) q/k that feed the
// score product, plus dv. Chaining through the L2 normalization is the
// caller's job (l2_normalize_backward below). When dtau_out is non-null it
// receives d(loss)/d(tau_i) per row, shape [B,H,T,1], which callers use to
// train the threshold scale.
template <typename Real>
inline GradTriple<Real> tra_backward_streaming(const AttnBatch<Real>& batch, const AttnParams& params,
                                               const Array4<Real>& upstream, const TileConfig& tiles,
                                               bool normalize = true, ScratchArena* arena = nullptr,
                                               Array4<Real>* dtau_out = nullptr) {
    batch.validate();
    params.validate();
    tiles.validate();
    if (!upstream.same_shape(batch.q))
        throw std::invalid_argument("tra_backward_streaming: upstream shape mismatch");
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;
    const int p = params.power;

    GradTriple<Real> grads;
    grads.dq = Array4<Real>(B, H, T, d);
    grads.dk = Array4<Real>(B, H, T, d);
    grads.dv = Array4<Real>(B, H, T, d);
    if (dtau_out) *dtau_out = Array4<Real>(B, H, T, 1);

    ScratchArena local;
    ScratchArena& a = arena ? *arena : local;
    const std::int64_t bm = std::min(tiles.block_m, T);
    const std::int64_t bn = std::min(tiles.block_n, T);

    auto q_tile = a.template alloc<Real>(static_cast<std::size_t>(bm * d));
    auto k_tile = a.template alloc<Real>(static_cast<std::size_t>(bn * d));
    auto w_tile = a.template alloc<double>(static_cast<std::size_t>(bm * bn));
    auto g_tile = a.template alloc<double>(static_cast<std::size_t>(bm * bn));
    auto ds_tile = a.template alloc<double>(static_cast<std::size_t>(bm * bn));
    auto tau = a.template alloc<double>(static_cast<std::size_t>(bm));
    auto dq_acc = a.template alloc<double>(static_cast<std::size_t>(bm * d));
    auto dtau_acc = a.template alloc<double>(static_cast<std::size_t>(bm));

    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi)
            for (std::int64_t m0 = 0; m0 < T; m0 += bm) {
                const std::int64_t rows = std::min(bm, T - m0);
                kernel_detail::load_tile(batch.q, bi, hi, m0, rows, normalize, q_tile);
                for (std::int64_t r = 0; r < rows; ++r)
                    tau[r] = threshold_raw(m0 + r + 1, params.beta, params.kappa, static_cast<int>(d));
                std::fill(dq_acc.begin(), dq_acc.begin() + rows * d, 0.0);
                std::fill(dtau_acc.begin(), dtau_acc.begin() + rows, 0.0);

                const std::int64_t last_row = m0 + rows - 1;
                for (std::int64_t n0 = 0; n0 <= last_row; n0 += bn) {
                    const std::int64_t cols = std::min(bn, T - n0);
                    kernel_detail::load_tile(batch.k, bi, hi, n0, cols, normalize, k_tile);

                    // recompute W and the elementwise derivative G; both are
                    // exactly 0 under the mask and on the dead branch X <= 0
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const Real* qr = q_tile.data() + r * d;
                        double* wr = w_tile.data() + r * cols;
                        double* gr = g_tile.data() + r * cols;
                        const std::int64_t visible = std::min(cols, m0 + r - n0 + 1);
                        for (std::int64_t c = 0; c < cols; ++c) {
                            if (c >= visible) {
                                wr[c] = 0.0;
                                gr[c] = 0.0;
                                continue;
                            }
                            const double s = dot_wide(qr, k_tile.data() + c * d, d);
                            const double x = s - tau[r];
                            if (x > 0.0) {
                                wr[c] = pow_int(x, p);
                                gr[c] = static_cast<double>(p) * pow_int(x, p - 1);
                            } else {
                                wr[c] = 0.0;
                                gr[c] = 0.0;
                            }
                        }
                    }

                    // dW = dO_m V_n^T; dS = dW .* G; dtau_i -= sum_j dW .* G
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const Real* dor = upstream.row(bi, hi, m0 + r);
                        double* dsr = ds_tile.data() + r * cols;
                        const double* gr = g_tile.data() + r * cols;
                        for (std::int64_t c = 0; c < cols; ++c) {
                            if (gr[c] == 0.0) {
                                dsr[c] = 0.0;
                                continue;
                            }
                            const double dw = dot_wide(dor, batch.v.row(bi, hi, n0 + c), d);
                            dsr[c] = dw * gr[c];
                            dtau_acc[r] -= dsr[c];
                        }
                    }

                    // dQ_m += dS K_n ; dK_n += dS^T Q_m ; dV_n += W^T dO_m
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const double* dsr = ds_tile.data() + r * cols;
                        const double* wr = w_tile.data() + r * cols;
                        double* dqr = dq_acc.data() + r * d;
                        const Real* qr = q_tile.data() + r * d;
                        const Real* dor = upstream.row(bi, hi, m0 + r);
                        for (std::int64_t c = 0; c < cols; ++c) {
                            if (dsr[c] != 0.0) {
                                const Real* kr = k_tile.data() + c * d;
                                Real* dkr = grads.dk.row(bi, hi, n0 + c);
                                for (std::int64_t e = 0; e < d; ++e) {
                                    dqr[e] += dsr[c] * static_cast<double>(kr[e]);
                                    dkr[e] += static_cast<Real>(dsr[c] * static_cast<double>(qr[e]));
                                }
                            }
                            if (wr[c] != 0.0) {
                                Real* dvr = grads.dv.row(bi, hi, n0 + c);
                                for (std::int64_t e = 0; e < d; ++e)
                                    dvr[e] += static_cast<Real>(wr[c] * static_cast<double>(dor[e]));
                            }
                        }
                    }
                }
                for (std::int64_t r = 0; r < rows; ++r) {
                    Real* dqr = grads.dq.row(bi, hi, m0 + r);
                    for (std::int64_t e = 0; e < d; ++e) dqr[e] = static_cast<Real>(dq_acc[r * d + e]);
                    if (dtau_out) *dtau_out->row(bi, hi, m0 + r) = static_cast<Real>(dtau_acc[r]);
                }
            }
    return grads;
}

// TDA wrapper: O = forward(view1) - clamp(lambda) * forward(view2).
// Output norm stays with the caller, matching the forward contract.
template <typename Real>
inline void tda_streaming(const AttnBatch<Real>& batch, const AttnParams& params,
                          const TileConfig& tiles, Array4<Real>& out, bool normalize = true,
                          ScratchArena* arena = nullptr) {
    batch.validate(/*need_second_view=*/true);
    const double lam = params.lambda_clamped();
    AttnBatch<Real> view1{batch.q, batch.k, batch.v, {}, {}};
    AttnBatch<Real> view2{batch.q2, batch.k2, batch.v, {}, {}};
    tra_forward_streaming(view1, params, tiles, out, normalize, arena);
    Array4<Real> o2 = tra_forward_streaming(view2, params, tiles, normalize, arena);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<Real>(static_cast<double>(out.data[i]) - lam * static_cast<double>(o2.data[i]));
}

template <typename Real>
inline Array4<Real> tda_streaming(const AttnBatch<Real>& batch, const AttnParams& params,
                                  const TileConfig& tiles, bool normalize = true,
                                  ScratchArena* arena = nullptr) {
    Array4<Real> out(batch.q.b, batch.q.h, batch.q.t, batch.q.d);
    tda_streaming(batch, params, tiles, out, normalize, arena);
    return out;
}

// Chain dL/dx_hat back through x_hat = x / ||x||:
// dx = (dx_hat - x_hat * <x_hat, dx_hat>) / ||x||, applied rowwise.
template <typename Real>
inline Array4<Real> l2_normalize_backward(const Array4<Real>& x, const Array4<Real>& dxhat) {
    if (!x.same_shape(dxhat))
        throw std::invalid_argument("l2_normalize_backward: shape mismatch");
    Array4<Real> dx(x.b, x.h, x.t, x.d);
    const std::int64_t rows = x.b * x.h * x.t;
    const std::int64_t d = x.d;
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* xr = x.data.data() + r * d;
        const Real* gr = dxhat.data.data() + r * d;
        Real* out = dx.data.data() + r * d;
        const double nrm = row_norm(xr, d);
        if (!(nrm > 0.0))
            throw std::invalid_argument("l2_normalize_backward: zero-norm row at flat index " +
                                        std::to_string(r));
        const double inv = 1.0 / nrm;
        double proj = 0.0;  // <x_hat, dx_hat>
        for (std::int64_t e = 0; e < d; ++e)
            proj += static_cast<double>(xr[e]) * inv * static_cast<double>(gr[e]);
        for (std::int64_t e = 0; e < d; ++e)
            out[e] = static_cast<Real>((static_cast<double>(gr[e]) -
                                        static_cast<double>(xr[e]) * inv * proj) * inv);
    }
    return dx;
}

// Materializing TRA forward: builds the full T x T weight matrix through the
// arena. This is the "dense" side of the bench memory contrast; the tests use
// it as an extra cross-check on the streaming path.
template <typename Real>
inline void tra_forward_materialized(const AttnBatch<Real>& batch, const AttnParams& params,
                                     Array4<Real>& out, bool normalize = true,
                                     ScratchArena* arena = nullptr) {
    batch.validate();
    params.validate();
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;
    if (!out.same_shape(batch.q)) out = Array4<Real>(B, H, T, d);

    ScratchArena local;
    ScratchArena& a = arena ? *arena : local;
    auto w = a.template alloc<Real>(static_cast<std::size_t>(T * T));
    auto qn = a.template alloc<Real>(static_cast<std::size_t>(T * d));
    auto kn = a.template alloc<Real>(static_cast<std::size_t>(T * d));
    auto acc = a.template alloc<double>(static_cast<std::size_t>(d));

    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi) {
            kernel_detail::load_tile(batch.q, bi, hi, 0, T, normalize, qn);
            kernel_detail::load_tile(batch.k, bi, hi, 0, T, normalize, kn);
            for (std::int64_t i = 0; i < T; ++i) {
                const double tau = threshold_raw(i + 1, params.beta, params.kappa, static_cast<int>(d));
                const Real* qi = qn.data() + i * d;
                Real* wr = w.data() + i * T;
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double s = dot_wide(qi, kn.data() + j * d, d);
                    const double x = s - tau;
                    wr[j] = x > 0.0 ? static_cast<Real>(pow_int(x, params.power)) : Real(0);
                }
                for (std::int64_t j = i + 1; j < T; ++j) wr[j] = Real(0);
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double wj = static_cast<double>(wr[j]);
                    if (wj == 0.0) continue;
                    const Real* vr = batch.v.row(bi, hi, j);
                    for (std::int64_t e = 0; e < d; ++e) acc[e] += wj * static_cast<double>(vr[e]);
                }
                Real* orow = out.row(bi, hi, i);
                for (std::int64_t e = 0; e < d; ++e) orow[e] = static_cast<Real>(acc[e]);
            }
        }
}

// Materializing TRA backward, the dense counterpart of tra_backward_streaming
// (same gradient convention: dq/dk with respect to the normalized inputs).
template <typename Real>
inline GradTriple<Real> tra_backward_materialized(const AttnBatch<Real>& batch,
                                                  const AttnParams& params,
                                                  const Array4<Real>& upstream, bool normalize = true,
                                                  ScratchArena* arena = nullptr,
                                                  Array4<Real>* dtau_out = nullptr) {
    batch.validate();
    params.validate();
    const std::int64_t B = batch.q.b, H = batch.q.h, T = batch.q.t, d = batch.q.d;
    const int p = params.power;

    GradTriple<Real> grads;
    grads.dq = Array4<Real>(B, H, T, d);
    grads.dk = Array4<Real>(B, H, T, d);
    grads.dv = Array4<Real>(B, H, T, d);
    if (dtau_out) *dtau_out = Array4<Real>(B, H, T, 1);

    ScratchArena local;
    ScratchArena& a = arena ? *arena : local;
    auto w = a.template alloc<double>(static_cast<std::size_t>(T * T));
    auto ds = a.template alloc<double>(static_cast<std::size_t>(T * T));
    auto qn = a.template alloc<Real>(static_cast<std::size_t>(T * d));
    auto kn = a.template alloc<Real>(static_cast<std::size_t>(T * d));

    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t hi = 0; hi < H; ++hi) {
            kernel_detail::load_tile(batch.q, bi, hi, 0, T, normalize, qn);
            kernel_detail::load_tile(batch.k, bi, hi, 0, T, normalize, kn);
            for (std::int64_t i = 0; i < T; ++i) {
                const double tau = threshold_raw(i + 1, params.beta, params.kappa, static_cast<int>(d));
                const Real* qi = qn.data() + i * d;
                const Real* doi = upstream.row(bi, hi, i);
                double dtau_i = 0.0;
                for (std::int64_t j = 0; j < T; ++j) {
                    double* wij = w.data() + i * T + j;
                    double* dsij = ds.data() + i * T + j;
                    if (j > i) {
                        *wij = 0.0;
                        *dsij = 0.0;
                        continue;
                    }
                    const double s = dot_wide(qi, kn.data() + j * d, d);
                    const double x = s - tau;
                    if (x > 0.0) {
                        *wij = pow_int(x, p);
                        const double g = static_cast<double>(p) * pow_int(x, p - 1);
                        const double dw = dot_wide(doi, batch.v.row(bi, hi, j), d);
                        *dsij = dw * g;
                        dtau_i -= *dsij;
                    } else {
                        *wij = 0.0;
                        *dsij = 0.0;
                    }
                }
                if (dtau_out) *dtau_out->row(bi, hi, i) = static_cast<Real>(dtau_i);
            }
            for (std::int64_t i = 0; i < T; ++i) {
                Real* dqr = grads.dq.row(bi, hi, i);
                const Real* doi = upstream.row(bi, hi, i);
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double dsij = ds[i * T + j];
                    const double wij = w[i * T + j];
                    if (dsij != 0.0) {
                        const Real* kr = kn.data() + j * d;
                        Real* dkr = grads.dk.row(bi, hi, j);
                        const Real* qr = qn.data() + i * d;
                        for (std::int64_t e = 0; e < d; ++e) {
                            dqr[e] += static_cast<Real>(dsij * static_cast<double>(kr[e]));
                            dkr[e] += static_cast<Real>(dsij * static_cast<double>(qr[e]));
                        }
                    }
                    if (wij != 0.0) {
                        Real* dvr = grads.dv.row(bi, hi, j);
                        for (std::int64_t e = 0; e < d; ++e)
                            dvr[e] += static_cast<Real>(wij * static_cast<double>(doi[e]));
                    }
                }
            }
        }
    return grads;
}

}  // namespace tda
