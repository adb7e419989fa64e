#pragma once

// Small dense-math kernels for the tiny LM. Row-major throughout. Loop
// orders are chosen so the inner loop is a contiguous stream the compiler
// vectorizes; all parallelism writes disjoint output rows, so results do not
// depend on thread count.

#include <cmath>
#include <cstdint>
#include <span>

namespace tda {

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename Real>
inline void gemm_nn(const Real* a, const Real* b, Real* c, std::int64_t M, std::int64_t K,
                    std::int64_t N, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::int64_t m = 0; m < M; ++m) {
        Real* crow = c + m * N;
        if (!accumulate)
            for (std::int64_t n = 0; n < N; ++n) crow[n] = Real(0);
        const Real* arow = a + m * K;
        std::int64_t k = 0;
        for (; k + 4 <= K; k += 4) {
            const Real a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
            const Real* b0 = b + k * N;
            const Real* b1 = b0 + N;
            const Real* b2 = b1 + N;
            const Real* b3 = b2 + N;
            for (std::int64_t n = 0; n < N; ++n)
                crow[n] += a0 * b0[n] + a1 * b1[n] + a2 * b2[n] + a3 * b3[n];
        }
        for (; k < K; ++k) {
            const Real ak = arow[k];
            const Real* brow = b + k * N;
            for (std::int64_t n = 0; n < N; ++n) crow[n] += ak * brow[n];
        }
    }
}

// Dot product accumulated into a fixed-width bank of partial sums; the inner
// loop carries no dependence across lanes, so it vectorizes without
// reassociation flags. Summation order is fixed (deterministic).
template <typename Real>
inline Real dot_fast(const Real* a, const Real* b, std::int64_t n) {
    constexpr std::int64_t W = 32;
    Real lanes[W] = {};
    std::int64_t k = 0;
    for (; k + W <= n; k += W)
        for (std::int64_t j = 0; j < W; ++j) lanes[j] += a[k + j] * b[k + j];
    Real tail = 0;
    for (; k < n; ++k) tail += a[k] * b[k];
    Real total = tail;
    for (std::int64_t j = 0; j < W; ++j) total += lanes[j];
    return total;
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename Real>
inline void gemm_nt(const Real* a, const Real* b, Real* c, std::int64_t M, std::int64_t K,
                    std::int64_t N, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::int64_t m = 0; m < M; ++m) {
        const Real* arow = a + m * K;
        Real* crow = c + m * N;
        for (std::int64_t n = 0; n < N; ++n) {
            const Real acc = dot_fast(arow, b + n * K, K);
            crow[n] = accumulate ? crow[n] + acc : acc;
        }
    }
}

// C[K,N] (+)= A[M,K]^T * B[M,N]
template <typename Real>
inline void gemm_tn(const Real* a, const Real* b, Real* c, std::int64_t M, std::int64_t K,
                    std::int64_t N, bool accumulate) {
    if (!accumulate)
        for (std::int64_t i = 0; i < K * N; ++i) c[i] = Real(0);
    for (std::int64_t m = 0; m < M; ++m) {
        const Real* arow = a + m * K;
        const Real* brow = b + m * N;
        for (std::int64_t k = 0; k < K; ++k) {
            const Real ak = arow[k];
            if (ak == Real(0)) continue;
            Real* crow = c + k * N;
            for (std::int64_t n = 0; n < N; ++n) crow[n] += ak * brow[n];
        }
    }
}

// tanh-form GELU and its derivative, computed in the storage precision.
template <typename Real>
inline Real gelu(Real x) {
    const Real c = Real(0.7978845608028654);  // sqrt(2/pi)
    const Real u = c * (x + Real(0.044715) * x * x * x);
    return Real(0.5) * x * (Real(1) + std::tanh(u));
}

template <typename Real>
inline Real gelu_grad(Real x) {
    const Real c = Real(0.7978845608028654);
    const Real u = c * (x + Real(0.044715) * x * x * x);
    const Real t = std::tanh(u);
    const Real du = c * (Real(1) + Real(3) * Real(0.044715) * x * x);
    return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
}

// RMSNorm forward over one row plus the pieces backward needs.
// y = gain .* x * inv, inv = 1/sqrt(mean(x^2) + eps).
template <typename Real>
inline double rmsnorm_fwd(const Real* x, const Real* gain, std::int64_t n, double eps, Real* y) {
    double ms = 0.0;
    for (std::int64_t i = 0; i < n; ++i) ms += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    ms /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (std::int64_t i = 0; i < n; ++i)
        y[i] = static_cast<Real>((gain ? static_cast<double>(gain[i]) : 1.0) * static_cast<double>(x[i]) * inv);
    return inv;
}

// dx and dgain for RMSNorm; dgain may be null (unit gain), dx accumulated raw.
template <typename Real>
inline void rmsnorm_bwd(const Real* x, const Real* gain, const Real* dy, std::int64_t n, double eps,
                        Real* dx, Real* dgain) {
    double ms = 0.0;
    for (std::int64_t i = 0; i < n; ++i) ms += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    ms /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(ms + eps);
    double dot = 0.0;  // sum dy .* gain .* x
    for (std::int64_t i = 0; i < n; ++i) {
        const double g = gain ? static_cast<double>(gain[i]) : 1.0;
        dot += static_cast<double>(dy[i]) * g * static_cast<double>(x[i]);
    }
    const double k = dot * inv * inv * inv / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
        const double g = gain ? static_cast<double>(gain[i]) : 1.0;
        dx[i] += static_cast<Real>(static_cast<double>(dy[i]) * g * inv - static_cast<double>(x[i]) * k);
        if (dgain)
            dgain[i] += static_cast<Real>(static_cast<double>(dy[i]) * static_cast<double>(x[i]) * inv);
    }
}

// LayerNorm forward/backward (per-head output norm for ReLA).
template <typename Real>
inline void layernorm_fwd(const Real* x, const Real* gain, const Real* bias, std::int64_t n,
                          double eps, Real* y) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += static_cast<double>(x[i]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double cdev = static_cast<double>(x[i]) - mean;
        var += cdev * cdev;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < n; ++i) {
        const double g = gain ? static_cast<double>(gain[i]) : 1.0;
        const double b = bias ? static_cast<double>(bias[i]) : 0.0;
        y[i] = static_cast<Real>(g * (static_cast<double>(x[i]) - mean) * inv + b);
    }
}

template <typename Real>
inline void layernorm_bwd(const Real* x, const Real* gain, const Real* dy, std::int64_t n, double eps,
                          Real* dx, Real* dgain, Real* dbias) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += static_cast<double>(x[i]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double cdev = static_cast<double>(x[i]) - mean;
        var += cdev * cdev;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double g = gain ? static_cast<double>(gain[i]) : 1.0;
        const double xhat = (static_cast<double>(x[i]) - mean) * inv;
        const double dyg = static_cast<double>(dy[i]) * g;
        sum_dyg += dyg;
        sum_dyg_xhat += dyg * xhat;
    }
    for (std::int64_t i = 0; i < n; ++i) {
        const double g = gain ? static_cast<double>(gain[i]) : 1.0;
        const double xhat = (static_cast<double>(x[i]) - mean) * inv;
        const double dyg = static_cast<double>(dy[i]) * g;
        dx[i] += static_cast<Real>(inv * (dyg - sum_dyg / static_cast<double>(n) -
                                          xhat * sum_dyg_xhat / static_cast<double>(n)));
        if (dgain) dgain[i] += static_cast<Real>(static_cast<double>(dy[i]) * xhat);
        if (dbias) dbias[i] += static_cast<Real>(static_cast<double>(dy[i]));
    }
}

}  // namespace tda
