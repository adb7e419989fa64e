#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tda {

enum class Mechanism { Softmax, ReLA, DiffSoftmax, TRA, TDA };

inline const char* mechanism_name(Mechanism m) {
    switch (m) {
        case Mechanism::Softmax: return "softmax";
        case Mechanism::ReLA: return "rela";
        case Mechanism::DiffSoftmax: return "diff_softmax";
        case Mechanism::TRA: return "tra";
        case Mechanism::TDA: return "tda";
    }
    return "?";
}

inline bool is_differential(Mechanism m) {
    return m == Mechanism::DiffSoftmax || m == Mechanism::TDA;
}

// Dense [B, H, T, D] array, row-major, contiguous.
template <typename Real>
struct Array4 {
    std::int64_t b = 0, h = 0, t = 0, d = 0;
    std::vector<Real> data;

    Array4() = default;
    Array4(std::int64_t b_, std::int64_t h_, std::int64_t t_, std::int64_t d_)
        : b(b_), h(h_), t(t_), d(d_), data(static_cast<std::size_t>(b_ * h_ * t_ * d_), Real(0)) {}

    bool empty() const { return data.empty(); }
    std::int64_t size() const { return b * h * t * d; }

    Real* row(std::int64_t bi, std::int64_t hi, std::int64_t ti) {
        return data.data() + ((bi * h + hi) * t + ti) * d;
    }
    const Real* row(std::int64_t bi, std::int64_t hi, std::int64_t ti) const {
        return data.data() + ((bi * h + hi) * t + ti) * d;
    }
    std::span<Real> row_span(std::int64_t bi, std::int64_t hi, std::int64_t ti) {
        return {row(bi, hi, ti), static_cast<std::size_t>(d)};
    }
    std::span<const Real> row_span(std::int64_t bi, std::int64_t hi, std::int64_t ti) const {
        return {row(bi, hi, ti), static_cast<std::size_t>(d)};
    }

    bool same_shape(const Array4& o) const { return b == o.b && h == o.h && t == o.t && d == o.d; }

    template <typename Other>
    Array4<Other> cast() const {
        Array4<Other> out(b, h, t, d);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
        return out;
    }
};

// Query/key/value batch. The second view is present iff the mechanism is
// differential; all present arrays share one [B, H, T, D] shape.
template <typename Real>
struct AttnBatch {
    Array4<Real> q, k, v;
    Array4<Real> q2, k2;  // empty unless differential

    bool has_second_view() const { return !q2.empty() && !k2.empty(); }

    void validate(bool need_second_view = false) const {
        if (q.empty() || k.empty() || v.empty())
            throw std::invalid_argument("AttnBatch: q, k, v must be present");
        if (!q.same_shape(k) || !q.same_shape(v))
            throw std::invalid_argument("AttnBatch: q, k, v shapes differ");
        if (need_second_view && !has_second_view())
            throw std::invalid_argument("AttnBatch: mechanism requires a second view (q2, k2)");
        if (has_second_view() && (!q.same_shape(q2) || !q.same_shape(k2)))
            throw std::invalid_argument("AttnBatch: second-view shapes differ from the first view");
        check_finite(q, "q");
        check_finite(k, "k");
        check_finite(v, "v");
        if (has_second_view()) {
            check_finite(q2, "q2");
            check_finite(k2, "k2");
        }
    }

  private:
    static void check_finite(const Array4<Real>& a, const char* name) {
        for (const Real x : a.data)
            if (!std::isfinite(static_cast<double>(x)))
                throw std::invalid_argument(std::string("AttnBatch: non-finite entry in ") + name);
    }
};

// Output plus optionally materialized signed weights.
// weights has shape [B, H, T, T]; weights[i][j] == 0 exactly for j > i.
template <typename Real>
struct AttnResult {
    Array4<Real> output;   // [B, H, T, D]
    Array4<Real> weights;  // [B, H, T, T] when materialized, empty otherwise
    Mechanism mechanism = Mechanism::Softmax;

    bool has_weights() const { return !weights.empty(); }
};

}  // namespace tda
