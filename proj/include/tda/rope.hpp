#pragma once

// Rotary position embedding: channels (2m, 2m+1) rotate by pos * theta^(-2m/d).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tda {

// Angle frequency for channel pair m of a head of width d.
inline double rope_freq(std::int64_t m, std::int64_t d, double theta) {
    return std::pow(theta, -2.0 * static_cast<double>(m) / static_cast<double>(d));
}

// In-place rotation of rows x[t, :] (t is the position), d even.
template <typename Real>
inline void rope_apply_rows(Real* x, std::int64_t t_count, std::int64_t d, double theta,
                            std::int64_t pos_offset = 0) {
    if (d % 2 != 0) throw std::invalid_argument("rope_apply: head dim must be even");
    for (std::int64_t t = 0; t < t_count; ++t) {
        Real* row = x + t * d;
        const double pos = static_cast<double>(t + pos_offset);
        for (std::int64_t m = 0; m < d / 2; ++m) {
            const double ang = pos * rope_freq(m, d, theta);
            const double c = std::cos(ang), s = std::sin(ang);
            const double x0 = static_cast<double>(row[2 * m]);
            const double x1 = static_cast<double>(row[2 * m + 1]);
            row[2 * m] = static_cast<Real>(x0 * c - x1 * s);
            row[2 * m + 1] = static_cast<Real>(x0 * s + x1 * c);
        }
    }
}

template <typename Real>
inline std::vector<Real> rope_apply(const std::vector<Real>& x, std::int64_t d, double theta) {
    if (d < 1 || x.size() % static_cast<std::size_t>(d) != 0)
        throw std::invalid_argument("rope_apply: bad shape");
    std::vector<Real> out = x;
    rope_apply_rows(out.data(), static_cast<std::int64_t>(x.size()) / d, d, theta);
    return out;
}

// Precomputed cos/sin tables, shape [t_max, d/2]; the tiny LM uses these so
// the hot path does no trig.
template <typename Real>
struct RopeTable {
    std::int64_t d = 0;
    std::vector<Real> cos_t, sin_t;

    RopeTable() = default;
    RopeTable(std::int64_t t_max, std::int64_t d_, double theta) : d(d_) {
        if (d % 2 != 0) throw std::invalid_argument("RopeTable: head dim must be even");
        cos_t.resize(static_cast<std::size_t>(t_max * d / 2));
        sin_t.resize(static_cast<std::size_t>(t_max * d / 2));
        for (std::int64_t t = 0; t < t_max; ++t)
            for (std::int64_t m = 0; m < d / 2; ++m) {
                const double ang = static_cast<double>(t) * rope_freq(m, d, theta);
                cos_t[t * (d / 2) + m] = static_cast<Real>(std::cos(ang));
                sin_t[t * (d / 2) + m] = static_cast<Real>(std::sin(ang));
            }
    }

    // rotate one row at position t (forward), or apply the transpose (backward)
    void rotate(Real* row, std::int64_t t, bool transpose = false) const {
        const Real* ct = cos_t.data() + t * (d / 2);
        const Real* st = sin_t.data() + t * (d / 2);
        for (std::int64_t m = 0; m < d / 2; ++m) {
            const double c = static_cast<double>(ct[m]);
            const double s = transpose ? -static_cast<double>(st[m]) : static_cast<double>(st[m]);
            const double x0 = static_cast<double>(row[2 * m]);
            const double x1 = static_cast<double>(row[2 * m + 1]);
            row[2 * m] = static_cast<Real>(x0 * c - x1 * s);
            row[2 * m + 1] = static_cast<Real>(x0 * s + x1 * c);
        }
    }
};

}  // namespace tda
