#pragma once

#include <cmath>
#include <random>

#include "tda/batch.hpp"
#include "tda/rng.hpp"

namespace tda::test {

template <typename Real>
Array4<Real> random_array(std::int64_t b, std::int64_t h, std::int64_t t, std::int64_t d,
                          std::mt19937_64& rng, double scale = 1.0) {
    Array4<Real> a(b, h, t, d);
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& x : a.data) x = static_cast<Real>(dist(rng));
    return a;
}

// rows drawn uniformly from the unit sphere
template <typename Real>
Array4<Real> random_unit_rows(std::int64_t b, std::int64_t h, std::int64_t t, std::int64_t d,
                              std::mt19937_64& rng) {
    Array4<Real> a = random_array<Real>(b, h, t, d, rng);
    for (std::int64_t r = 0; r < b * h * t; ++r) {
        Real* p = a.data.data() + r * d;
        double n = 0.0;
        for (std::int64_t i = 0; i < d; ++i) n += static_cast<double>(p[i]) * static_cast<double>(p[i]);
        n = std::sqrt(n);
        for (std::int64_t i = 0; i < d; ++i) p[i] = static_cast<Real>(static_cast<double>(p[i]) / n);
    }
    return a;
}

template <typename Real>
AttnBatch<Real> random_batch(std::int64_t b, std::int64_t h, std::int64_t t, std::int64_t d,
                             std::mt19937_64& rng, bool two_views = false) {
    AttnBatch<Real> batch;
    batch.q = random_array<Real>(b, h, t, d, rng);
    batch.k = random_array<Real>(b, h, t, d, rng);
    batch.v = random_array<Real>(b, h, t, d, rng);
    if (two_views) {
        batch.q2 = random_array<Real>(b, h, t, d, rng);
        batch.k2 = random_array<Real>(b, h, t, d, rng);
    }
    return batch;
}

template <typename Real>
double max_abs_diff(const Array4<Real>& a, const Array4<Real>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

}  // namespace tda::test
