#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tda {

// Mechanism hyperparameters. Single home of all attention scalars.
struct AttnParams {
    double beta = 1.0;           // threshold scale, > 0
    double kappa = 1.0;          // expected spurious survivors per row, > 0
    int power = 2;               // rectifier exponent p, integer >= 1
    double lambda = 0.5;         // inhibition strength; stored raw, clamped to [0,1] on use
    double norm_epsilon = 1e-6;  // RMSNorm stabilizer
    bool train_beta = true;
    bool train_lambda = true;

    // lambda is a trainable scalar and may drift outside [0,1]; every read
    // path goes through this clamp.
    double lambda_clamped() const {
        return lambda < 0.0 ? 0.0 : (lambda > 1.0 ? 1.0 : lambda);
    }

    void validate() const {
        if (!(beta > 0.0)) throw std::invalid_argument("AttnParams: beta must be > 0");
        if (!(kappa > 0.0)) throw std::invalid_argument("AttnParams: kappa must be > 0");
        if (power < 1) throw std::invalid_argument("AttnParams: power must be >= 1");
        if (!(norm_epsilon > 0.0)) throw std::invalid_argument("AttnParams: norm_epsilon must be > 0");
    }
};

// Length-dependent threshold for the 1-based row index i:
//   tau_i = beta * sqrt(max(0, 2*ln((i+1)/kappa)) / d)
// The log argument is clamped at zero so tau stays real and the rectifier
// degenerates to plain ReLU when i+1 < kappa.
inline double threshold_raw(std::int64_t row_1based, double beta, double kappa, int head_dim) {
    const double arg = 2.0 * std::log((static_cast<double>(row_1based) + 1.0) / kappa);
    const double clamped = arg > 0.0 ? arg : 0.0;
    return beta * std::sqrt(clamped / static_cast<double>(head_dim));
}

inline double threshold(std::int64_t row_1based, const AttnParams& p, int head_dim) {
    if (row_1based < 1) throw std::invalid_argument("threshold: row index must be >= 1");
    if (head_dim < 1) throw std::invalid_argument("threshold: head_dim must be >= 1");
    p.validate();
    return threshold_raw(row_1based, p.beta, p.kappa, head_dim);
}

// Integer power by repeated multiplication; exact for the small p we use.
template <typename Real>
inline Real pow_int(Real x, int p) {
    Real r = Real(1);
    for (int i = 0; i < p; ++i) r *= x;
    return r;
}

}  // namespace tda
