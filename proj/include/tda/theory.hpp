#pragma once

// Monte Carlo checks of the survivor/consensus bounds and the
// (non-)dispersion behavior of thresholded attention rows.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tda/attn_params.hpp"

namespace tda {

// Scores drawn i.i.d. N(0, sigma^2/d) — the canonical sub-Gaussian law.
struct NoiseModel {
    double sigma = 1.0;
    int head_dim = 64;

    void validate() const {
        if (!(sigma > 0.0)) throw std::invalid_argument("NoiseModel: sigma must be > 0");
        if (head_dim < 1) throw std::invalid_argument("NoiseModel: head_dim must be >= 1");
    }
};

struct TrialConfig {
    std::vector<std::int64_t> rows;  // context lengths i
    int trials = 2000;
    AttnParams params;
    int relevant_count = 0;       // planted relevant keys per row
    double relevant_margin = 0.2;  // planted score offset above tau
    std::uint64_t seed = 1;

    void validate() const {
        if (trials < 1) throw std::invalid_argument("TrialConfig: trials must be >= 1");
        if (relevant_count < 0) throw std::invalid_argument("TrialConfig: relevant_count must be >= 0");
        params.validate();
        for (auto i : rows)
            if (i < 1) throw std::invalid_argument("TrialConfig: row lengths must be >= 1");
    }
};

struct SurvivorStats {
    std::int64_t i = 0;
    double mean_S = 0.0, se_S = 0.0;
    double mean_C = 0.0, se_C = 0.0;
    double mean_entropy_ratio = 0.0;
    double bound_S = 0.0;  // kappa * i / (i+1)
    double bound_C = 0.0;  // kappa^2 / (i+1)
};

struct DispersionStats {
    std::int64_t i = 0;
    double ratio_tra = 0.0;
    double ratio_tda = 0.0;
    double ratio_softmax = 0.0;
    double max_support_violation = 0.0;  // max over rows of H - ln(max(1, survivors))
};

// i i.i.d. draws from N(0, sigma^2/d), appended in index order.
std::vector<double> sample_noise_row(std::int64_t i, const NoiseModel& model, std::mt19937_64& rng);

// Count of entries strictly greater than tau.
std::int64_t count_survivors(std::span<const double> scores, double tau);

// Count of positions exceeding tau in both arrays; throws on length mismatch.
std::int64_t count_consensus(std::span<const double> s1, std::span<const double> s2, double tau);

// For each configured i: draw `trials` two-view noise rows, count survivors
// and consensus survivors against tau_i, record the entropy ratio of the TRA
// weight row, and attach the analytic bounds. Per-trial RNG streams are
// derived from (seed, i, trial, view), so results are bit-reproducible.
std::vector<SurvivorStats> run_survivor_experiment(const TrialConfig& cfg, const NoiseModel& model);

// Mean dispersion ratio E[H]/ln(i) for TRA, TDA and softmax on shared noise
// scores, with `relevant_count` planted keys at tau + margin in view 1.
std::vector<DispersionStats> run_dispersion_experiment(const TrialConfig& cfg, const NoiseModel& model);

// CSV emission (deterministic): i,mean_S,se_S,bound_S,mean_C,se_C,bound_C,
// entropy_ratio_tra,entropy_ratio_softmax.
std::string survivor_csv(std::span<const SurvivorStats> stats, std::span<const DispersionStats> disp);
std::string dispersion_csv(std::span<const DispersionStats> disp);

// Standard normal upper tail P(Z > z) via erfc.
inline double normal_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace tda
