#pragma once

// Sparsity / dispersion / sink metrics over materialized weight matrices.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tda {

// Signed, causal-masked weights for one (layer, head, instance).
struct WeightMatrix {
    int layer = 0;
    int head = 0;
    std::int64_t t = 0;
    std::vector<double> a;  // row-major [t, t], a[i*t+j] == 0 for j > i

    double at(std::int64_t i, std::int64_t j) const { return a[i * t + j]; }
    std::span<const double> row(std::int64_t i) const { return {a.data() + i * t, static_cast<std::size_t>(t)}; }
};

struct DiagnosticsReport {
    int layer = 0;
    int head = 0;
    double sparsity = 0.0;
    std::vector<double> entropy_by_row;                        // index i-1 holds H(a_i)
    std::vector<std::optional<double>> dispersion_ratio_by_row;  // absent for i < 2
    std::vector<double> sink_ratio;                            // index k-1 holds per-matrix gSinkRatio(k)
    double max_abs = 0.0;
    std::int64_t dead_rows = 0;  // rows with zero absolute mass
};

// Fraction of exactly-zero entries among the j <= i positions.
double sparsity(const WeightMatrix& w);

// Shannon entropy of the l1-normalized absolute weights, natural log,
// eps inside the denominator only. All-zero row -> 0.
double effective_entropy(std::span<const double> row, double eps = 1e-12);

// entropy / ln(i) for 1-based row index i; undefined (absent) for i < 2.
std::optional<double> dispersion_ratio(double entropy, std::int64_t row_1based);

// Per-matrix times-uniform sink ratio at 1-based key position k.
// Rows with zero absolute mass contribute 0.
double sink_ratio_single(const WeightMatrix& w, std::int64_t k);

// Mean of sink_ratio_single over a stack of (layer, head, instance) matrices.
double g_sink_ratio(std::span<const WeightMatrix> stack, std::int64_t k);

// max |a_ij| over j <= i; 0 for an empty matrix.
double max_abs(const WeightMatrix& w);

DiagnosticsReport analyze(const WeightMatrix& w, double entropy_eps = 1e-12);

// Long-format CSV rows: layer,head,metric,index,value. Appends to `out`.
void report_to_csv(const DiagnosticsReport& r, std::string& out);
// One JSON record per report (single line).
std::string report_to_json(const DiagnosticsReport& r);

}  // namespace tda
