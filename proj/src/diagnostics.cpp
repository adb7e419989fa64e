#include "tda/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

#include "tda/csv.hpp"

#include <nlohmann/json.hpp>

namespace tda {

double sparsity(const WeightMatrix& w) {
    const std::int64_t T = w.t;
    if (T == 0) return 0.0;
    std::int64_t zeros = 0;
    for (std::int64_t i = 0; i < T; ++i)
        for (std::int64_t j = 0; j <= i; ++j)
            if (w.at(i, j) == 0.0) ++zeros;
    return static_cast<double>(zeros) / (static_cast<double>(T) * static_cast<double>(T + 1) / 2.0);
}

double effective_entropy(std::span<const double> row, double eps) {
    double l1 = 0.0;
    for (const double x : row) l1 += std::fabs(x);
    const double denom = l1 + eps;
    double h = 0.0;
    for (const double x : row) {
        const double p = std::fabs(x) / denom;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

std::optional<double> dispersion_ratio(double entropy, std::int64_t row_1based) {
    if (row_1based < 2) return std::nullopt;
    return entropy / std::log(static_cast<double>(row_1based));
}

double sink_ratio_single(const WeightMatrix& w, std::int64_t k) {
    const std::int64_t T = w.t;
    if (k < 1 || k > T) throw std::invalid_argument("sink_ratio: key position out of range");
    double tilde = 0.0;
    for (std::int64_t i = k; i <= T; ++i) {  // 1-based rows i = k..T
        double mass = 0.0;
        for (std::int64_t j = 0; j < i; ++j) mass += std::fabs(w.at(i - 1, j));
        if (mass > 0.0) tilde += std::fabs(w.at(i - 1, k - 1)) / mass;
        // zero-mass rows attend nowhere and contribute 0
    }
    tilde /= static_cast<double>(T - k + 1);
    double unif = 0.0;
    for (std::int64_t i = k; i <= T; ++i) unif += 1.0 / static_cast<double>(i);
    unif /= static_cast<double>(T - k + 1);
    return tilde / unif;
}

double g_sink_ratio(std::span<const WeightMatrix> stack, std::int64_t k) {
    if (stack.empty()) throw std::invalid_argument("g_sink_ratio: empty stack");
    double sum = 0.0;
    for (const WeightMatrix& w : stack) sum += sink_ratio_single(w, k);
    return sum / static_cast<double>(stack.size());
}

double max_abs(const WeightMatrix& w) {
    double m = 0.0;
    for (std::int64_t i = 0; i < w.t; ++i)
        for (std::int64_t j = 0; j <= i; ++j) m = std::max(m, std::fabs(w.at(i, j)));
    return m;
}

DiagnosticsReport analyze(const WeightMatrix& w, double entropy_eps) {
    DiagnosticsReport r;
    r.layer = w.layer;
    r.head = w.head;
    r.sparsity = sparsity(w);
    r.max_abs = max_abs(w);
    r.entropy_by_row.reserve(static_cast<std::size_t>(w.t));
    r.dispersion_ratio_by_row.reserve(static_cast<std::size_t>(w.t));
    for (std::int64_t i = 1; i <= w.t; ++i) {
        const double h = effective_entropy(w.row(i - 1).subspan(0, static_cast<std::size_t>(i)), entropy_eps);
        r.entropy_by_row.push_back(h);
        r.dispersion_ratio_by_row.push_back(dispersion_ratio(h, i));
        double mass = 0.0;
        for (std::int64_t j = 0; j < i; ++j) mass += std::fabs(w.at(i - 1, j));
        if (mass == 0.0) ++r.dead_rows;
    }
    r.sink_ratio.reserve(static_cast<std::size_t>(w.t));
    for (std::int64_t k = 1; k <= w.t; ++k) r.sink_ratio.push_back(sink_ratio_single(w, k));
    return r;
}

void report_to_csv(const DiagnosticsReport& r, std::string& out) {
    auto row = [&](const char* metric, std::int64_t index, double value) {
        out += std::to_string(r.layer);
        out += ',';
        out += std::to_string(r.head);
        out += ',';
        out += metric;
        out += ',';
        out += std::to_string(index);
        out += ',';
        out += fmt_double(value);
        out += '\n';
    };
    row("sparsity", 0, r.sparsity);
    row("max_abs", 0, r.max_abs);
    row("dead_rows", 0, static_cast<double>(r.dead_rows));
    for (std::size_t i = 0; i < r.entropy_by_row.size(); ++i)
        row("entropy", static_cast<std::int64_t>(i + 1), r.entropy_by_row[i]);
    for (std::size_t i = 0; i < r.dispersion_ratio_by_row.size(); ++i)
        if (r.dispersion_ratio_by_row[i])
            row("dispersion_ratio", static_cast<std::int64_t>(i + 1), *r.dispersion_ratio_by_row[i]);
    for (std::size_t k = 0; k < r.sink_ratio.size(); ++k)
        row("sink_ratio", static_cast<std::int64_t>(k + 1), r.sink_ratio[k]);
}

std::string report_to_json(const DiagnosticsReport& r) {
    nlohmann::json j;
    j["layer"] = r.layer;
    j["head"] = r.head;
    j["sparsity"] = r.sparsity;
    j["max_abs"] = r.max_abs;
    j["dead_rows"] = r.dead_rows;
    j["entropy_by_row"] = r.entropy_by_row;
    nlohmann::json disp = nlohmann::json::array();
    for (const auto& v : r.dispersion_ratio_by_row)
        disp.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    j["dispersion_ratio_by_row"] = disp;
    j["sink_ratio"] = r.sink_ratio;
    return j.dump();
}

}  // namespace tda
