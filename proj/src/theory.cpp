#include "tda/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tda/csv.hpp"
#include "tda/diagnostics.hpp"
#include "tda/rng.hpp"

namespace tda {

std::vector<double> sample_noise_row(std::int64_t i, const NoiseModel& model, std::mt19937_64& rng) {
    model.validate();
    if (i < 1) throw std::invalid_argument("sample_noise_row: i must be >= 1");
    std::normal_distribution<double> dist(0.0, model.sigma / std::sqrt(static_cast<double>(model.head_dim)));
    std::vector<double> out(static_cast<std::size_t>(i));
    for (auto& x : out) x = dist(rng);
    return out;
}

std::int64_t count_survivors(std::span<const double> scores, double tau) {
    std::int64_t n = 0;
    for (const double s : scores)
        if (s > tau) ++n;
    return n;
}

std::int64_t count_consensus(std::span<const double> s1, std::span<const double> s2, double tau) {
    if (s1.size() != s2.size())
        throw std::invalid_argument("count_consensus: length mismatch");
    std::int64_t n = 0;
    for (std::size_t j = 0; j < s1.size(); ++j)
        if (s1[j] > tau && s2[j] > tau) ++n;
    return n;
}

namespace {

struct Moments {
    double sum = 0.0, sumsq = 0.0;
    std::int64_t n = 0;
    void add(double x) {
        sum += x;
        sumsq += x * x;
        ++n;
    }
    double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
    // standard error = sample std (n-1) / sqrt(n)
    double se() const {
        if (n < 2) return 0.0;
        const double m = mean();
        const double var = std::max(0.0, (sumsq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1));
        return std::sqrt(var / static_cast<double>(n));
    }
};

std::vector<double> tra_row_weights(std::span<const double> scores, double tau, int p) {
    std::vector<double> w(scores.size(), 0.0);
    for (std::size_t j = 0; j < scores.size(); ++j) {
        const double x = scores[j] - tau;
        if (x > 0.0) w[j] = pow_int(x, p);
    }
    return w;
}

double softmax_entropy(std::span<const double> scores) {
    double mx = scores[0];
    for (const double s : scores) mx = std::max(mx, s);
    double denom = 0.0;
    for (const double s : scores) denom += std::exp(s - mx);
    double h = 0.0;
    for (const double s : scores) {
        const double p = std::exp(s - mx) / denom;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

// Plant `count` relevant keys at tau + margin at distinct positions chosen by rng.
void plant_relevant(std::vector<double>& scores, int count, double tau, double margin,
                    std::mt19937_64& rng) {
    const std::int64_t n = static_cast<std::int64_t>(scores.size());
    const int planted = static_cast<int>(std::min<std::int64_t>(count, n));
    for (int r = 0; r < planted; ++r) {
        std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
        std::int64_t pos = pick(rng);
        scores[static_cast<std::size_t>(pos)] = tau + margin;  // collisions allowed, r is an upper bound
    }
}

}  // namespace

std::vector<SurvivorStats> run_survivor_experiment(const TrialConfig& cfg, const NoiseModel& model) {
    cfg.validate();
    model.validate();
    const int d = model.head_dim;
    const int p = cfg.params.power;

    std::vector<SurvivorStats> out;
    out.reserve(cfg.rows.size());
    for (const std::int64_t i : cfg.rows) {
        const double tau = threshold_raw(i, cfg.params.beta, cfg.params.kappa, d);
        Moments mS, mC, mH;
        for (int trial = 0; trial < cfg.trials; ++trial) {
            auto rng1 = make_engine(cfg.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(trial), 0);
            auto rng2 = make_engine(cfg.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(trial), 1);
            const auto s1 = sample_noise_row(i, model, rng1);
            const auto s2 = sample_noise_row(i, model, rng2);
            mS.add(static_cast<double>(count_survivors(s1, tau)));
            mC.add(static_cast<double>(count_consensus(s1, s2, tau)));
            const auto w = tra_row_weights(s1, tau, p);
            const double h = effective_entropy(w);
            mH.add(i >= 2 ? h / std::log(static_cast<double>(i)) : 0.0);
        }
        SurvivorStats st;
        st.i = i;
        st.mean_S = mS.mean();
        st.se_S = mS.se();
        st.mean_C = mC.mean();
        st.se_C = mC.se();
        st.mean_entropy_ratio = mH.mean();
        st.bound_S = cfg.params.kappa * static_cast<double>(i) / static_cast<double>(i + 1);
        st.bound_C = cfg.params.kappa * cfg.params.kappa / static_cast<double>(i + 1);
        out.push_back(st);
    }
    return out;
}

std::vector<DispersionStats> run_dispersion_experiment(const TrialConfig& cfg, const NoiseModel& model) {
    cfg.validate();
    model.validate();
    const int d = model.head_dim;
    const int p = cfg.params.power;
    const double lam = cfg.params.lambda_clamped();

    std::vector<DispersionStats> out;
    out.reserve(cfg.rows.size());
    for (const std::int64_t i : cfg.rows) {
        const double tau = threshold_raw(i, cfg.params.beta, cfg.params.kappa, d);
        const double logi = i >= 2 ? std::log(static_cast<double>(i)) : 1.0;
        Moments mTra, mTda, mSoft;
        double worst_violation = 0.0;
        for (int trial = 0; trial < cfg.trials; ++trial) {
            auto rng1 = make_engine(cfg.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(trial), 2);
            auto rng2 = make_engine(cfg.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(trial), 3);
            auto s1 = sample_noise_row(i, model, rng1);
            const auto s2 = sample_noise_row(i, model, rng2);
            plant_relevant(s1, cfg.relevant_count, tau, cfg.relevant_margin, rng1);

            const auto w1 = tra_row_weights(s1, tau, p);
            const auto w2 = tra_row_weights(s2, tau, p);
            std::vector<double> dw(w1.size());
            for (std::size_t j = 0; j < w1.size(); ++j) dw[j] = w1[j] - lam * w2[j];

            const double h1 = effective_entropy(w1);
            mTra.add(i >= 2 ? h1 / logi : 0.0);
            mTda.add(i >= 2 ? effective_entropy(dw) / logi : 0.0);
            mSoft.add(i >= 2 ? softmax_entropy(s1) / logi : 0.0);

            // literal support bound on the view-1 row
            const std::int64_t surv = count_survivors(s1, tau);
            const double support_cap = std::log(std::max<double>(1.0, static_cast<double>(surv)));
            worst_violation = std::max(worst_violation, h1 - support_cap);
        }
        DispersionStats st;
        st.i = i;
        st.ratio_tra = mTra.mean();
        st.ratio_tda = mTda.mean();
        st.ratio_softmax = mSoft.mean();
        st.max_support_violation = worst_violation;
        out.push_back(st);
    }
    return out;
}

std::string survivor_csv(std::span<const SurvivorStats> stats, std::span<const DispersionStats> disp) {
    std::string s = "i,mean_S,se_S,bound_S,mean_C,se_C,bound_C,entropy_ratio_tra,entropy_ratio_softmax\n";
    for (std::size_t r = 0; r < stats.size(); ++r) {
        const auto& st = stats[r];
        const double ratio_tra = r < disp.size() ? disp[r].ratio_tra : st.mean_entropy_ratio;
        const double ratio_soft = r < disp.size() ? disp[r].ratio_softmax : 0.0;
        s += fmt_double(static_cast<double>(st.i)) + ',' + fmt_double(st.mean_S) + ',' +
             fmt_double(st.se_S) + ',' + fmt_double(st.bound_S) + ',' + fmt_double(st.mean_C) + ',' +
             fmt_double(st.se_C) + ',' + fmt_double(st.bound_C) + ',' + fmt_double(ratio_tra) + ',' +
             fmt_double(ratio_soft) + '\n';
    }
    return s;
}

std::string dispersion_csv(std::span<const DispersionStats> disp) {
    std::string s = "i,ratio_tra,ratio_tda,ratio_softmax\n";
    for (const auto& st : disp)
        s += fmt_double(static_cast<double>(st.i)) + ',' + fmt_double(st.ratio_tra) + ',' +
             fmt_double(st.ratio_tda) + ',' + fmt_double(st.ratio_softmax) + '\n';
    return s;
}

}  // namespace tda
