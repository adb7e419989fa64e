#include "tda/train.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "tda/checkpoint.hpp"
#include "tda/csv.hpp"
#include "tda/diagnostics.hpp"
#include "tda/rng.hpp"

namespace tda {

double lr_at(const TrainConfig& cfg, int step) {
    if (step <= cfg.warmup_steps)
        return cfg.lr_max * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    if (step >= cfg.total_steps) return cfg.lr_min;
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(progress * M_PI));
}

void AdamW::update(ParamTable<float>& params, double lr, double weight_decay) {
    if (m.size() != params.w.size()) init(params.w.size());
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (const auto& e : params.entries) {
        const double wd = e.decay ? weight_decay : 0.0;
        for (std::size_t i = e.offset; i < e.offset + e.count; ++i) {
            const double g = static_cast<double>(params.g[i]);
            const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
            const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            const double w = static_cast<double>(params.w[i]);
            params.w[i] = static_cast<float>(w - lr * (mhat / (std::sqrt(vhat) + eps) + wd * w));
        }
    }
}

namespace {

// windows start anywhere in the train region
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> sample_window(
    std::span<const std::uint8_t> region, int seq_len, std::mt19937_64& rng) {
    const std::size_t span = region.size() - static_cast<std::size_t>(seq_len) - 1;
    std::uniform_int_distribution<std::size_t> dist(0, span);
    const std::size_t s = dist(rng);
    std::vector<std::uint8_t> x(region.begin() + s, region.begin() + s + seq_len);
    std::vector<std::uint8_t> y(region.begin() + s + 1, region.begin() + s + 1 + seq_len);
    return {std::move(x), std::move(y)};
}

double global_grad_norm(const ParamTable<float>& params) {
    double sq = 0.0;
    for (const float g : params.g) sq += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(sq);
}

}  // namespace

double eval_model(const Model& model, const ByteCorpus& corpus, const TrainConfig& cfg,
                  int* dead_heads_out) {
    const int seq_len = std::min(cfg.seq_len, model.cfg.context_len);
    auto region = corpus.val();
    if (region.size() < static_cast<std::size_t>(seq_len) + 2)
        throw std::invalid_argument("eval: validation split too small");
    auto rng = make_engine(cfg.seed, ScopeEval);
    SeqWork<float> work;
    double loss = 0.0;
    for (int b = 0; b < cfg.eval_batches; ++b) {
        auto [x, y] = sample_window(region, seq_len, rng);
        loss += model.forward_seq(x, work, y);
    }
    if (dead_heads_out) {
        *dead_heads_out = 0;
        const bool tra_like =
            model.cfg.mechanism == Mechanism::TRA || model.cfg.mechanism == Mechanism::TDA;
        if (tra_like) {
            auto rng2 = make_engine(cfg.seed, ScopeEval, 1);
            auto [x, y] = sample_window(region, seq_len, rng2);
            auto mats = model.collect_weights(x);
            for (const auto& w : mats) {
                bool dead = true;
                for (const double a : w.a)
                    if (a != 0.0) {
                        dead = false;
                        break;
                    }
                if (dead) ++*dead_heads_out;
            }
        }
    }
    return loss / cfg.eval_batches;
}

double eval_sparsity(const Model& model, const ByteCorpus& corpus, const TrainConfig& cfg, int batches) {
    const int seq_len = std::min(cfg.seq_len, model.cfg.context_len);
    auto region = corpus.val();
    auto rng = make_engine(cfg.seed, ScopeSparsity);
    double total = 0.0;
    std::int64_t count = 0;
    for (int b = 0; b < batches; ++b) {
        auto [x, y] = sample_window(region, seq_len, rng);
        auto mats = model.collect_weights(x);
        for (const auto& w : mats) {
            total += sparsity(w);
            ++count;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

TrainSummary train_model(Model& model, AdamW& opt, const ByteCorpus& corpus, const TrainConfig& cfg,
                         const std::string& out_dir, const StepHook& hook, int start_step,
                         const std::string& resume_rng, int end_step) {
    cfg.validate();
    model.cfg.validate();
    const int seq_len = std::min(cfg.seq_len, model.cfg.context_len);
    const int n_seq = std::max(1, cfg.batch_tokens / seq_len);
    auto train_region = corpus.train();
    if (train_region.size() < static_cast<std::size_t>(seq_len) + 2)
        throw std::invalid_argument("train: train split too small");

    if (opt.m.size() != model.params.w.size()) opt.init(model.params.w.size());
    auto rng = make_engine(cfg.seed, ScopeTrain);
    if (start_step > 0 && !resume_rng.empty()) {
        std::istringstream ss(resume_rng);
        ss >> rng;
        if (!ss) throw std::invalid_argument("train: bad resume rng state");
    }
    SeqWork<float> work;

    TrainSummary summary;
    double running = 0.0;
    int running_n = 0;
    const int last_step = end_step > 0 ? std::min(end_step, cfg.total_steps) : cfg.total_steps;
    for (int step = start_step + 1; step <= last_step; ++step) {
        model.params.zero_grad();
        double loss = 0.0;
        std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>> batch;
        batch.reserve(static_cast<std::size_t>(n_seq));
        for (int s = 0; s < n_seq; ++s) batch.push_back(sample_window(train_region, seq_len, rng));
        for (int s = 0; s < n_seq; ++s) {
            loss += model.forward_seq(batch[s].first, work, batch[s].second);
            model.backward_seq(batch[s].first, batch[s].second, work, 1.0 / n_seq);
        }
        loss /= n_seq;

        if (!std::isfinite(loss)) {
            summary.diverged = true;
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                save_checkpoint(out_dir + "/diverged.ckpt", model, opt, step, "diverged");
            }
            throw TrainDivergence("training diverged at step " + std::to_string(step) +
                                  " (loss is not finite)");
        }

        const double gn = global_grad_norm(model.params);
        if (cfg.grad_clip > 0.0 && gn > cfg.grad_clip) {
            const float scale = static_cast<float>(cfg.grad_clip / gn);
            for (float& g : model.params.g) g *= scale;
        }
        opt.update(model.params, lr_at(cfg, step), cfg.weight_decay);

        running += loss;
        ++running_n;
        if (hook) hook(step, loss);

        if (step % cfg.eval_interval == 0 || step == last_step) {
            int dead = 0;
            const double val = eval_model(model, corpus, cfg, &dead);
            LossPoint pt;
            pt.step = step;
            pt.train_loss = running / running_n;
            pt.val_loss = val;
            pt.lr = lr_at(cfg, step);
            summary.curve.push_back(pt);
            summary.final_val_loss = val;
            summary.dead_heads_last_eval = dead;
            running = 0.0;
            running_n = 0;
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                std::ostringstream ss;
                ss << rng;
                save_checkpoint(out_dir + "/latest.ckpt", model, opt, step, "", ss.str());
            }
        }
    }
    return summary;
}

std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
    std::string s = "step,train_loss,val_loss,lr\n";
    for (const auto& p : curve)
        s += std::to_string(p.step) + ',' + fmt_double(p.train_loss) + ',' + fmt_double(p.val_loss) +
             ',' + fmt_double(p.lr) + '\n';
    return s;
}

}  // namespace tda
