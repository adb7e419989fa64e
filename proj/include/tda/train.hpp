#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tda/corpus.hpp"
#include "tda/model.hpp"

namespace tda {

struct TrainConfig {
    double lr_max = 1e-3;
    double lr_min = 1e-4;
    int warmup_steps = 100;
    int total_steps = 2000;
    double weight_decay = 0.1;
    int batch_tokens = 768;
    double grad_clip = 1.0;
    int eval_interval = 250;
    int eval_batches = 20;
    std::uint64_t seed = 1337;
    int seq_len = 256;
    double val_fraction = 0.1;

    void validate() const {
        if (!(lr_max > 0.0) || !(lr_min > 0.0)) throw std::invalid_argument("TrainConfig: rates must be > 0");
        if (warmup_steps > total_steps) throw std::invalid_argument("TrainConfig: warmup > total");
        if (warmup_steps < 1 || total_steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
        if (batch_tokens < seq_len) throw std::invalid_argument("TrainConfig: batch_tokens < seq_len");
        if (seq_len < 2) throw std::invalid_argument("TrainConfig: seq_len must be >= 2");
        if (eval_interval < 1 || eval_batches < 1) throw std::invalid_argument("TrainConfig: eval params");
        if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
            throw std::invalid_argument("TrainConfig: val_fraction must be in (0,1)");
    }
};

// Linear warmup to lr_max (hit exactly at step == warmup), cosine decay to
// lr_min at step == total. Steps are 1-based.
double lr_at(const TrainConfig& cfg, int step);

// Decoupled-weight-decay Adam. Scalars flagged no-decay in the param table
// (norm gains, beta, lambda) are never decayed.
struct AdamW {
    double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;
    std::vector<float> m, v;
    std::int64_t step = 0;

    void init(std::size_t n) {
        m.assign(n, 0.0f);
        v.assign(n, 0.0f);
        step = 0;
    }
    void update(ParamTable<float>& params, double lr, double weight_decay);
};

struct LossPoint {
    int step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainSummary {
    std::vector<LossPoint> curve;
    double final_val_loss = 0.0;
    bool diverged = false;
    int dead_heads_last_eval = 0;
};

struct TrainDivergence : std::runtime_error {
    explicit TrainDivergence(const std::string& msg) : std::runtime_error(msg) {}
};

// Per-step callback: (step, train_loss); return is ignored.
using StepHook = std::function<void(int, double)>;

// Standard next-token cross-entropy training on byte windows sampled from the
// train split. Deterministic given seed. Throws TrainDivergence on NaN loss
// after writing a diagnostic snapshot next to out_dir (when non-empty).
// Passing start_step > 0 together with the rng state saved in a checkpoint
// resumes the exact run: N steps straight and N/2 + resume are bit-identical.
// end_step = 0 runs through cfg.total_steps; a smaller value stops early while
// keeping the full schedule (for split runs that resume later).
TrainSummary train_model(Model& model, AdamW& opt, const ByteCorpus& corpus, const TrainConfig& cfg,
                         const std::string& out_dir = "", const StepHook& hook = {},
                         int start_step = 0, const std::string& resume_rng = "", int end_step = 0);

// Mean validation loss over the fixed eval batches (deterministic).
double eval_model(const Model& model, const ByteCorpus& corpus, const TrainConfig& cfg,
                  int* dead_heads_out = nullptr);

// Mean exact-zero weight sparsity over `batches` held-out sequences,
// averaged over layers and heads (dense-path materialization).
double eval_sparsity(const Model& model, const ByteCorpus& corpus, const TrainConfig& cfg, int batches);

std::string loss_curve_csv(const std::vector<LossPoint>& curve);

}  // namespace tda
