#pragma once

// Tiny decoder-only causal LM with RoPE, RMSNorm post-norm blocks and a
// pluggable attention mechanism. Byte-level vocab. Manual forward/backward;
// templated on the scalar type so gradient checks can run fully in 64-bit.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tda/attn_params.hpp"
#include "tda/batch.hpp"
#include "tda/diagnostics.hpp"
#include "tda/rope.hpp"
#include "tda/stream_kernel.hpp"

namespace tda {

struct ModelConfig {
    int vocab_size = 256;
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int context_len = 256;
    Mechanism mechanism = Mechanism::TDA;
    AttnParams attn;
    double rope_theta = 10000.0;
    std::uint64_t seed = 1337;
    bool per_head_beta = false;  // one beta per layer when false
    bool use_streaming = false;  // TRA/TDA only: tile-blocked kernel instead of the dense path
    TileConfig tiles;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

// Flat parameter/gradient storage with named entries.
template <typename Real>
struct ParamTable {
    std::vector<Real> w, g;
    struct Entry {
        std::string name;
        std::size_t offset = 0, count = 0;
        std::vector<std::int64_t> shape;
        bool decay = false;
    };
    std::vector<Entry> entries;

    std::size_t add(std::string name, std::vector<std::int64_t> shape, bool decay) {
        std::size_t count = 1;
        for (auto s : shape) count *= static_cast<std::size_t>(s);
        Entry e{std::move(name), w.size(), count, std::move(shape), decay};
        entries.push_back(std::move(e));
        w.resize(w.size() + count, Real(0));
        g.resize(w.size(), Real(0));
        return entries.size() - 1;
    }
    Real* param(std::size_t idx) { return w.data() + entries[idx].offset; }
    const Real* param(std::size_t idx) const { return w.data() + entries[idx].offset; }
    Real* grad(std::size_t idx) { return g.data() + entries[idx].offset; }
    const Entry* find(std::string_view name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
    void zero_grad() { std::fill(g.begin(), g.end(), Real(0)); }
};

struct LayerRefs {
    std::size_t wq = kNoParam, wk = kNoParam, wv = kNoParam, wo = kNoParam;
    std::size_t wq2 = kNoParam, wk2 = kNoParam;
    std::size_t out_gain = kNoParam, out_bias = kNoParam;
    std::size_t beta = kNoParam, lambda = kNoParam;
    std::size_t norm1 = kNoParam, norm2 = kNoParam;
    std::size_t w1 = kNoParam, w2 = kNoParam;
};

// Per-sequence activation cache. Buffers are reused across steps.
template <typename Real>
struct SeqWork {
    struct Layer {
        std::vector<Real> x_in, q, k, v, q2, k2;      // [T, C]
        std::vector<Real> qr, kr, q2r, k2r;           // rope-rotated
        std::vector<Real> qh, kh, q2h, k2h;           // L2-normalized (TRA/TDA)
        std::vector<Real> att1, att2;                 // [H, T, T] per-view rectified / probs
        std::vector<Real> agg, head_out, attn_out;    // [T, C]
        std::vector<Real> resid1, h1, ffn_pre, ffn_act, ffn_out, resid2, out;
    };
    std::int64_t t = 0;
    std::vector<Real> x0;      // [T, C]
    std::vector<Layer> layers;
    std::vector<Real> logits;  // [T, V]
    std::vector<Real> probs;   // [T, V] (softmax of logits, loss path)

    // backward scratch
    std::vector<Real> d_x, d_mid, d_q, d_k, d_v, d_q2, d_k2, d_agg, d_head, d_ffn;
};

template <typename Real>
struct LmModel {
    ModelConfig cfg;
    ParamTable<Real> params;
    std::size_t tok_emb = kNoParam, lm_head = kNoParam;
    std::vector<LayerRefs> layers;
    RopeTable<Real> rope;

    static LmModel build(const ModelConfig& cfg);

    // Forward one sequence; fills work.logits. When targets are given returns
    // the mean next-token cross entropy over all positions, else 0.
    double forward_seq(std::span<const std::uint8_t> tokens, SeqWork<Real>& work,
                       std::span<const std::uint8_t> targets = {}) const;

    // Backward after a forward_seq with targets; accumulates loss_scale *
    // d(mean CE)/d(param) into params.g.
    void backward_seq(std::span<const std::uint8_t> tokens, std::span<const std::uint8_t> targets,
                      SeqWork<Real>& work, double loss_scale);

    // One residual block applied to an explicit activation (testing hook).
    std::vector<Real> block_forward(int layer, std::span<const Real> x, std::int64_t t) const;

    // Dense-path weight matrices for every (layer, head) on one sequence.
    std::vector<WeightMatrix> collect_weights(std::span<const std::uint8_t> tokens) const;

    std::vector<std::uint8_t> greedy_decode(std::span<const std::uint8_t> prompt, int max_new) const;

    std::int64_t non_attention_param_count() const;

    double beta_value(int layer, int head) const;
    double lambda_raw(int layer) const;
};

using Model = LmModel<float>;

extern template struct LmModel<float>;
extern template struct LmModel<double>;

}  // namespace tda
