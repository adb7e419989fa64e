#include "tda/config_json.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace tda {

Mechanism mechanism_from_string(const std::string& s) {
    if (s == "softmax") return Mechanism::Softmax;
    if (s == "rela") return Mechanism::ReLA;
    if (s == "diff_softmax") return Mechanism::DiffSoftmax;
    if (s == "tra") return Mechanism::TRA;
    if (s == "tda") return Mechanism::TDA;
    throw std::invalid_argument("unknown mechanism: " + s +
                                " (expected softmax|rela|diff_softmax|tra|tda)");
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::string& path,
                    const std::set<std::string>& allowed) {
    if (!j.is_object()) throw std::invalid_argument("config: " + path + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key '" +
                                        (path.empty() ? key : path + "." + key) + "'");
}

template <typename T>
void opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_attn(AttnParams& a, const nlohmann::json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"beta", "kappa", "power", "lambda", "norm_epsilon", "train_beta", "train_lambda"});
    opt(j, "beta", a.beta);
    opt(j, "kappa", a.kappa);
    opt(j, "power", a.power);
    opt(j, "lambda", a.lambda);
    opt(j, "norm_epsilon", a.norm_epsilon);
    opt(j, "train_beta", a.train_beta);
    opt(j, "train_lambda", a.train_lambda);
}

void apply_tiles(TileConfig& t, const nlohmann::json& j, const std::string& path) {
    reject_unknown(j, path, {"block_m", "block_n"});
    opt(j, "block_m", t.block_m);
    opt(j, "block_n", t.block_n);
}

void apply_model(ModelConfig& m, const nlohmann::json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"vocab_size", "d_model", "n_layers", "n_heads", "context_len", "mechanism",
                    "rope_theta", "seed", "per_head_beta", "use_streaming", "attn", "tiles"});
    opt(j, "vocab_size", m.vocab_size);
    opt(j, "d_model", m.d_model);
    opt(j, "n_layers", m.n_layers);
    opt(j, "n_heads", m.n_heads);
    opt(j, "context_len", m.context_len);
    if (j.contains("mechanism")) m.mechanism = mechanism_from_string(j.at("mechanism").get<std::string>());
    opt(j, "rope_theta", m.rope_theta);
    opt(j, "seed", m.seed);
    opt(j, "per_head_beta", m.per_head_beta);
    opt(j, "use_streaming", m.use_streaming);
    if (j.contains("attn")) apply_attn(m.attn, j.at("attn"), path + ".attn");
    if (j.contains("tiles")) apply_tiles(m.tiles, j.at("tiles"), path + ".tiles");
}

void apply_train(TrainConfig& t, const nlohmann::json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"lr_max", "lr_min", "warmup_steps", "total_steps", "weight_decay", "batch_tokens",
                    "grad_clip", "eval_interval", "eval_batches", "seed", "seq_len", "val_fraction"});
    opt(j, "lr_max", t.lr_max);
    opt(j, "lr_min", t.lr_min);
    opt(j, "warmup_steps", t.warmup_steps);
    opt(j, "total_steps", t.total_steps);
    opt(j, "weight_decay", t.weight_decay);
    opt(j, "batch_tokens", t.batch_tokens);
    opt(j, "grad_clip", t.grad_clip);
    opt(j, "eval_interval", t.eval_interval);
    opt(j, "eval_batches", t.eval_batches);
    opt(j, "seed", t.seed);
    opt(j, "seq_len", t.seq_len);
    opt(j, "val_fraction", t.val_fraction);
}

void apply_theory(TrialConfig& t, NoiseModel& n, const nlohmann::json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"rows", "trials", "beta", "kappa", "power", "lambda", "sigma", "head_dim",
                    "relevant_count", "relevant_margin", "seed"});
    opt(j, "rows", t.rows);
    opt(j, "trials", t.trials);
    opt(j, "beta", t.params.beta);
    opt(j, "kappa", t.params.kappa);
    opt(j, "power", t.params.power);
    opt(j, "lambda", t.params.lambda);
    opt(j, "sigma", n.sigma);
    opt(j, "head_dim", n.head_dim);
    opt(j, "relevant_count", t.relevant_count);
    opt(j, "relevant_margin", t.relevant_margin);
    opt(j, "seed", t.seed);
}

void apply_diagnose(DiagnoseConfig& d, const nlohmann::json& j, const std::string& path) {
    reject_unknown(j, path, {"checkpoint", "text", "random_tokens", "sink_positions", "emit_weights"});
    opt(j, "checkpoint", d.checkpoint);
    opt(j, "text", d.text);
    opt(j, "random_tokens", d.random_tokens);
    opt(j, "sink_positions", d.sink_positions);
    opt(j, "emit_weights", d.emit_weights);
}

void apply_passkey(PasskeyRunConfig& p, const nlohmann::json& j, const std::string& path) {
    reject_unknown(j, path, {"checkpoint", "lengths", "trials", "max_new_tokens", "dump_jsonl"});
    opt(j, "checkpoint", p.checkpoint);
    opt(j, "lengths", p.lengths);
    opt(j, "trials", p.trials);
    opt(j, "max_new_tokens", p.max_new_tokens);
    opt(j, "dump_jsonl", p.dump_jsonl);
}

void apply_bench(BenchConfig& b, const nlohmann::json& j, const std::string& path) {
    reject_unknown(j, path, {"sizes", "reps", "warmups", "batch", "heads", "head_dim"});
    opt(j, "sizes", b.sizes);
    opt(j, "reps", b.reps);
    opt(j, "warmups", b.warmups);
    opt(j, "batch", b.batch);
    opt(j, "heads", b.heads);
    opt(j, "head_dim", b.head_dim);
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["vocab_size"] = cfg.vocab_size;
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["context_len"] = cfg.context_len;
    j["mechanism"] = mechanism_name(cfg.mechanism);
    j["rope_theta"] = cfg.rope_theta;
    j["seed"] = cfg.seed;
    j["per_head_beta"] = cfg.per_head_beta;
    j["use_streaming"] = cfg.use_streaming;
    j["attn"] = {{"beta", cfg.attn.beta},
                 {"kappa", cfg.attn.kappa},
                 {"power", cfg.attn.power},
                 {"lambda", cfg.attn.lambda},
                 {"norm_epsilon", cfg.attn.norm_epsilon},
                 {"train_beta", cfg.attn.train_beta},
                 {"train_lambda", cfg.attn.train_lambda}};
    j["tiles"] = {{"block_m", cfg.tiles.block_m}, {"block_n", cfg.tiles.block_n}};
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    apply_model(cfg, j, "model");
    cfg.validate();
    return cfg;
}

RunConfig preset_config(const std::string& preset) {
    RunConfig cfg;
    if (preset == "desk" || preset.empty()) {
        // defaults in the struct definitions are the desk preset
        cfg.model.context_len = 512;
        cfg.theory.rows = {64, 256, 1024, 4096};
        cfg.theory.trials = 2000;
        cfg.theory.seed = 7;
    } else if (preset == "paper") {
        // reference values from the source experiments; not sized for a desk
        cfg.model.d_model = 768;
        cfg.model.n_layers = 12;
        cfg.model.n_heads = 12;
        cfg.model.context_len = 1024;
        cfg.train.total_steps = 190730;
        cfg.train.warmup_steps = 715;
        cfg.train.batch_tokens = 524288;
        cfg.train.seq_len = 1024;
        cfg.theory.rows = {64, 256, 1024, 4096};
        cfg.theory.trials = 2000;
        cfg.theory.seed = 7;
        cfg.passkey.lengths = {500, 1000, 1500, 2000, 2500, 3000, 3500, 4000};
    } else {
        throw std::invalid_argument("unknown preset: " + preset + " (expected desk|paper)");
    }
    return cfg;
}

void apply_config_json(RunConfig& cfg, const nlohmann::json& doc) {
    reject_unknown(doc, "",
                   {"seed", "threads", "output_dir", "corpus", "model", "train", "theory", "tiles",
                    "diagnose", "passkey", "bench"});
    opt(doc, "seed", cfg.seed);
    opt(doc, "threads", cfg.threads);
    opt(doc, "output_dir", cfg.output_dir);
    opt(doc, "corpus", cfg.corpus);
    if (doc.contains("model")) apply_model(cfg.model, doc.at("model"), "model");
    if (doc.contains("train")) apply_train(cfg.train, doc.at("train"), "train");
    if (doc.contains("theory")) apply_theory(cfg.theory, cfg.noise, doc.at("theory"), "theory");
    if (doc.contains("tiles")) apply_tiles(cfg.tiles, doc.at("tiles"), "tiles");
    if (doc.contains("diagnose")) apply_diagnose(cfg.diagnose, doc.at("diagnose"), "diagnose");
    if (doc.contains("passkey")) apply_passkey(cfg.passkey, doc.at("passkey"), "passkey");
    if (doc.contains("bench")) apply_bench(cfg.bench, doc.at("bench"), "bench");
}

RunConfig load_run_config(const std::string& path, const std::string& preset) {
    RunConfig cfg = preset_config(preset);
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config: " + path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::parse_error& e) {
            throw std::invalid_argument("config parse error in " + path + ": " + e.what());
        }
        apply_config_json(cfg, doc);
    }
    return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["output_dir"] = cfg.output_dir;
    j["corpus"] = cfg.corpus;
    j["model"] = model_config_to_json(cfg.model);
    j["train"] = {{"lr_max", cfg.train.lr_max},
                  {"lr_min", cfg.train.lr_min},
                  {"warmup_steps", cfg.train.warmup_steps},
                  {"total_steps", cfg.train.total_steps},
                  {"weight_decay", cfg.train.weight_decay},
                  {"batch_tokens", cfg.train.batch_tokens},
                  {"grad_clip", cfg.train.grad_clip},
                  {"eval_interval", cfg.train.eval_interval},
                  {"eval_batches", cfg.train.eval_batches},
                  {"seed", cfg.train.seed},
                  {"seq_len", cfg.train.seq_len},
                  {"val_fraction", cfg.train.val_fraction}};
    j["theory"] = {{"rows", cfg.theory.rows},
                   {"trials", cfg.theory.trials},
                   {"beta", cfg.theory.params.beta},
                   {"kappa", cfg.theory.params.kappa},
                   {"power", cfg.theory.params.power},
                   {"lambda", cfg.theory.params.lambda},
                   {"sigma", cfg.noise.sigma},
                   {"head_dim", cfg.noise.head_dim},
                   {"relevant_count", cfg.theory.relevant_count},
                   {"relevant_margin", cfg.theory.relevant_margin},
                   {"seed", cfg.theory.seed}};
    j["tiles"] = {{"block_m", cfg.tiles.block_m}, {"block_n", cfg.tiles.block_n}};
    j["diagnose"] = {{"checkpoint", cfg.diagnose.checkpoint},
                     {"text", cfg.diagnose.text},
                     {"random_tokens", cfg.diagnose.random_tokens},
                     {"sink_positions", cfg.diagnose.sink_positions},
                     {"emit_weights", cfg.diagnose.emit_weights}};
    j["passkey"] = {{"checkpoint", cfg.passkey.checkpoint},
                    {"lengths", cfg.passkey.lengths},
                    {"trials", cfg.passkey.trials},
                    {"max_new_tokens", cfg.passkey.max_new_tokens},
                    {"dump_jsonl", cfg.passkey.dump_jsonl}};
    j["bench"] = {{"sizes", cfg.bench.sizes},
                  {"reps", cfg.bench.reps},
                  {"warmups", cfg.bench.warmups},
                  {"batch", cfg.bench.batch},
                  {"heads", cfg.bench.heads},
                  {"head_dim", cfg.bench.head_dim}};
    return j;
}

}  // namespace tda
