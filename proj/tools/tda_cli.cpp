// Command-line surface: train / diagnose / verify-theory / passkey / bench.
// Every subcommand reads an optional JSON config over a preset, applies flag
// overrides (flag > file > preset default), writes a resolved-config snapshot
// next to its outputs, and emits plain CSV/JSON artifacts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tda/checkpoint.hpp"
#include "tda/config_json.hpp"
#include "tda/corpus.hpp"
#include "tda/csv.hpp"
#include "tda/diagnostics.hpp"
#include "tda/model.hpp"
#include "tda/passkey.hpp"
#include "tda/rng.hpp"
#include "tda/stream_kernel.hpp"
#include "tda/theory.hpp"
#include "tda/train.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace tda;

struct CommonFlags {
    std::string config_path;
    std::string preset = "desk";
    std::string output_dir;
    std::int64_t seed = -1;
    int threads = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_option("--preset", flags.preset, "preset defaults: desk | paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--seed", flags.seed, "master seed (overrides config)");
    cmd->add_option("--threads", flags.threads, "worker threads (0 = hardware)");
    cmd->add_option("--output", flags.output_dir, "output directory");
}

RunConfig resolve(const CommonFlags& flags) {
    RunConfig cfg = load_run_config(flags.config_path, flags.preset);
    if (flags.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(flags.seed);
        cfg.model.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.theory.seed = cfg.seed;
    }
    if (flags.threads >= 0) cfg.threads = flags.threads;
    if (!flags.output_dir.empty()) cfg.output_dir = flags.output_dir;
#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
    std::filesystem::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/resolved_config.json", run_config_to_json(cfg).dump(2) + "\n");
    return cfg;
}

ByteCorpus load_corpus(const RunConfig& cfg) {
    if (cfg.corpus.empty()) {
        std::cout << "corpus: bundled synthetic 1 MiB (seed 1)\n";
        return ByteCorpus::from_string(make_synthetic_corpus(1 << 20, 1), cfg.train.val_fraction);
    }
    return ByteCorpus::from_file(cfg.corpus, cfg.train.val_fraction);
}

int cmd_train(const CommonFlags& flags) {
    RunConfig cfg = resolve(flags);
    ByteCorpus corpus = load_corpus(cfg);
    auto model = Model::build(cfg.model);
    AdamW opt;
    std::cout << "training " << mechanism_name(cfg.model.mechanism) << " for "
              << cfg.train.total_steps << " steps\n";
    TrainSummary summary;
    try {
        summary = train_model(model, opt, corpus, cfg.train, cfg.output_dir,
                              [&](int step, double loss) {
                                  if (step % 100 == 0)
                                      std::cout << "step " << step << " loss " << loss << "\n";
                              });
    } catch (const TrainDivergence& e) {
        std::cerr << "error: " << e.what() << "\n";
        write_text_file(cfg.output_dir + "/loss.csv", loss_curve_csv({}));
        return 1;
    }
    write_text_file(cfg.output_dir + "/loss.csv", loss_curve_csv(summary.curve));
    std::cout << "final val loss " << fmt_double(summary.final_val_loss) << ", dead heads "
              << summary.dead_heads_last_eval << "\n";
    std::cout << "wrote " << cfg.output_dir << "/latest.ckpt and loss.csv\n";
    return 0;
}

int cmd_diagnose(const CommonFlags& flags) {
    RunConfig cfg = resolve(flags);
    if (cfg.diagnose.checkpoint.empty())
        throw std::invalid_argument("diagnose: config key diagnose.checkpoint is required");
    Checkpoint ck = load_checkpoint(cfg.diagnose.checkpoint);

    std::vector<std::uint8_t> tokens;
    if (cfg.diagnose.random_tokens > 0) {
        auto rng = make_engine(cfg.seed, 0xd1a6);
        tokens.resize(static_cast<std::size_t>(cfg.diagnose.random_tokens));
        for (auto& t : tokens) t = static_cast<std::uint8_t>(rng() % 256);
    } else {
        tokens.assign(cfg.diagnose.text.begin(), cfg.diagnose.text.end());
    }
    if (static_cast<int>(tokens.size()) > ck.config.context_len)
        throw std::invalid_argument("diagnose: input length " + std::to_string(tokens.size()) +
                                    " exceeds model context " + std::to_string(ck.config.context_len));

    auto mats = ck.model.collect_weights(tokens);
    std::string csv = "layer,head,metric,index,value\n";
    std::string jsonl;
    for (const auto& w : mats) {
        auto rep = analyze(w);
        report_to_csv(rep, csv);
        jsonl += report_to_json(rep) + "\n";
    }
    write_text_file(cfg.output_dir + "/diagnostics.csv", csv);
    write_text_file(cfg.output_dir + "/diagnostics.jsonl", jsonl);

    // stack-level sink ratios at the configured key positions
    std::string sink = "k,g_sink_ratio\n";
    for (const std::int64_t k : cfg.diagnose.sink_positions)
        if (k >= 1 && k <= static_cast<std::int64_t>(tokens.size()))
            sink += std::to_string(k) + ',' + fmt_double(g_sink_ratio(mats, k)) + '\n';
    write_text_file(cfg.output_dir + "/sink_ratio.csv", sink);

    if (cfg.diagnose.emit_weights) {
        for (const auto& w : mats) {
            std::string wcsv;
            for (std::int64_t i = 0; i < w.t; ++i) {
                for (std::int64_t j = 0; j < w.t; ++j) {
                    if (j) wcsv += ',';
                    wcsv += fmt_double(w.at(i, j));
                }
                wcsv += '\n';
            }
            write_text_file(cfg.output_dir + "/weights_l" + std::to_string(w.layer) + "_h" +
                                std::to_string(w.head) + ".csv",
                            wcsv);
        }
    }
    std::cout << "wrote diagnostics for " << mats.size() << " (layer, head) matrices to "
              << cfg.output_dir << "\n";
    return 0;
}

int cmd_verify_theory(const CommonFlags& flags) {
    RunConfig cfg = resolve(flags);
    NoiseModel noise = cfg.noise;
    TrialConfig tc = cfg.theory;

    auto stats = run_survivor_experiment(tc, noise);
    TrialConfig disp_cfg = tc;
    if (disp_cfg.relevant_count == 0) disp_cfg.relevant_count = 4;  // dispersion needs live keys
    auto disp = run_dispersion_experiment(disp_cfg, noise);
    write_text_file(cfg.output_dir + "/theory.csv", survivor_csv(stats, disp));
    write_text_file(cfg.output_dir + "/dispersion.csv", dispersion_csv(disp));

    bool all_pass = true;
    const bool bound_regime = tc.params.beta >= noise.sigma;
    double prev_c = std::numeric_limits<double>::infinity();
    for (const auto& st : stats) {
        const bool s_ok = !bound_regime || st.mean_S <= st.bound_S + 3.0 * st.se_S;
        const bool c_ok = !bound_regime || st.mean_C <= st.bound_C + 3.0 * st.se_C;
        const bool mono_ok = st.mean_C <= prev_c + 2.0 * st.se_C;
        prev_c = st.mean_C;
        // second-form bound E[S_i] <= (i+1)^(1 - beta^2/sigma^2), any beta
        const double ratio = tc.params.beta / noise.sigma;
        const double general = std::pow(static_cast<double>(st.i + 1), 1.0 - ratio * ratio) *
                               std::pow(tc.params.kappa, ratio * ratio);
        const bool g_ok = st.mean_S <= general + 3.0 * st.se_S;
        const bool ok = s_ok && c_ok && mono_ok && g_ok;
        all_pass = all_pass && ok;
        std::cout << "i=" << st.i << " mean_S=" << fmt_double(st.mean_S) << " (bound "
                  << fmt_double(st.bound_S) << ") mean_C=" << fmt_double(st.mean_C) << " (bound "
                  << fmt_double(st.bound_C) << ") " << (ok ? "PASS" : "FAIL") << "\n";
    }
    std::cout << (all_pass ? "theory bounds: PASS" : "theory bounds: FAIL") << "\n";
    return all_pass ? 0 : 1;
}

// byte-level greedy decoding adapter
struct LmGenerator : TextGenerator {
    const Model& model;
    explicit LmGenerator(const Model& m) : model(m) {}
    std::string generate(const std::string& prompt, int max_new) override {
        std::vector<std::uint8_t> toks(prompt.begin(), prompt.end());
        auto out = model.greedy_decode(toks, max_new);
        return std::string(out.begin(), out.end());
    }
};

int cmd_passkey(const CommonFlags& flags) {
    RunConfig cfg = resolve(flags);
    if (cfg.passkey.checkpoint.empty())
        throw std::invalid_argument("passkey: config key passkey.checkpoint is required");
    Checkpoint ck = load_checkpoint(cfg.passkey.checkpoint);
    const std::int64_t max_len =
        *std::max_element(cfg.passkey.lengths.begin(), cfg.passkey.lengths.end());
    if (max_len + cfg.passkey.max_new_tokens > ck.config.context_len)
        throw std::invalid_argument("passkey: model context " + std::to_string(ck.config.context_len) +
                                    " is too short for length " + std::to_string(max_len));

    LmGenerator gen(ck.model);
    std::vector<TrialResult> details;
    auto rows = run_trials(gen, cfg.passkey.lengths, cfg.passkey.trials, cfg.seed, byte_tokenizer,
                           cfg.passkey.max_new_tokens, cfg.passkey.dump_jsonl ? &details : nullptr);
    write_text_file(cfg.output_dir + "/passkey.csv", passkey_csv(rows));
    if (cfg.passkey.dump_jsonl) {
        std::string jsonl;
        for (const auto& r : details) {
            nlohmann::json j;
            j["length"] = r.trial.target_len;
            j["passkey"] = r.trial.passkey;
            j["prompt"] = r.trial.prompt;
            j["answer"] = r.model_answer;
            j["correct"] = r.correct;
            jsonl += j.dump() + "\n";
        }
        write_text_file(cfg.output_dir + "/passkey_trials.jsonl", jsonl);
    }
    for (const auto& r : rows)
        std::cout << "length " << r.length << ": " << r.correct << "/" << r.trials << " correct\n";
    return 0;
}

int cmd_bench(const CommonFlags& flags) {
    RunConfig cfg = resolve(flags);
    const BenchConfig& bc = cfg.bench;
    AttnParams params;  // beta=1, kappa=1, p=2 defaults
    auto rng = make_engine(cfg.seed, 0xbe7c);

    std::string times = "T,path,forward_ms,backward_ms\n";
    std::string memory = "T,path,peak_scratch_bytes,max_request_elems\n";
    std::vector<double> log_t, log_peak;

    using Clock = std::chrono::steady_clock;
    auto median_ms = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };

    bool audit_ok = true;
    for (const std::int64_t T : bc.sizes) {
        AttnBatch<float> batch;
        std::normal_distribution<double> dist;
        auto fill = [&](Array4<float>& a) {
            a = Array4<float>(bc.batch, bc.heads, T, bc.head_dim);
            for (auto& x : a.data) x = static_cast<float>(dist(rng));
        };
        fill(batch.q);
        fill(batch.k);
        fill(batch.v);
        Array4<float> upstream;
        fill(upstream);
        Array4<float> out(bc.batch, bc.heads, T, bc.head_dim);

        for (const bool streaming : {false, true}) {
            std::vector<double> fwd_ms, bwd_ms;
            ScratchArena audit;  // shared across reps; peak reflects one call (allocations repeat)
            ScratchStats stats;
            for (int rep = 0; rep < bc.warmups + bc.reps; ++rep) {
                ScratchArena arena;
                auto t0 = Clock::now();
                if (streaming)
                    tra_forward_streaming(batch, params, cfg.tiles, out, true, &arena);
                else
                    tra_forward_materialized(batch, params, out, true, &arena);
                auto t1 = Clock::now();
                if (streaming)
                    tra_backward_streaming(batch, params, upstream, cfg.tiles, true, &arena);
                else
                    tra_backward_materialized(batch, params, upstream, true, &arena);
                auto t2 = Clock::now();
                if (rep >= bc.warmups) {
                    fwd_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
                    bwd_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
                }
                stats = arena.stats();
            }
            const char* path = streaming ? "streaming" : "dense";
            times += std::to_string(T) + ',' + path + ',' + fmt_double(median_ms(fwd_ms)) + ',' +
                     fmt_double(median_ms(bwd_ms)) + '\n';
            memory += std::to_string(T) + ',' + path + ',' + std::to_string(stats.peak_bytes) + ',' +
                      std::to_string(stats.max_request_elems) + '\n';
            if (streaming) {
                log_t.push_back(std::log(static_cast<double>(T)));
                log_peak.push_back(std::log(static_cast<double>(stats.peak_bytes)));
                if (stats.max_request_elems >= static_cast<std::size_t>(T) * T / 2) {
                    std::cerr << "audit FAIL: scratch request of " << stats.max_request_elems
                              << " elements at T=" << T << "\n";
                    audit_ok = false;
                }
            }
        }
    }

    // log-log growth exponent of streaming peak scratch
    double exponent = 0.0;
    if (log_t.size() >= 2) {
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < log_t.size(); ++i) {
            mx += log_t[i];
            my += log_peak[i];
        }
        mx /= log_t.size();
        my /= log_t.size();
        double num = 0, den = 0;
        for (std::size_t i = 0; i < log_t.size(); ++i) {
            num += (log_t[i] - mx) * (log_peak[i] - my);
            den += (log_t[i] - mx) * (log_t[i] - mx);
        }
        exponent = den > 0 ? num / den : 0.0;
    }
    write_text_file(cfg.output_dir + "/bench_times.csv", times);
    write_text_file(cfg.output_dir + "/bench_memory.csv", memory);
    std::cout << "streaming scratch growth exponent: " << fmt_double(exponent) << "\n";
    if (exponent >= 1.5) {
        std::cerr << "audit FAIL: scratch grows with exponent " << exponent << " >= 1.5\n";
        audit_ok = false;
    }
    std::cout << (audit_ok ? "memory audit: PASS" : "memory audit: FAIL") << "\n";
    return audit_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"threshold rectified / differential attention toolkit"};
    app.require_subcommand(1);

    CommonFlags train_flags, diag_flags, theory_flags, passkey_flags, bench_flags;
    auto* train_cmd = app.add_subcommand("train", "train a tiny byte-level LM");
    add_common(train_cmd, train_flags);
    auto* diag_cmd = app.add_subcommand("diagnose", "attention metrics for a checkpoint");
    add_common(diag_cmd, diag_flags);
    auto* theory_cmd = app.add_subcommand("verify-theory", "Monte Carlo survivor-bound checks");
    add_common(theory_cmd, theory_flags);
    auto* passkey_cmd = app.add_subcommand("passkey", "passkey retrieval evaluation");
    add_common(passkey_cmd, passkey_flags);
    auto* bench_cmd = app.add_subcommand("bench", "dense vs streaming kernel timing and memory audit");
    add_common(bench_cmd, bench_flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(train_flags);
        if (diag_cmd->parsed()) return cmd_diagnose(diag_flags);
        if (theory_cmd->parsed()) return cmd_verify_theory(theory_flags);
        if (passkey_cmd->parsed()) return cmd_passkey(passkey_flags);
        if (bench_cmd->parsed()) return cmd_bench(bench_flags);
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
