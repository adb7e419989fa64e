#pragma once

// Run configuration: JSON file -> validated structs, with desk/paper presets
// and strict unknown-key rejection. Every run writes the resolved snapshot
// next to its outputs.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tda/model.hpp"
#include "tda/theory.hpp"
#include "tda/train.hpp"

namespace tda {

struct DiagnoseConfig {
    std::string checkpoint;
    std::string text = "The quick brown fox jumps over the lazy dog";
    std::int64_t random_tokens = 0;  // when > 0, diagnose a random byte sequence instead of text
    std::vector<std::int64_t> sink_positions = {1, 2, 4, 8};
    bool emit_weights = true;
};

struct PasskeyRunConfig {
    std::string checkpoint;
    std::vector<std::int64_t> lengths = {256, 384, 448};
    int trials = 100;
    int max_new_tokens = 12;
    bool dump_jsonl = false;
};

struct BenchConfig {
    std::vector<std::int64_t> sizes = {512, 1024, 2048, 4096};
    int reps = 5;
    int warmups = 2;
    int batch = 1;
    int heads = 1;
    int head_dim = 64;
};

struct RunConfig {
    std::uint64_t seed = 1337;
    int threads = 0;  // 0 = hardware default
    std::string output_dir = "runs/out";
    std::string corpus;  // train corpus path; empty = bundled synthetic corpus
    ModelConfig model;
    TrainConfig train;
    TrialConfig theory;
    NoiseModel noise;
    TileConfig tiles;
    DiagnoseConfig diagnose;
    PasskeyRunConfig passkey;
    BenchConfig bench;
};

Mechanism mechanism_from_string(const std::string& s);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// preset is "desk" or "paper"
RunConfig preset_config(const std::string& preset);

// Applies a JSON document over `cfg`, rejecting unknown keys with the
// offending dotted path in the exception message.
void apply_config_json(RunConfig& cfg, const nlohmann::json& doc);

RunConfig load_run_config(const std::string& path, const std::string& preset);

nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace tda
