#pragma once

// Checkpoint file: one-line JSON header (config, step, rng state, named-array
// manifest with offsets/shapes), a newline, then a little-endian float32
// payload. Round trips are bit-identical.

#include <cstdint>
#include <string>

#include "tda/model.hpp"
#include "tda/train.hpp"

namespace tda {

struct Checkpoint {
    ModelConfig config;
    int step = 0;
    std::string note;
    std::string rng_state;  // serialized training engine, empty when not mid-run
    Model model;            // parameters restored
    AdamW opt;              // optimizer moments restored
};

void save_checkpoint(const std::string& path, const Model& model, const AdamW& opt, int step,
                     const std::string& note, const std::string& rng_state = "");

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tda
