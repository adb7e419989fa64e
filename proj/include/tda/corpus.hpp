#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tda {

// Byte-level corpus with a held-out validation prefix.
struct ByteCorpus {
    std::vector<std::uint8_t> bytes;
    std::size_t val_end = 0;  // bytes [0, val_end) are validation

    static ByteCorpus from_string(const std::string& text, double val_fraction);
    static ByteCorpus from_file(const std::string& path, double val_fraction);

    std::span<const std::uint8_t> train() const { return {bytes.data() + val_end, bytes.size() - val_end}; }
    std::span<const std::uint8_t> val() const { return {bytes.data(), val_end}; }
};

// Deterministic English-like filler text, seeded. Used for the bundled
// desk-scale training corpus; same (size, seed) always yields the same bytes.
std::string make_synthetic_corpus(std::size_t size_bytes, std::uint64_t seed);

}  // namespace tda
