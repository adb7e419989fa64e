#pragma once

#include <cstdint>
#include <random>

namespace tda {

// splitmix64 step; used to derive independent per-trial seeds so parallel and
// serial runs see identical streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                              std::uint64_t d = 0) {
    std::uint64_t s = a;
    std::uint64_t acc = splitmix64(s);
    s ^= b + 0x9e3779b97f4a7c15ULL;
    acc ^= splitmix64(s);
    s ^= c + 0xc2b2ae3d27d4eb4fULL;
    acc ^= splitmix64(s);
    s ^= d + 0x165667b19e3779f9ULL;
    acc ^= splitmix64(s);
    return acc;
}

inline std::mt19937_64 make_engine(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                                   std::uint64_t d = 0) {
    return std::mt19937_64(mix_seed(a, b, c, d));
}

// Stream tags so unrelated consumers of one master seed never collide.
enum RngScope : std::uint64_t {
    ScopeTrain = 0x747261696eULL,
    ScopeEval = 0x6576616cULL,
    ScopeSparsity = 0x7370617273ULL,
    ScopePasskey = 0x7061737321ULL,
};

}  // namespace tda
