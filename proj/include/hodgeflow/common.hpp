#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace hodgeflow {

// Violated precondition or malformed input (shape mismatch, invalid
// distribution, bad config). The CLI maps this to exit code 2.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A linear solve or iterative method failed to reach its tolerance.
// Carries the achieved residual (or condition estimate) in `detail`.
// The CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg, double detail_value = 0.0)
        : std::runtime_error(msg), detail(detail_value) {}
    double detail;
};

// Non-finite parameters appeared during training. Carries the update index
// at which divergence was detected. The CLI maps this to exit code 4.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg, long long step_index = -1)
        : std::runtime_error(msg), step(step_index) {}
    long long step;
};

// SplitMix64: cheap seed-derivation mix so per-seed / per-eval RNG streams
// never collide even for adjacent base seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Shortest-round-trip decimal formatting; used everywhere a double reaches
// a byte-compared output file.
inline std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    // trim to the shortest representation that still round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char probe[64];
        std::snprintf(probe, sizeof(probe), "%.*g", prec, x);
        double back = 0.0;
        std::sscanf(probe, "%lf", &back);
        if (back == x) return std::string(probe);
    }
    return std::string(buf);
}

// FNV-1a, used for config hashes in checkpoints (stable across runs).
inline std::uint64_t fnv1a_hash(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace hodgeflow
