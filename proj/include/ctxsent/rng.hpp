#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace ctxsent {

// All randomness in the project flows through this wrapper around
// std::mt19937_64, whose output sequence is fixed by the C++ standard.
// Distribution shaping (index draws, normals) is implemented here by hand
// because std::uniform_int_distribution and friends are not portable
// across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, n). Modulo reduction; the bias at 64 bits is
    // far below anything observable at dataset scale.
    size_t uniform_index(size_t n) { return static_cast<size_t>(gen_() % n); }

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (one value per call, second discarded
    // to keep the stream position independent of call parity).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Normal(0, sigma) truncated to [-2 sigma, 2 sigma] by rejection.
    double truncated_normal(double sigma) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * sigma;
        }
    }

    // Fisher-Yates over indices 0..n-1.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Derives a per-(seed, stream) seed so independent RNG streams do not
// overlap trivially. SplitMix64 finalizer.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace ctxsent
