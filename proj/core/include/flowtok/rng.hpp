#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "flowtok/tensor.hpp"

namespace flowtok {

// Deterministic RNG. All transforms (uniform, normal, shuffles) are
// hand-rolled on top of mt19937_64 raw output so sequences do not depend on
// libstdc++ distribution internals. Streams are derived counter-style from
// (seed, purpose, stage, step) (splitmix mixing), letting any training step
// reproduce its draws without serialized generator state.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    static uint64_t mix(uint64_t a, uint64_t b);
    static Rng derive(uint64_t seed, uint64_t s0, uint64_t s1 = 0, uint64_t s2 = 0);

    uint64_t next_u64() { return gen_(); }

    // [0,1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);
    // Box-Muller with cached spare.
    double normal();
    // [0, n), rejection-free modulo on 64 bits (bias < 2^-50 for desk-scale n).
    int uniform_int(int n);

    void fill_normal(Tensor& t, double mean, double stddev);
    void fill_uniform(Tensor& t, double lo, double hi);

    // Fisher-Yates.
    std::vector<int> permutation(int n);

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over bytes; used for parameter-init streams and config hashing.
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull);
uint64_t fnv1a_str(const std::string& s, uint64_t h = 1469598103934665603ull);

}  // namespace flowtok
