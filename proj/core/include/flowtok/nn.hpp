#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowtok/graph.hpp"
#include "flowtok/rng.hpp"

namespace flowtok {

// Deterministic per-tensor init: the stream depends only on (seed, name), so
// construction order cannot change initial weights.
Tensor normal_init(const std::vector<int>& shape, double stddev, uint64_t seed,
                   const std::string& name);
// Normal with fan-in scaling, stddev = gain / sqrt(fan_in).
Tensor fanin_init(const std::vector<int>& shape, int fan_in, double gain, uint64_t seed,
                  const std::string& name);

size_t param_count(const std::vector<ParamTensor*>& ps);
void zero_grads(const std::vector<ParamTensor*>& ps);
// FNV-1a over the raw float32 bytes of the values; bit-identical values give
// equal checksums, used by the stage-freezing invariants.
uint64_t params_checksum(const std::vector<ParamTensor*>& ps);
// Bit-exact value copy; shapes must match pairwise.
void copy_param_values(const std::vector<ParamTensor*>& dst,
                       const std::vector<ParamTensor*>& src);
// shadow <- decay*shadow + (1-decay)*src, values only.
void ema_update(const std::vector<ParamTensor*>& shadow,
                const std::vector<ParamTensor*>& src, double decay);

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    // Applies the update using each param's .grad, then advances t. Throws
    // NonFiniteLoss if a gradient is non-finite.
    void step(const std::vector<ParamTensor*>& ps);
    void reset_moments(const std::vector<ParamTensor*>& ps);
    int64_t t() const { return t_; }
    double lr() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace flowtok
