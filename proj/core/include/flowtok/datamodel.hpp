#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowtok/tensor.hpp"

namespace flowtok {

// Images are channel-last (B,H,W,3) in [0,1]; labels optional (empty vector).
struct ImageBatch {
    Tensor pixels;
    std::vector<int> labels;

    int batch() const { return pixels.shape.empty() ? 0 : pixels.shape[0]; }
    // Throws ShapeError/DomainError when the pixel invariants are violated
    // (finite, in [0,1], H and W divisible by f).
    void validate(int f) const;
};

// Latent grid (B,H/f,W/f,d). `normalized` tracks whether per-channel
// standardization has been applied; diffusion operates on normalized codes.
struct LatentBatch {
    Tensor codes;
    bool normalized = false;
};

struct LatentStats {
    std::vector<float> per_channel_mean;
    std::vector<float> per_channel_std;  // floored at 1e-6
};

struct MetricRecord {
    int64_t step = 0;
    std::string name;
    double value = 0.0;
    std::map<std::string, std::string> tags;
};

// Per-channel mean/std over every element of every batch (population std,
// floor 1e-6). Throws EmptyInput when the sequence or all batches are empty.
LatentStats compute_latent_stats(const std::vector<LatentBatch>& latents);

// (z - mean) / std per channel. Throws DoubleNormalize if already normalized.
LatentBatch normalize_latents(const LatentBatch& z, const LatentStats& stats);
// Inverse. Throws NormalizedLatentError if z is not flagged normalized.
LatentBatch denormalize_latents(const LatentBatch& z, const LatentStats& stats);

}  // namespace flowtok
