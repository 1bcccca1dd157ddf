#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowtok/datamodel.hpp"
#include "flowtok/graph.hpp"

namespace flowtok {

struct DecoderConfig {
    int f = 8;        // total upsampling factor, power of two
    int d = 32;       // latent channels
    int base = 128;   // width after conv_in; halves per upsampling stage
};

// Convolutional upsampler, (B, H/f, W/f, d) -> (B, H, W, 3) in [0,1].
// conv_in, then log2(f) stages of [nearest 2x, 3x3 conv halving the width,
// SiLU], then conv_out + sigmoid. conv_out is the "decoder last layer" anchor
// used by the adversarial gradient rescaling.
class Decoder {
public:
    Decoder() = default;
    Decoder(DecoderConfig cfg, uint64_t seed, std::string prefix = "dec");

    // z: (B, h, w, d) node in denormalized latent space.
    NodeId forward(Graph& g, NodeId z, bool trainable) const;
    // Pure eval. Rejects standardized latents.
    ImageBatch decode(const LatentBatch& z) const;

    std::vector<ParamTensor*> params();
    std::vector<const ParamTensor*> params() const;
    std::vector<const ParamTensor*> last_layer_params() const;

    const DecoderConfig& config() const { return cfg_; }

private:
    struct Stage {
        ParamTensor w, b;
    };

    DecoderConfig cfg_;
    ParamTensor in_w_, in_b_;
    std::vector<Stage> stages_;
    ParamTensor out_w_, out_b_;
};

// Patch discriminator: three stride-2 3x3 convs with leaky ReLU (0.2), then a
// stride-1 conv to a one-channel logit map (B, H/8, W/8, 1).
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(int base, uint64_t seed, std::string prefix = "disc");

    NodeId forward(Graph& g, NodeId images, bool trainable) const;
    Tensor discriminate(const Tensor& images) const;

    std::vector<ParamTensor*> params();
    std::vector<const ParamTensor*> params() const;

private:
    int base_ = 0;
    std::vector<ParamTensor> ws_, bs_;
};

}  // namespace flowtok
