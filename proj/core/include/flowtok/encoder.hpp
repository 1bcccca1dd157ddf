#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowtok/dataset.hpp"
#include "flowtok/datamodel.hpp"
#include "flowtok/graph.hpp"
#include "flowtok/nn.hpp"

namespace flowtok {

struct EncoderConfig {
    int image_size = 64;
    int f = 8;  // patch size equals the downsampling factor
    int dim = 128;
    int depth = 2;
    int heads = 4;
};

// Patch-embedding transformer producing a (B, H/f, W/f, dim) feature grid.
// The closing LayerNorm is the "encoder last layer" anchor used by the
// semantic-preservation gradient rescaling.
class ToyEncoder {
public:
    ToyEncoder() = default;
    ToyEncoder(EncoderConfig cfg, uint64_t seed, std::string prefix = "enc");

    // images: (B, image_size, image_size, 3) node. Binds parameters as
    // trainable or constant leaves.
    NodeId forward(Graph& g, NodeId images, bool trainable) const;
    // Pure eval; graph-free interface.
    Tensor encode(const Tensor& images) const;

    std::vector<ParamTensor*> params();
    std::vector<const ParamTensor*> params() const;
    std::vector<const ParamTensor*> last_layer_params() const;

    const EncoderConfig& config() const { return cfg_; }
    int tokens() const { return (cfg_.image_size / cfg_.f) * (cfg_.image_size / cfg_.f); }

private:
    struct Block {
        ParamTensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        ParamTensor ln2_g, ln2_b, w1, b1, w2, b2;
    };

    EncoderConfig cfg_;
    ParamTensor patch_w_, patch_b_, pos_;
    std::vector<Block> blocks_;
    ParamTensor out_ln_g_, out_ln_b_;

    friend struct EncoderAccess;
};

// Position-wise two-layer MLP, D_enc -> hidden -> d. Emits the raw affine
// output (no closing normalization).
class Adapter {
public:
    Adapter() = default;
    Adapter(int d_in, int hidden, int d_out, uint64_t seed, std::string prefix = "adapter");

    NodeId forward(Graph& g, NodeId feats, bool trainable) const;
    Tensor apply(const Tensor& feats) const;

    std::vector<ParamTensor*> params();
    std::vector<const ParamTensor*> params() const;
    int d_in() const { return d_in_; }
    int d_out() const { return d_out_; }

private:
    int d_in_ = 0, hidden_ = 0, d_out_ = 0;
    ParamTensor w1_, b1_, w2_, b2_;
};

// z0 = A(E_p(x)) as an unnormalized LatentBatch.
LatentBatch tokenize(const ToyEncoder& enc, const Adapter& adp, const ImageBatch& x);

// Immutable deep copy of the tokenizer at the end of a stage; the semantic
// preservation target z0* producer.
struct FrozenTokenizerRef {
    ToyEncoder encoder;
    Adapter adapter;
    std::string stage_tag;

    LatentBatch tokenize(const ImageBatch& x) const;
};

FrozenTokenizerRef snapshot_frozen(const ToyEncoder& enc, const Adapter& adp,
                                   std::string stage_tag);

// Supervised toy pretraining: mean-pooled features -> linear head -> cross
// entropy. Deterministic given seed. Throws DatasetTooSmall when any class
// has fewer than 10 examples.
ToyEncoder pretrain_toy_encoder(const Dataset& ds, const EncoderConfig& cfg, int epochs,
                                int batch_size, double lr, uint64_t seed);

}  // namespace flowtok
