#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowtok/config.hpp"
#include "flowtok/dataset.hpp"
#include "flowtok/datamodel.hpp"
#include "flowtok/graph.hpp"
#include "flowtok/metrics_io.hpp"
#include "flowtok/rng.hpp"
#include "flowtok/trainer.hpp"

namespace flowtok {

struct VelocityNetConfig {
    int grid = 8;   // latent side, image_size / f
    int d = 32;     // latent channels
    int width = 128;
    int depth = 3;
    int heads = 4;
    int num_classes = 10;  // class ids 0..K-1; id K is the null (uncond) id
    bool qk_norm = true;
};

VelocityNetConfig velocity_config_from(const RunConfig& cfg);

// Transformer over the latent grid (patch size 1): token embedding plus a
// per-sample conditioning vector built from a sinusoidal timestep embedding
// (through a small MLP) and a learned class embedding. Output matches the
// input latent shape.
class VelocityNet {
public:
    VelocityNet() = default;
    VelocityNet(VelocityNetConfig cfg, uint64_t seed, std::string prefix = "vel");

    // z_t: (B, grid, grid, d) node; t and cond_ids sized B. Ids must lie in
    // [0, num_classes] (num_classes = null id).
    NodeId forward(Graph& g, NodeId z_t, const std::vector<double>& t,
                   const std::vector<int>& cond_ids, bool trainable) const;
    // Pure eval.
    Tensor velocity(const Tensor& z_t, const std::vector<double>& t,
                    const std::vector<int>& cond_ids) const;

    std::vector<ParamTensor*> params();
    std::vector<const ParamTensor*> params() const;
    const VelocityNetConfig& config() const { return cfg_; }
    int null_id() const { return cfg_.num_classes; }

private:
    struct Block {
        ParamTensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        ParamTensor ln2_g, ln2_b, w1, b1, w2, b2;
    };

    VelocityNetConfig cfg_;
    ParamTensor in_w_, in_b_, pos_, class_emb_;
    ParamTensor t_w1_, t_b1_, t_w2_, t_b2_;
    std::vector<Block> blocks_;
    ParamTensor out_ln_g_, out_ln_b_, out_w_, out_b_;
};

// z_t = (1-t) z0 + t z1. DomainError outside [0,1].
Tensor interpolate_path(const Tensor& z0, const Tensor& z1, double t);
// u = z1 - z0.
Tensor velocity_target(const Tensor& z0, const Tensor& z1);

// Channel slice guided by CFG: k = -1 guides every channel.
struct CfgChannels {
    int k = -1;
    static CfgChannels all() { return {-1}; }
    static CfgChannels first_k(int k) { return {k}; }
};

// guided = v_uncond + scale*(v_cond - v_uncond) on the selected channels;
// unselected channels carry v_cond unmodified. scale == 1 returns v_cond
// bit-identically on every channel.
Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double scale, CfgChannels ch);

struct SamplerConfig {
    int steps = 30;
    double cfg_scale = 1.0;
    CfgChannels cfg_channels = CfgChannels::first_k(3);
    uint64_t seed = 1;
};

// The rng draw order shared by every flow-matching entry point: one uniform t
// per sample, then the full z1 tensor via fill_normal, then one uniform per
// sample compared against cond_dropout (u < p swaps in the null id).
struct FMDraw {
    std::vector<double> t;
    Tensor z1;
    std::vector<int> ids;
};
FMDraw draw_flow_match(const Tensor& z0, const std::vector<int>& cond_ids, Rng& rng,
                       double cond_dropout, int null_id);

struct FMBuild {
    NodeId loss = -1;
    FMDraw draw;
};
// MSE between the net's prediction at (z_t, t, ids) and the target z1 - z0,
// built on the caller's tape.
FMBuild build_flow_matching_loss(Graph& g, const VelocityNet& net, const Tensor& z0,
                                 const std::vector<int>& cond_ids, Rng& rng,
                                 double cond_dropout, bool trainable);
double flow_matching_loss(const VelocityNet& net, const Tensor& z0,
                          const std::vector<int>& cond_ids, Rng& rng, double cond_dropout);

// Batch velocity oracle: (z_t, t per sample, ids) -> velocity tensor.
using BatchVelocityFn =
    std::function<Tensor(const Tensor&, const std::vector<double>&, const std::vector<int>&)>;
double flow_matching_loss_with(const BatchVelocityFn& fn, const Tensor& z0,
                               const std::vector<int>& cond_ids, Rng& rng, double cond_dropout,
                               int null_id);

// Euler integration from t=1 down to t=0: z <- z - (1/steps) * v(z, t).
using VelocityFn = std::function<Tensor(const Tensor&, double)>;
Tensor euler_integrate(const VelocityFn& v, Tensor z_at_1, int steps);

// Noise-to-latent sampling in normalized space; deterministic given cfg.seed.
LatentBatch euler_sample(const VelocityNet& net, const SamplerConfig& cfg, int cond_id,
                         const std::vector<int>& latent_shape);

struct DiffusionBundle {
    VelocityNet net;
    VelocityNet ema;
    LatentStats latent_stats;  // copied from the tokenizer at train start
    int64_t trained_steps = 0;
};

DiffusionBundle make_diffusion_bundle(const RunConfig& cfg);

// Flow-matching training over the frozen tokenizer's standardized latents.
// Labels condition the model; cfg.cond_dropout trains the null branch.
void train_diffusion(DiffusionBundle& db, const TokenizerBundle& tok, const Dataset& ds,
                     int steps, MetricsWriter* metrics = nullptr);

// Sample with the EMA net, denormalize, decode to images.
ImageBatch sample_images(const DiffusionBundle& db, const TokenizerBundle& tok,
                         const SamplerConfig& scfg, int cond_id, int count);

}  // namespace flowtok
