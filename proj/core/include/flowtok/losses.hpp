#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowtok/datamodel.hpp"
#include "flowtok/decoder.hpp"
#include "flowtok/encoder.hpp"
#include "flowtok/graph.hpp"

namespace flowtok {

// One training objective snapshot. total always reconstructs from the
// components, the weights that produced it, and the rescale factors.
struct LossReport {
    double total = 0.0;
    std::map<std::string, double> components;       // l1, perceptual, gan_g, gan_d, sp
    std::map<std::string, double> rescale_factors;  // gan, sp

    double component(const std::string& k) const {
        auto it = components.find(k);
        return it == components.end() ? 0.0 : it->second;
    }
};

// scale = primary / max(secondary, 1e-8), clamped to [0, 1e4]. Multiplying the
// secondary loss by this makes its anchor-layer gradient norm match the
// primary's (up to the clamp).
double grad_norm_rescale(double primary_grad_norm, double secondary_grad_norm);

// ---- value-level losses (plain tensors, throwaway graphs) ----
double l1_loss(const Tensor& x, const Tensor& xhat);
double perceptual_loss(const ToyEncoder& feat_net, const Tensor& x, const Tensor& xhat);
double gan_generator_loss(const Discriminator& disc, const Tensor& xhat);
double gan_discriminator_loss(const Discriminator& disc, const Tensor& x, const Tensor& xhat);
double semantic_preservation_loss(const LatentBatch& z_live, const LatentBatch& z_frozen);
double pre_adapter_sp_loss(const Tensor& feats_live, const Tensor& feats_frozen);

// total = l1 + w_p*perceptual + (gan_enabled ? w_g*gan_rescale*gan_g : 0).
// gan_rescale comes from the live training tape; pass 1.0 when reporting
// without one. Never adds a KL term.
LossReport reconstruction_loss(const Tensor& x, const Tensor& xhat, const ToyEncoder& feat_net,
                               const Discriminator& disc, double w_p, double w_g,
                               bool gan_enabled, double gan_rescale = 1.0);

// total = rec.total + w_sp*sp_rescale*sp_value; records the factor.
LossReport perceptual_alignment_loss(const LossReport& rec, double sp_value, double w_sp,
                                     double sp_rescale);

// ---- graph-level builders (compose on the caller's tape) ----
NodeId hinge_generator_loss(Graph& g, NodeId fake_logits);
NodeId hinge_discriminator_loss(Graph& g, NodeId real_logits, NodeId fake_logits);
// MSE between frozen feature maps of the two image nodes.
NodeId perceptual_node(Graph& g, const ToyEncoder& feat_net, NodeId x, NodeId xhat);

struct RecLossBuild {
    NodeId total = -1;  // scalar
    NodeId base = -1;   // l1 + w_p*perceptual
    NodeId l1 = -1;
    NodeId perceptual = -1;
    NodeId gan_g = -1;  // unset when the gate is off
    double gan_rescale = 1.0;
    LossReport report;
};

// Builds L_rec on the live tape. When gan_enabled, runs two partial backward
// passes to measure the gradient norms of the base term and the raw GAN term
// at dec_anchor (the decoder's last layer), folds their ratio in as a
// detached constant, and records it.
RecLossBuild build_reconstruction_loss(Graph& g, NodeId x, NodeId xhat,
                                       const ToyEncoder& feat_net, const Discriminator& disc,
                                       double w_p, double w_g, bool gan_enabled,
                                       const std::vector<const ParamTensor*>& dec_anchor);

}  // namespace flowtok
