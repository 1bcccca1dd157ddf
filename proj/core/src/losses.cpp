#include "flowtok/losses.hpp"

#include <algorithm>

#include "flowtok/errors.hpp"

namespace flowtok {

double grad_norm_rescale(double primary_grad_norm, double secondary_grad_norm) {
    if (primary_grad_norm < 0 || secondary_grad_norm < 0)
        throw DomainError("grad_norm_rescale: norms must be >= 0");
    double s = primary_grad_norm / std::max(secondary_grad_norm, 1e-8);
    return std::clamp(s, 0.0, 1e4);
}

double l1_loss(const Tensor& x, const Tensor& xhat) {
    Graph g;
    return g.scalar(g.mean_abs_diff(g.constant(x), g.constant(xhat)));
}

double perceptual_loss(const ToyEncoder& feat_net, const Tensor& x, const Tensor& xhat) {
    Graph g;
    return g.scalar(perceptual_node(g, feat_net, g.constant(x), g.constant(xhat)));
}

double gan_generator_loss(const Discriminator& disc, const Tensor& xhat) {
    Graph g;
    return g.scalar(hinge_generator_loss(g, disc.forward(g, g.constant(xhat), false)));
}

double gan_discriminator_loss(const Discriminator& disc, const Tensor& x, const Tensor& xhat) {
    Graph g;
    NodeId real = disc.forward(g, g.constant(x), false);
    NodeId fake = disc.forward(g, g.constant(xhat), false);
    return g.scalar(hinge_discriminator_loss(g, real, fake));
}

double semantic_preservation_loss(const LatentBatch& z_live, const LatentBatch& z_frozen) {
    Graph g;
    return g.scalar(g.mean_sq_diff(g.constant(z_live.codes), g.constant(z_frozen.codes)));
}

double pre_adapter_sp_loss(const Tensor& feats_live, const Tensor& feats_frozen) {
    Graph g;
    return g.scalar(g.mean_sq_diff(g.constant(feats_live), g.constant(feats_frozen)));
}

LossReport reconstruction_loss(const Tensor& x, const Tensor& xhat, const ToyEncoder& feat_net,
                               const Discriminator& disc, double w_p, double w_g,
                               bool gan_enabled, double gan_rescale) {
    if (w_p < 0 || w_g < 0) throw ConfigError("reconstruction_loss: weights must be >= 0");
    LossReport r;
    r.components["l1"] = l1_loss(x, xhat);
    r.components["perceptual"] = perceptual_loss(feat_net, x, xhat);
    r.total = r.components["l1"] + w_p * r.components["perceptual"];
    if (gan_enabled) {
        r.components["gan_g"] = gan_generator_loss(disc, xhat);
        r.rescale_factors["gan"] = gan_rescale;
        r.total += w_g * gan_rescale * r.components["gan_g"];
    }
    return r;
}

LossReport perceptual_alignment_loss(const LossReport& rec, double sp_value, double w_sp,
                                     double sp_rescale) {
    if (w_sp < 0) throw ConfigError("perceptual_alignment_loss: w_sp must be >= 0");
    LossReport r = rec;
    r.components["sp"] = sp_value;
    r.rescale_factors["sp"] = sp_rescale;
    r.total = rec.total + w_sp * sp_rescale * sp_value;
    return r;
}

NodeId hinge_generator_loss(Graph& g, NodeId fake_logits) {
    return g.scale(g.mean_all(fake_logits), -1.0);
}

NodeId hinge_discriminator_loss(Graph& g, NodeId real_logits, NodeId fake_logits) {
    NodeId real_term = g.mean_all(g.relu(g.affine(real_logits, -1.0, 1.0)));
    NodeId fake_term = g.mean_all(g.relu(g.affine(fake_logits, 1.0, 1.0)));
    return g.add(real_term, fake_term);
}

NodeId perceptual_node(Graph& g, const ToyEncoder& feat_net, NodeId x, NodeId xhat) {
    NodeId fa = feat_net.forward(g, x, false);
    NodeId fb = feat_net.forward(g, xhat, false);
    return g.mean_sq_diff(fa, fb);
}

RecLossBuild build_reconstruction_loss(Graph& g, NodeId x, NodeId xhat,
                                       const ToyEncoder& feat_net, const Discriminator& disc,
                                       double w_p, double w_g, bool gan_enabled,
                                       const std::vector<const ParamTensor*>& dec_anchor) {
    if (w_p < 0 || w_g < 0) throw ConfigError("build_reconstruction_loss: weights must be >= 0");
    RecLossBuild b;
    b.l1 = g.mean_abs_diff(x, xhat);
    b.perceptual = perceptual_node(g, feat_net, x, xhat);
    b.base = g.add(b.l1, g.scale(b.perceptual, w_p));
    b.total = b.base;
    b.report.components["l1"] = g.scalar(b.l1);
    b.report.components["perceptual"] = g.scalar(b.perceptual);
    if (gan_enabled) {
        b.gan_g = hinge_generator_loss(g, disc.forward(g, xhat, false));
        g.backward(b.base);
        double primary = g.bound_grad_norm(dec_anchor);
        g.backward(b.gan_g);
        double secondary = g.bound_grad_norm(dec_anchor);
        b.gan_rescale = grad_norm_rescale(primary, secondary);
        b.total = g.add(b.base, g.scale(b.gan_g, w_g * b.gan_rescale));
        b.report.components["gan_g"] = g.scalar(b.gan_g);
        b.report.rescale_factors["gan"] = b.gan_rescale;
    }
    b.report.total = g.scalar(b.total);
    return b;
}

}  // namespace flowtok
