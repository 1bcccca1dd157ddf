#include "flowtok/decoder.hpp"

#include <cmath>

#include "flowtok/errors.hpp"
#include "flowtok/nn.hpp"

namespace flowtok {

namespace {

int log2_exact(int f, const char* what) {
    if (f < 1) throw ConfigError(std::string(what) + ": f must be >= 1");
    int n = 0, v = f;
    while (v > 1) {
        if (v % 2 != 0) throw ConfigError(std::string(what) + ": f must be a power of two");
        v /= 2;
        ++n;
    }
    return n;
}

ParamTensor make_conv_w(const std::string& name, int kh, int kw, int ci, int co, uint64_t seed) {
    return ParamTensor(name, fanin_init({kh, kw, ci, co}, kh * kw * ci, 1.0, seed, name));
}

}  // namespace

Decoder::Decoder(DecoderConfig cfg, uint64_t seed, std::string prefix) : cfg_(cfg) {
    if (cfg.d < 1 || cfg.base < 2) throw ConfigError("decoder: d and base must be positive");
    const int n_stages = log2_exact(cfg.f, "decoder");
    auto n = [&](const std::string& s) { return prefix + "." + s; };
    in_w_ = make_conv_w(n("in_w"), 3, 3, cfg.d, cfg.base, seed);
    in_b_ = ParamTensor(n("in_b"), Tensor::zeros({cfg.base}));
    int width = cfg.base;
    for (int s = 0; s < n_stages; ++s) {
        int next = std::max(width / 2, 4);
        auto sn = [&](const std::string& t) { return n("up" + std::to_string(s) + "." + t); };
        Stage st{make_conv_w(sn("w"), 3, 3, width, next, seed),
                 ParamTensor(sn("b"), Tensor::zeros({next}))};
        stages_.push_back(std::move(st));
        width = next;
    }
    out_w_ = make_conv_w(n("out_w"), 3, 3, width, 3, seed);
    out_b_ = ParamTensor(n("out_b"), Tensor::zeros({3}));
}

NodeId Decoder::forward(Graph& g, NodeId z, bool trainable) const {
    const Tensor& vz = g.val(z);
    if (vz.shape.size() != 4 || vz.shape[3] != cfg_.d)
        throw ShapeError("decoder: expected (B,h,w," + std::to_string(cfg_.d) + "), got " +
                         vz.shape_str());
    auto& self = const_cast<Decoder&>(*this);
    auto p = [&](ParamTensor& t) { return g.param(t, trainable); };
    NodeId h = g.conv2d(z, p(self.in_w_), p(self.in_b_), 1, 1);
    h = g.silu(h);
    for (auto& st : self.stages_) {
        h = g.upsample2x(h);
        h = g.conv2d(h, p(st.w), p(st.b), 1, 1);
        h = g.silu(h);
    }
    h = g.conv2d(h, p(self.out_w_), p(self.out_b_), 1, 1);
    return g.sigmoid(h);
}

ImageBatch Decoder::decode(const LatentBatch& z) const {
    if (z.normalized)
        throw NormalizedLatentError("decode: latents must be denormalized first");
    Graph g;
    NodeId out = forward(g, g.constant(z.codes), false);
    ImageBatch batch;
    batch.pixels = g.val(out);
    batch.labels.assign(static_cast<size_t>(batch.pixels.shape[0]), -1);
    return batch;
}

std::vector<ParamTensor*> Decoder::params() {
    std::vector<ParamTensor*> ps{&in_w_, &in_b_};
    for (auto& st : stages_) {
        ps.push_back(&st.w);
        ps.push_back(&st.b);
    }
    ps.push_back(&out_w_);
    ps.push_back(&out_b_);
    return ps;
}

std::vector<const ParamTensor*> Decoder::params() const {
    auto ps = const_cast<Decoder*>(this)->params();
    return {ps.begin(), ps.end()};
}

std::vector<const ParamTensor*> Decoder::last_layer_params() const {
    return {&out_w_, &out_b_};
}

Discriminator::Discriminator(int base, uint64_t seed, std::string prefix) : base_(base) {
    if (base < 1) throw ConfigError("discriminator: base must be positive");
    int widths[4] = {base, 2 * base, 4 * base, 1};
    int ci = 3;
    for (int l = 0; l < 4; ++l) {
        std::string wn = prefix + ".w" + std::to_string(l);
        std::string bn = prefix + ".b" + std::to_string(l);
        ws_.push_back(make_conv_w(wn, 3, 3, ci, widths[l], seed));
        bs_.push_back(ParamTensor(bn, Tensor::zeros({widths[l]})));
        ci = widths[l];
    }
}

NodeId Discriminator::forward(Graph& g, NodeId images, bool trainable) const {
    const Tensor& vx = g.val(images);
    if (vx.shape.size() != 4 || vx.shape[3] != 3)
        throw ShapeError("discriminator: expected (B,H,W,3), got " + vx.shape_str());
    auto& self = const_cast<Discriminator&>(*this);
    NodeId h = images;
    for (int l = 0; l < 3; ++l) {
        h = g.conv2d(h, g.param(self.ws_[static_cast<size_t>(l)], trainable),
                     g.param(self.bs_[static_cast<size_t>(l)], trainable), 2, 1);
        h = g.leaky_relu(h, 0.2);
    }
    return g.conv2d(h, g.param(self.ws_[3], trainable), g.param(self.bs_[3], trainable), 1, 1);
}

Tensor Discriminator::discriminate(const Tensor& images) const {
    Graph g;
    NodeId out = forward(g, g.constant(images), false);
    return g.val(out);
}

std::vector<ParamTensor*> Discriminator::params() {
    std::vector<ParamTensor*> ps;
    for (size_t i = 0; i < ws_.size(); ++i) {
        ps.push_back(&ws_[i]);
        ps.push_back(&bs_[i]);
    }
    return ps;
}

std::vector<const ParamTensor*> Discriminator::params() const {
    auto ps = const_cast<Discriminator*>(this)->params();
    return {ps.begin(), ps.end()};
}

}  // namespace flowtok
