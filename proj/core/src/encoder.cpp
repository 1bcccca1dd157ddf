#include "flowtok/encoder.hpp"

#include <cmath>
#include <map>

#include "flowtok/errors.hpp"

namespace flowtok {

namespace {
ParamTensor make_linear_w(const std::string& name, int in, int out, uint64_t seed) {
    return ParamTensor(name, fanin_init({in, out}, in, 1.0, seed, name));
}
ParamTensor make_zeros(const std::string& name, std::vector<int> shape) {
    return ParamTensor(name, Tensor::zeros(std::move(shape)));
}
ParamTensor make_ones(const std::string& name, std::vector<int> shape) {
    return ParamTensor(name, Tensor::full(std::move(shape), 1.0f));
}
}  // namespace

ToyEncoder::ToyEncoder(EncoderConfig cfg, uint64_t seed, std::string prefix) : cfg_(cfg) {
    if (cfg.image_size % cfg.f != 0) throw ConfigError("encoder: image_size not divisible by f");
    if (cfg.dim % cfg.heads != 0) throw ConfigError("encoder: dim not divisible by heads");
    const int pdim = cfg.f * cfg.f * 3;
    const int T = tokens();
    auto n = [&](const std::string& s) { return prefix + "." + s; };
    patch_w_ = make_linear_w(n("patch_w"), pdim, cfg.dim, seed);
    patch_b_ = make_zeros(n("patch_b"), {cfg.dim});
    pos_ = ParamTensor(n("pos"), normal_init({T, cfg.dim}, 0.02, seed, n("pos")));
    for (int l = 0; l < cfg.depth; ++l) {
        auto bn = [&](const std::string& s) { return n("block" + std::to_string(l) + "." + s); };
        Block b{
            make_ones(bn("ln1_g"), {cfg.dim}), make_zeros(bn("ln1_b"), {cfg.dim}),
            make_linear_w(bn("wq"), cfg.dim, cfg.dim, seed), make_zeros(bn("bq"), {cfg.dim}),
            make_linear_w(bn("wk"), cfg.dim, cfg.dim, seed), make_zeros(bn("bk"), {cfg.dim}),
            make_linear_w(bn("wv"), cfg.dim, cfg.dim, seed), make_zeros(bn("bv"), {cfg.dim}),
            make_linear_w(bn("wo"), cfg.dim, cfg.dim, seed), make_zeros(bn("bo"), {cfg.dim}),
            make_ones(bn("ln2_g"), {cfg.dim}), make_zeros(bn("ln2_b"), {cfg.dim}),
            make_linear_w(bn("w1"), cfg.dim, 4 * cfg.dim, seed), make_zeros(bn("b1"), {4 * cfg.dim}),
            make_linear_w(bn("w2"), 4 * cfg.dim, cfg.dim, seed), make_zeros(bn("b2"), {cfg.dim}),
        };
        blocks_.push_back(std::move(b));
    }
    out_ln_g_ = make_ones(n("out_ln_g"), {cfg.dim});
    out_ln_b_ = make_zeros(n("out_ln_b"), {cfg.dim});
}

namespace {
// (B,T,W) multi-head self-attention; the pre-norm is applied by the caller.
NodeId attention(Graph& g, NodeId x, int B, int T, int W, int heads, NodeId wq, NodeId bq,
                 NodeId wk, NodeId bk, NodeId wv, NodeId bv, NodeId wo, NodeId bo) {
    const int dh = W / heads;
    auto proj = [&](NodeId w, NodeId b) {
        NodeId flat = g.reshape(x, {B * T, W});
        NodeId y = g.add_bcast(g.matmul(flat, w), b);
        // (B,T,heads,dh) -> (B,heads,T,dh) -> (B*heads, T, dh)
        y = g.reshape(y, {B, T, heads, dh});
        y = g.permute(y, {0, 2, 1, 3});
        return g.reshape(y, {B * heads, T, dh});
    };
    NodeId q = proj(wq, bq), k = proj(wk, bk), v = proj(wv, bv);
    NodeId scores = g.scale(g.bmm(q, g.permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
    NodeId attn = g.softmax(scores);
    NodeId ctx = g.bmm(attn, v);  // (B*heads, T, dh)
    ctx = g.reshape(ctx, {B, heads, T, dh});
    ctx = g.permute(ctx, {0, 2, 1, 3});
    ctx = g.reshape(ctx, {B * T, W});
    NodeId out = g.add_bcast(g.matmul(ctx, wo), bo);
    return g.reshape(out, {B, T, W});
}
}  // namespace

NodeId ToyEncoder::forward(Graph& g, NodeId images, bool trainable) const {
    const Tensor& vx = g.val(images);
    if (vx.shape.size() != 4 || vx.shape[1] != cfg_.image_size || vx.shape[2] != cfg_.image_size ||
        vx.shape[3] != 3)
        throw ShapeError("encoder: expected (B," + std::to_string(cfg_.image_size) + "," +
                         std::to_string(cfg_.image_size) + ",3), got " + vx.shape_str());
    const int B = vx.shape[0];
    const int G = cfg_.image_size / cfg_.f;
    const int T = G * G;
    const int W = cfg_.dim;
    auto* self = const_cast<ToyEncoder*>(this);
    auto P = [&](ParamTensor& p) { return g.param(p, trainable); };

    NodeId h = g.patchify(images, cfg_.f);                       // (B,G,G,f*f*3)
    h = g.reshape(h, {B * T, cfg_.f * cfg_.f * 3});
    h = g.add_bcast(g.matmul(h, P(self->patch_w_)), P(self->patch_b_));
    h = g.reshape(h, {B, T, W});
    h = g.add_bcast(h, P(self->pos_));

    for (auto& blk : self->blocks_) {
        NodeId a = g.layer_norm(h, P(blk.ln1_g), P(blk.ln1_b));
        a = attention(g, a, B, T, W, cfg_.heads, P(blk.wq), P(blk.bq), P(blk.wk), P(blk.bk),
                      P(blk.wv), P(blk.bv), P(blk.wo), P(blk.bo));
        h = g.add(h, a);
        NodeId m = g.layer_norm(h, P(blk.ln2_g), P(blk.ln2_b));
        m = g.reshape(m, {B * T, W});
        m = g.add_bcast(g.matmul(m, P(blk.w1)), P(blk.b1));
        m = g.silu(m);
        m = g.add_bcast(g.matmul(m, P(blk.w2)), P(blk.b2));
        m = g.reshape(m, {B, T, W});
        h = g.add(h, m);
    }
    h = g.layer_norm(h, P(self->out_ln_g_), P(self->out_ln_b_));
    return g.reshape(h, {B, G, G, W});
}

Tensor ToyEncoder::encode(const Tensor& images) const {
    Graph g;
    return g.val(forward(g, g.constant(images), false));
}

std::vector<ParamTensor*> ToyEncoder::params() {
    std::vector<ParamTensor*> ps{&patch_w_, &patch_b_, &pos_};
    for (Block& b : blocks_)
        for (ParamTensor* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv,
                               &b.wo, &b.bo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2})
            ps.push_back(p);
    ps.push_back(&out_ln_g_);
    ps.push_back(&out_ln_b_);
    return ps;
}

std::vector<const ParamTensor*> ToyEncoder::params() const {
    auto ps = const_cast<ToyEncoder*>(this)->params();
    return {ps.begin(), ps.end()};
}

std::vector<const ParamTensor*> ToyEncoder::last_layer_params() const {
    return {&out_ln_g_, &out_ln_b_};
}

Adapter::Adapter(int d_in, int hidden, int d_out, uint64_t seed, std::string prefix)
    : d_in_(d_in), hidden_(hidden), d_out_(d_out) {
    if (d_in < 1 || hidden < 1 || d_out < 1) throw ConfigError("adapter: dims must be positive");
    auto n = [&](const char* s) { return prefix + "." + s; };
    w1_ = make_linear_w(n("w1"), d_in, hidden, seed);
    b1_ = make_zeros(n("b1"), {hidden});
    w2_ = make_linear_w(n("w2"), hidden, d_out, seed);
    b2_ = make_zeros(n("b2"), {d_out});
}

NodeId Adapter::forward(Graph& g, NodeId feats, bool trainable) const {
    const Tensor& vf = g.val(feats);
    if (vf.shape.size() != 4 || vf.shape[3] != d_in_)
        throw ShapeError("adapter: expected (B,h,w," + std::to_string(d_in_) + "), got " +
                         vf.shape_str());
    const int B = vf.shape[0], H = vf.shape[1], W = vf.shape[2];
    auto* self = const_cast<Adapter*>(this);
    NodeId h = g.reshape(feats, {B * H * W, d_in_});
    h = g.add_bcast(g.matmul(h, g.param(self->w1_, trainable)), g.param(self->b1_, trainable));
    h = g.silu(h);
    h = g.add_bcast(g.matmul(h, g.param(self->w2_, trainable)), g.param(self->b2_, trainable));
    return g.reshape(h, {B, H, W, d_out_});
}

Tensor Adapter::apply(const Tensor& feats) const {
    Graph g;
    return g.val(forward(g, g.constant(feats), false));
}

std::vector<ParamTensor*> Adapter::params() { return {&w1_, &b1_, &w2_, &b2_}; }

std::vector<const ParamTensor*> Adapter::params() const {
    return {&w1_, &b1_, &w2_, &b2_};
}

LatentBatch tokenize(const ToyEncoder& enc, const Adapter& adp, const ImageBatch& x) {
    x.validate(enc.config().f);
    LatentBatch z;
    z.codes = adp.apply(enc.encode(x.pixels));
    z.normalized = false;
    return z;
}

LatentBatch FrozenTokenizerRef::tokenize(const ImageBatch& x) const {
    return flowtok::tokenize(encoder, adapter, x);
}

FrozenTokenizerRef snapshot_frozen(const ToyEncoder& enc, const Adapter& adp,
                                   std::string stage_tag) {
    return FrozenTokenizerRef{enc, adp, std::move(stage_tag)};
}

ToyEncoder pretrain_toy_encoder(const Dataset& ds, const EncoderConfig& cfg, int epochs,
                                int batch_size, double lr, uint64_t seed) {
    if (ds.num_classes < 2) throw DatasetTooSmall("pretrain: need at least 2 classes");
    std::map<int, int> per_class;
    for (int l : ds.labels) per_class[l]++;
    for (int k = 0; k < ds.num_classes; ++k)
        if (per_class[k] < 10)
            throw DatasetTooSmall("pretrain: class " + std::to_string(k) +
                                  " has fewer than 10 examples");
    if (epochs < 0) throw ConfigError("pretrain: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");

    ToyEncoder enc(cfg, seed);
    ParamTensor head_w("pretrain_head.w",
                       fanin_init({cfg.dim, ds.num_classes}, cfg.dim, 1.0, seed, "pretrain_head.w"));
    ParamTensor head_b("pretrain_head.b", Tensor::zeros({ds.num_classes}));

    std::vector<ParamTensor*> all = enc.params();
    all.push_back(&head_w);
    all.push_back(&head_b);
    Adam opt(lr);

    const int n = ds.size();
    const uint64_t purpose = fnv1a_str("enc_pretrain");
    for (int e = 0; e < epochs; ++e) {
        std::vector<int> order = epoch_order(n, seed, purpose, static_cast<uint64_t>(e));
        for (int start = 0; start + batch_size <= n; start += batch_size) {
            std::vector<int> idx(order.begin() + start, order.begin() + start + batch_size);
            ImageBatch batch = ds.batch(idx);
            Graph g;
            NodeId feats = enc.forward(g, g.constant(batch.pixels), true);
            NodeId pooled = g.mean_pool_hw(feats);
            NodeId logits = g.add_bcast(g.matmul(pooled, g.param(head_w)), g.param(head_b));
            NodeId loss = g.cross_entropy(logits, batch.labels);
            g.backward(loss);
            zero_grads(all);
            g.accumulate_param_grads();
            opt.step(all);
        }
    }
    return enc;
}

}  // namespace flowtok
