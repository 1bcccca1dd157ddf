#include "flowtok/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flowtok/errors.hpp"
#include "flowtok/nn.hpp"

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

// Shared by interpolate_path and the loss builders so their z_t values match
// bit for bit.
void lerp_span(float* dst, const float* a, const float* b, float tf, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dst[i] = (1.0f - tf) * a[i] + tf * b[i];
}

void check_ids(const std::vector<int>& ids, int null_id, const char* where) {
    for (int id : ids)
        if (id < 0 || id > null_id)
            throw DomainError(std::string(where) + ": class id " + std::to_string(id) +
                              " outside [0," + std::to_string(null_id) + "]");
}

}  // namespace

VelocityNetConfig velocity_config_from(const RunConfig& cfg) {
    VelocityNetConfig vc;
    vc.grid = cfg.tok.image_size / cfg.tok.f;
    vc.d = cfg.tok.d;
    vc.width = cfg.diff_width;
    vc.depth = cfg.diff_depth;
    vc.heads = cfg.diff_heads;
    vc.num_classes = cfg.num_classes;
    vc.qk_norm = cfg.qk_norm;
    return vc;
}

VelocityNet::VelocityNet(VelocityNetConfig cfg, uint64_t seed, std::string prefix) : cfg_(cfg) {
    if (cfg.grid < 1 || cfg.d < 1) throw ConfigError("velocity net: grid and d must be positive");
    if (cfg.width % cfg.heads != 0) throw ConfigError("velocity net: width not divisible by heads");
    if (cfg.width % 2 != 0) throw ConfigError("velocity net: width must be even");
    if (cfg.depth < 0) throw ConfigError("velocity net: depth must be >= 0");
    if (cfg.num_classes < 1) throw ConfigError("velocity net: need at least one class");
    const int T = cfg.grid * cfg.grid;
    const int W = cfg.width;
    auto n = [&](const std::string& s) { return prefix + "." + s; };
    in_w_ = make_linear_w(n("in_w"), cfg.d, W, seed);
    in_b_ = make_zeros(n("in_b"), {W});
    pos_ = ParamTensor(n("pos"), normal_init({T, W}, 0.02, seed, n("pos")));
    class_emb_ =
        ParamTensor(n("class_emb"), normal_init({cfg.num_classes + 1, W}, 0.02, seed, n("class_emb")));
    t_w1_ = make_linear_w(n("t_w1"), W, W, seed);
    t_b1_ = make_zeros(n("t_b1"), {W});
    t_w2_ = make_linear_w(n("t_w2"), W, W, seed);
    t_b2_ = make_zeros(n("t_b2"), {W});
    for (int l = 0; l < cfg.depth; ++l) {
        auto bn = [&](const std::string& s) { return n("block" + std::to_string(l) + "." + s); };
        Block b{
            make_ones(bn("ln1_g"), {W}), make_zeros(bn("ln1_b"), {W}),
            make_linear_w(bn("wq"), W, W, seed), make_zeros(bn("bq"), {W}),
            make_linear_w(bn("wk"), W, W, seed), make_zeros(bn("bk"), {W}),
            make_linear_w(bn("wv"), W, W, seed), make_zeros(bn("bv"), {W}),
            make_linear_w(bn("wo"), W, W, seed), make_zeros(bn("bo"), {W}),
            make_ones(bn("ln2_g"), {W}), make_zeros(bn("ln2_b"), {W}),
            make_linear_w(bn("w1"), W, 4 * W, seed), make_zeros(bn("b1"), {4 * W}),
            make_linear_w(bn("w2"), 4 * W, W, seed), make_zeros(bn("b2"), {W}),
        };
        blocks_.push_back(std::move(b));
    }
    out_ln_g_ = make_ones(n("out_ln_g"), {W});
    out_ln_b_ = make_zeros(n("out_ln_b"), {W});
    out_w_ = make_linear_w(n("out_w"), W, cfg.d, seed);
    out_b_ = make_zeros(n("out_b"), {cfg.d});
}

namespace {

// (B,T,W) multi-head self-attention with optional per-head RMS norm on q/k.
NodeId attention(Graph& g, NodeId x, int B, int T, int W, int heads, bool qk_norm, NodeId wq,
                 NodeId bq, NodeId wk, NodeId bk, NodeId wv, NodeId bv, NodeId wo, NodeId bo) {
    const int dh = W / heads;
    auto proj = [&](NodeId w, NodeId b, bool norm) {
        NodeId flat = g.reshape(x, {B * T, W});
        NodeId y = g.add_bcast(g.matmul(flat, w), b);
        y = g.reshape(y, {B, T, heads, dh});
        y = g.permute(y, {0, 2, 1, 3});
        y = g.reshape(y, {B * heads, T, dh});
        return norm ? g.rms_norm(y) : y;
    };
    NodeId q = proj(wq, bq, qk_norm), k = proj(wk, bk, qk_norm), v = proj(wv, bv, false);
    NodeId scores = g.scale(g.bmm(q, g.permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
    NodeId attn = g.softmax(scores);
    NodeId ctx = g.bmm(attn, v);
    ctx = g.reshape(ctx, {B, heads, T, dh});
    ctx = g.permute(ctx, {0, 2, 1, 3});
    ctx = g.reshape(ctx, {B * T, W});
    NodeId out = g.add_bcast(g.matmul(ctx, wo), bo);
    return g.reshape(out, {B, T, W});
}

// Sinusoidal features of t (scaled to [0,1000]), cos half then sin half.
Tensor timestep_features(const std::vector<double>& t, int width) {
    const int B = static_cast<int>(t.size());
    const int half = width / 2;
    Tensor out({B, width});
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * double(j) / double(half));
            const double a = t[static_cast<size_t>(b)] * 1000.0 * freq;
            out.v[static_cast<size_t>(b * width + j)] = static_cast<float>(std::cos(a));
            out.v[static_cast<size_t>(b * width + half + j)] = static_cast<float>(std::sin(a));
        }
    return out;
}

}  // namespace

NodeId VelocityNet::forward(Graph& g, NodeId z_t, const std::vector<double>& t,
                            const std::vector<int>& cond_ids, bool trainable) const {
    const Tensor& vz = g.val(z_t);
    if (vz.shape.size() != 4 || vz.shape[1] != cfg_.grid || vz.shape[2] != cfg_.grid ||
        vz.shape[3] != cfg_.d)
        throw ShapeError("velocity net: expected (B," + std::to_string(cfg_.grid) + "," +
                         std::to_string(cfg_.grid) + "," + std::to_string(cfg_.d) + "), got " +
                         vz.shape_str());
    const int B = vz.shape[0];
    if (static_cast<int>(t.size()) != B || static_cast<int>(cond_ids.size()) != B)
        throw ShapeError("velocity net: t and cond_ids must have one entry per sample");
    for (double ti : t)
        if (!(ti >= 0.0 && ti <= 1.0))
            throw DomainError("velocity net: t outside [0,1]");
    check_ids(cond_ids, null_id(), "velocity net");

    const int T = cfg_.grid * cfg_.grid;
    const int W = cfg_.width;
    auto* self = const_cast<VelocityNet*>(this);
    auto P = [&](ParamTensor& p) { return g.param(p, trainable); };

    NodeId temb = g.constant(timestep_features(t, W));
    temb = g.add_bcast(g.matmul(temb, P(self->t_w1_)), P(self->t_b1_));
    temb = g.silu(temb);
    temb = g.add_bcast(g.matmul(temb, P(self->t_w2_)), P(self->t_b2_));
    NodeId cond = g.add(temb, g.gather_rows(P(self->class_emb_), cond_ids));  // (B,W)

    NodeId h = g.reshape(z_t, {B * T, cfg_.d});
    h = g.add_bcast(g.matmul(h, P(self->in_w_)), P(self->in_b_));
    h = g.reshape(h, {B, T, W});
    h = g.add_bcast(h, P(self->pos_));
    h = g.add_mid_bcast(h, cond);

    for (auto& blk : self->blocks_) {
        NodeId a = g.layer_norm(h, P(blk.ln1_g), P(blk.ln1_b));
        a = attention(g, a, B, T, W, cfg_.heads, cfg_.qk_norm, P(blk.wq), P(blk.bq), P(blk.wk),
                      P(blk.bk), P(blk.wv), P(blk.bv), P(blk.wo), P(blk.bo));
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
    h = g.reshape(h, {B * T, W});
    h = g.add_bcast(g.matmul(h, P(self->out_w_)), P(self->out_b_));
    return g.reshape(h, {B, cfg_.grid, cfg_.grid, cfg_.d});
}

Tensor VelocityNet::velocity(const Tensor& z_t, const std::vector<double>& t,
                             const std::vector<int>& cond_ids) const {
    Graph g;
    return g.val(forward(g, g.constant(z_t), t, cond_ids, false));
}

std::vector<ParamTensor*> VelocityNet::params() {
    std::vector<ParamTensor*> ps{&in_w_, &in_b_, &pos_,  &class_emb_,
                                 &t_w1_, &t_b1_, &t_w2_, &t_b2_};
    for (Block& b : blocks_)
        for (ParamTensor* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv,
                               &b.wo, &b.bo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2})
            ps.push_back(p);
    for (ParamTensor* p : {&out_ln_g_, &out_ln_b_, &out_w_, &out_b_}) ps.push_back(p);
    return ps;
}

std::vector<const ParamTensor*> VelocityNet::params() const {
    auto ps = const_cast<VelocityNet*>(this)->params();
    return {ps.begin(), ps.end()};
}

Tensor interpolate_path(const Tensor& z0, const Tensor& z1, double t) {
    require_same_shape(z0, z1, "interpolate_path");
    if (!(t >= 0.0 && t <= 1.0))
        throw DomainError("interpolate_path: t=" + std::to_string(t) + " outside [0,1]");
    Tensor out(z0.shape);
    lerp_span(out.v.data(), z0.v.data(), z1.v.data(), static_cast<float>(t), z0.numel());
    return out;
}

Tensor velocity_target(const Tensor& z0, const Tensor& z1) {
    require_same_shape(z0, z1, "velocity_target");
    Tensor out(z0.shape);
    for (int64_t i = 0; i < z0.numel(); ++i)
        out.v[static_cast<size_t>(i)] =
            z1.v[static_cast<size_t>(i)] - z0.v[static_cast<size_t>(i)];
    return out;
}

Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double scale, CfgChannels ch) {
    require_same_shape(v_cond, v_uncond, "cfg_combine");
    if (v_cond.shape.empty()) throw ShapeError("cfg_combine: empty tensor");
    const int d = v_cond.shape.back();
    if (ch.k < -1 || ch.k > d)
        throw ConfigError("cfg_combine: channel count " + std::to_string(ch.k) +
                          " outside [0," + std::to_string(d) + "]");
    // scale 1 collapses to v_cond algebraically; return it untouched so the
    // guided and unguided paths agree bit for bit.
    if (scale == 1.0) return v_cond;
    const int gate = ch.k < 0 ? d : ch.k;
    const float sf = static_cast<float>(scale);
    Tensor out(v_cond.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        const size_t s = static_cast<size_t>(i);
        if (static_cast<int>(i % d) < gate)
            out.v[s] = v_uncond.v[s] + sf * (v_cond.v[s] - v_uncond.v[s]);
        else
            out.v[s] = v_cond.v[s];
    }
    return out;
}

FMDraw draw_flow_match(const Tensor& z0, const std::vector<int>& cond_ids, Rng& rng,
                       double cond_dropout, int null_id) {
    if (z0.shape.size() != 4) throw ShapeError("flow match: z0 must be (B,h,w,d)");
    const int B = z0.shape[0];
    if (B < 1) throw EmptyInput("flow match: empty batch");
    if (static_cast<int>(cond_ids.size()) != B)
        throw ShapeError("flow match: cond_ids must have one entry per sample");
    if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0))
        throw ConfigError("flow match: cond_dropout outside [0,1]");
    check_ids(cond_ids, null_id, "flow match");

    FMDraw d;
    d.t.resize(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) d.t[static_cast<size_t>(b)] = rng.uniform();
    d.z1 = Tensor(z0.shape);
    rng.fill_normal(d.z1, 0.0, 1.0);
    d.ids = cond_ids;
    for (int b = 0; b < B; ++b)
        if (rng.uniform() < cond_dropout) d.ids[static_cast<size_t>(b)] = null_id;
    return d;
}

namespace {

Tensor interpolate_per_sample(const Tensor& z0, const Tensor& z1, const std::vector<double>& t) {
    Tensor zt(z0.shape);
    const int B = z0.shape[0];
    const int64_t per = z0.numel() / B;
    for (int b = 0; b < B; ++b) {
        const int64_t off = b * per;
        lerp_span(zt.v.data() + off, z0.v.data() + off, z1.v.data() + off,
                  static_cast<float>(t[static_cast<size_t>(b)]), per);
    }
    return zt;
}

}  // namespace

FMBuild build_flow_matching_loss(Graph& g, const VelocityNet& net, const Tensor& z0,
                                 const std::vector<int>& cond_ids, Rng& rng, double cond_dropout,
                                 bool trainable) {
    FMBuild out;
    out.draw = draw_flow_match(z0, cond_ids, rng, cond_dropout, net.null_id());
    Tensor zt = interpolate_per_sample(z0, out.draw.z1, out.draw.t);
    NodeId v = net.forward(g, g.constant(zt), out.draw.t, out.draw.ids, trainable);
    out.loss = g.mean_sq_diff(v, g.constant(velocity_target(z0, out.draw.z1)));
    return out;
}

double flow_matching_loss(const VelocityNet& net, const Tensor& z0,
                          const std::vector<int>& cond_ids, Rng& rng, double cond_dropout) {
    Graph g;
    FMBuild b = build_flow_matching_loss(g, net, z0, cond_ids, rng, cond_dropout, false);
    return g.scalar(b.loss);
}

double flow_matching_loss_with(const BatchVelocityFn& fn, const Tensor& z0,
                               const std::vector<int>& cond_ids, Rng& rng, double cond_dropout,
                               int null_id) {
    FMDraw d = draw_flow_match(z0, cond_ids, rng, cond_dropout, null_id);
    Tensor zt = interpolate_per_sample(z0, d.z1, d.t);
    Tensor v = fn(zt, d.t, d.ids);
    require_same_shape(v, z0, "flow_matching_loss_with");
    Tensor u = velocity_target(z0, d.z1);
    double acc = 0.0;
    for (int64_t i = 0; i < v.numel(); ++i) {
        const double e = double(v.v[static_cast<size_t>(i)]) - double(u.v[static_cast<size_t>(i)]);
        acc += e * e;
    }
    return acc / double(v.numel());
}

Tensor euler_integrate(const VelocityFn& v, Tensor z_at_1, int steps) {
    if (steps < 1) throw ConfigError("euler_integrate: steps must be >= 1");
    const double dt = 1.0 / double(steps);
    // The state accumulates in double so many small steps do not drift; the
    // field still sees the float snapshot it will see at inference.
    std::vector<double> state(z_at_1.v.begin(), z_at_1.v.end());
    Tensor z = z_at_1;
    for (int i = 0; i < steps; ++i) {
        const double t = 1.0 - double(i) * dt;
        for (int64_t j = 0; j < z.numel(); ++j)
            z.v[static_cast<size_t>(j)] = static_cast<float>(state[static_cast<size_t>(j)]);
        Tensor vel = v(z, t);
        require_same_shape(vel, z, "euler_integrate");
        for (int64_t j = 0; j < z.numel(); ++j)
            state[static_cast<size_t>(j)] -= dt * double(vel.v[static_cast<size_t>(j)]);
    }
    for (int64_t j = 0; j < z.numel(); ++j)
        z.v[static_cast<size_t>(j)] = static_cast<float>(state[static_cast<size_t>(j)]);
    return z;
}

LatentBatch euler_sample(const VelocityNet& net, const SamplerConfig& cfg, int cond_id,
                         const std::vector<int>& latent_shape) {
    if (latent_shape.size() != 4) throw ShapeError("euler_sample: latent shape must be (B,h,w,d)");
    const auto& nc = net.config();
    if (latent_shape[1] != nc.grid || latent_shape[2] != nc.grid || latent_shape[3] != nc.d)
        throw ShapeError("euler_sample: latent shape " + shape_str(latent_shape) +
                         " does not match the net grid");
    if (latent_shape[0] < 1) throw EmptyInput("euler_sample: empty batch");
    check_ids({cond_id}, net.null_id(), "euler_sample");

    const int B = latent_shape[0];
    Tensor z(latent_shape);
    Rng rng = Rng::derive(cfg.seed, fnv1a_str("euler_init"));
    rng.fill_normal(z, 0.0, 1.0);

    const std::vector<int> cond(static_cast<size_t>(B), cond_id);
    const std::vector<int> uncond(static_cast<size_t>(B), net.null_id());
    auto field = [&](const Tensor& zt, double t) {
        const std::vector<double> tv(static_cast<size_t>(B), t);
        Tensor vc = net.velocity(zt, tv, cond);
        if (cfg.cfg_scale == 1.0) return vc;  // cfg_combine collapses; skip the extra pass
        Tensor vu = net.velocity(zt, tv, uncond);
        return cfg_combine(vc, vu, cfg.cfg_scale, cfg.cfg_channels);
    };
    LatentBatch out;
    out.codes = euler_integrate(field, std::move(z), cfg.steps);
    out.normalized = true;
    return out;
}

DiffusionBundle make_diffusion_bundle(const RunConfig& cfg) {
    VelocityNetConfig vc = velocity_config_from(cfg);
    const uint64_t seed = Rng::mix(cfg.tok.seed, fnv1a_str("velocity_net"));
    DiffusionBundle db;
    db.net = VelocityNet(vc, seed);
    db.ema = db.net;
    return db;
}

void train_diffusion(DiffusionBundle& db, const TokenizerBundle& tok, const Dataset& ds,
                     int steps, MetricsWriter* metrics) {
    if (steps < 0) throw ConfigError("train_diffusion: steps must be >= 0");
    if (tok.completed_stage < 1)
        throw StageOrderError("train_diffusion: tokenizer has not completed stage 1");
    const int n = ds.size();
    if (n == 0) throw EmptyDataset("train_diffusion: empty training set");
    const auto& nc = db.net.config();
    if (nc.d != tok.cfg.tok.d)
        throw ConfigError("train_diffusion: net latent dim does not match the tokenizer");

    // Latents come from the frozen tokenizer once, standardized with its
    // stored stats; the stats ride along for sampling.
    db.latent_stats = tok.latent_stats;
    Tensor latents({n, nc.grid, nc.grid, nc.d});
    const int64_t per = static_cast<int64_t>(nc.grid) * nc.grid * nc.d;
    const int chunk = 32;
    for (int start = 0; start < n; start += chunk) {
        std::vector<int> idx;
        for (int i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
        LatentBatch z = normalize_latents(tok.inference_tokenize(ds.batch(idx)), db.latent_stats);
        std::copy(z.codes.v.begin(), z.codes.v.end(), latents.v.begin() + start * per);
    }

    if (db.trained_steps == 0) copy_param_values(db.ema.params(), db.net.params());

    const RunConfig& cfg = tok.cfg;
    const int bs = cfg.batch_size;
    Adam opt(cfg.diff_lr);
    std::vector<ParamTensor*> ps = db.net.params();
    const uint64_t purpose = fnv1a_str("diffusion");

    std::vector<int> order;
    int epoch = 0, cursor = 0;
    auto next_index = [&]() {
        if (cursor >= static_cast<int>(order.size())) {
            order = epoch_order(n, cfg.tok.seed, purpose, epoch++);
            cursor = 0;
        }
        return order[static_cast<size_t>(cursor++)];
    };

    for (int step = 0; step < steps; ++step) {
        Tensor z0({bs, nc.grid, nc.grid, nc.d});
        std::vector<int> ids(static_cast<size_t>(bs));
        for (int i = 0; i < bs; ++i) {
            const int src = next_index();
            std::copy(latents.v.begin() + src * per, latents.v.begin() + (src + 1) * per,
                      z0.v.begin() + i * per);
            ids[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(src)];
        }
        const int64_t global = db.trained_steps + step;
        Rng rng = Rng::derive(cfg.tok.seed, fnv1a_str("fm_draw"), static_cast<uint64_t>(global));
        Graph g;
        FMBuild fb = build_flow_matching_loss(g, db.net, z0, ids, rng, cfg.cond_dropout, true);
        const double loss = g.scalar(fb.loss);
        if (!std::isfinite(loss)) {
            std::ostringstream os;
            os << "diffusion diverged at step " << global << ": loss_fm=" << loss;
            throw NonFiniteLoss(os.str());
        }
        g.backward(fb.loss);
        zero_grads(ps);
        g.accumulate_param_grads();
        opt.step(ps);
        ema_update(db.ema.params(), db.net.params(), cfg.tok.ema_decay);

        if (metrics && (step % cfg.log_interval == 0 || step == steps - 1)) {
            MetricRecord m;
            m.step = global;
            m.name = "loss_fm";
            m.value = loss;
            m.tags["phase"] = "diffusion";
            metrics->write(m);
        }
    }
    db.trained_steps += steps;
}

ImageBatch sample_images(const DiffusionBundle& db, const TokenizerBundle& tok,
                         const SamplerConfig& scfg, int cond_id, int count) {
    if (count < 1) throw EmptyInput("sample_images: count must be >= 1");
    const auto& nc = db.ema.config();
    LatentBatch z = euler_sample(db.ema, scfg, cond_id, {count, nc.grid, nc.grid, nc.d});
    ImageBatch out = tok.inference_decode(denormalize_latents(z, db.latent_stats));
    out.labels.assign(static_cast<size_t>(count), cond_id == db.ema.null_id() ? -1 : cond_id);
    return out;
}

}  // namespace flowtok
