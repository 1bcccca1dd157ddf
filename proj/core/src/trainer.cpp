#include "flowtok/trainer.hpp"

#include <cmath>
#include <sstream>

#include "flowtok/errors.hpp"
#include "flowtok/rng.hpp"

namespace flowtok {

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::LatentAlignment: return "stage1";
        case Stage::PerceptualAlignment: return "stage2";
        case Stage::DecoderRefinement: return "stage3";
    }
    throw ConfigError("stage_name: invalid stage");
}

Stage stage_from_index(int i) {
    if (i < 1 || i > 3) throw ConfigError("stage index must be 1, 2 or 3");
    return static_cast<Stage>(i);
}

StageSchedule StageSchedule::for_stage(Stage s, const RunConfig& cfg) {
    StageSchedule sc;
    sc.stage = s;
    sc.sp_mode = cfg.sp_pre_adapter ? SpMode::PreAdapter : SpMode::PostAdapter;
    switch (s) {
        case Stage::LatentAlignment:
            sc.steps = cfg.steps_stage1;
            sc.lr = cfg.tok.lr_stage1;
            sc.train_adapter = sc.train_decoder = sc.train_discriminator = true;
            break;
        case Stage::PerceptualAlignment:
            sc.steps = cfg.steps_stage2;
            sc.lr = cfg.tok.lr_stage2;
            sc.train_encoder = sc.train_adapter = sc.train_decoder = true;
            sc.train_discriminator = true;
            sc.sp_enabled = true;
            break;
        case Stage::DecoderRefinement:
            sc.steps = cfg.steps_stage3;
            sc.lr = cfg.tok.lr_stage3;
            sc.train_decoder = sc.train_discriminator = true;
            break;
    }
    return sc;
}

bool gan_warmup_gate(int step_index, Stage stage, int warmup_steps) {
    if (stage != Stage::LatentAlignment) return true;
    return step_index >= warmup_steps;
}

LatentBatch TokenizerBundle::inference_tokenize(const ImageBatch& x) const {
    if (completed_stage >= 2) return flowtok::tokenize(ema_encoder, ema_adapter, x);
    return flowtok::tokenize(encoder, adapter, x);
}

ImageBatch TokenizerBundle::inference_decode(const LatentBatch& z) const {
    if (completed_stage >= 2) return ema_decoder.decode(z);
    return decoder.decode(z);
}

TokenizerBundle make_bundle(const RunConfig& cfg, const ToyEncoder& pretrained) {
    validate_run_config(cfg);
    if (pretrained.config().image_size != cfg.tok.image_size ||
        pretrained.config().f != cfg.tok.f)
        throw ConfigError("make_bundle: pretrained encoder geometry does not match config");
    TokenizerBundle b;
    b.cfg = cfg;
    b.encoder = pretrained;
    b.perceptual_net = pretrained;
    b.adapter = Adapter(cfg.enc_dim, cfg.adapter_hidden, cfg.tok.d, cfg.tok.seed);
    DecoderConfig dc;
    dc.f = cfg.tok.f;
    dc.d = cfg.tok.d;
    dc.base = cfg.dec_base;
    b.decoder = Decoder(dc, cfg.tok.seed);
    b.disc = Discriminator(cfg.disc_base, cfg.tok.seed);
    b.ema_encoder = b.encoder;
    b.ema_adapter = b.adapter;
    b.ema_decoder = b.decoder;
    return b;
}

namespace {

std::string diverged_msg(const char* where, int step_index, const LossReport& r) {
    std::ostringstream os;
    os << where << " diverged at step " << step_index << ":";
    for (const auto& [k, v] : r.components) os << " " << k << "=" << v;
    os << " total=" << r.total;
    return os.str();
}

}  // namespace

AlignmentTrainer::AlignmentTrainer(TokenizerBundle& bundle, StageSchedule sched)
    : b_(bundle), sched_(sched), gen_opt_(sched.lr), disc_opt_(sched.lr) {
    if (sched_.sp_enabled && !b_.sp_target)
        throw StageOrderError("semantic preservation requires the stage-1 snapshot");
    if (sched_.train_encoder)
        for (auto* p : b_.encoder.params()) gen_params_.push_back(p);
    if (sched_.train_adapter)
        for (auto* p : b_.adapter.params()) gen_params_.push_back(p);
    if (sched_.train_decoder)
        for (auto* p : b_.decoder.params()) gen_params_.push_back(p);
    if (sched_.train_discriminator) disc_params_ = b_.disc.params();
}

LossReport AlignmentTrainer::train_step(const ImageBatch& batch, int step_index) {
    batch.validate(b_.cfg.tok.f);
    const bool gate =
        gan_warmup_gate(step_index, sched_.stage, b_.cfg.tok.gan_warmup_steps);

    Graph g;
    NodeId x = g.constant(batch.pixels);
    NodeId feats = b_.encoder.forward(g, x, sched_.train_encoder);
    NodeId z_live = b_.adapter.forward(g, feats, sched_.train_adapter);
    NodeId xhat = b_.decoder.forward(g, z_live, sched_.train_decoder);
    RecLossBuild rec =
        build_reconstruction_loss(g, x, xhat, b_.perceptual_net, b_.disc, b_.cfg.tok.w_p,
                                  b_.cfg.tok.w_g, gate, b_.decoder.last_layer_params());
    NodeId total = rec.total;
    LossReport report = rec.report;

    if (sched_.sp_enabled) {
        NodeId sp;
        if (sched_.sp_mode == SpMode::PostAdapter) {
            LatentBatch zf = b_.sp_target->tokenize(batch);
            sp = g.mean_sq_diff(z_live, g.constant(zf.codes));
        } else {
            Tensor ff = b_.sp_target->encoder.encode(batch.pixels);
            sp = g.mean_sq_diff(feats, g.constant(ff));
        }
        g.backward(total);
        const double primary = g.bound_grad_norm(b_.encoder.last_layer_params());
        g.backward(sp);
        const double secondary = g.bound_grad_norm(b_.encoder.last_layer_params());
        const double sp_rescale = grad_norm_rescale(primary, secondary);
        total = g.add(total, g.scale(sp, b_.cfg.tok.w_sp * sp_rescale));
        report.components["sp"] = g.scalar(sp);
        report.rescale_factors["sp"] = sp_rescale;
    }
    report.total = g.scalar(total);
    if (!std::isfinite(report.total))
        throw NonFiniteLoss(diverged_msg("generator", step_index, report));

    g.backward(total);
    zero_grads(gen_params_);
    g.accumulate_param_grads();
    gen_opt_.step(gen_params_);

    if (gate && sched_.train_discriminator) {
        Graph gd;
        NodeId real = b_.disc.forward(gd, gd.constant(batch.pixels), true);
        NodeId fake = b_.disc.forward(gd, gd.constant(g.val(xhat)), true);
        NodeId dl = hinge_discriminator_loss(gd, real, fake);
        report.components["gan_d"] = gd.scalar(dl);
        if (!std::isfinite(report.components["gan_d"]))
            throw NonFiniteLoss(diverged_msg("discriminator", step_index, report));
        gd.backward(dl);
        zero_grads(disc_params_);
        gd.accumulate_param_grads();
        disc_opt_.step(disc_params_);
    }

    if (sched_.stage != Stage::LatentAlignment) {
        const double decay = b_.cfg.tok.ema_decay;
        if (sched_.train_encoder)
            ema_update(b_.ema_encoder.params(), b_.encoder.params(), decay);
        if (sched_.train_adapter)
            ema_update(b_.ema_adapter.params(), b_.adapter.params(), decay);
        if (sched_.train_decoder)
            ema_update(b_.ema_decoder.params(), b_.decoder.params(), decay);
    }
    return report;
}

void enter_stage(TokenizerBundle& b, const StageSchedule& sched) {
    const int want = static_cast<int>(sched.stage) - 1;
    if (b.completed_stage != want)
        throw StageOrderError(std::string("cannot enter ") + stage_name(sched.stage) +
                              ": completed stage is " + std::to_string(b.completed_stage));
    if (sched.stage == Stage::PerceptualAlignment)
        b.sp_target = snapshot_frozen(b.encoder, b.adapter, "stage1");
    if (sched.stage != Stage::LatentAlignment) {
        // each stage's EMA starts from the weights it refines; groups the
        // stage leaves frozen keep their earlier shadows
        if (sched.train_encoder)
            copy_param_values(b.ema_encoder.params(), b.encoder.params());
        if (sched.train_adapter)
            copy_param_values(b.ema_adapter.params(), b.adapter.params());
        if (sched.train_decoder)
            copy_param_values(b.ema_decoder.params(), b.decoder.params());
    }
}

void finish_stage(TokenizerBundle& b, const StageSchedule& sched, const Dataset& train) {
    b.completed_stage = static_cast<int>(sched.stage);
    const int chunk = 32;
    std::vector<LatentBatch> latents;
    for (int start = 0; start < train.size(); start += chunk) {
        std::vector<int> idx;
        for (int i = start; i < std::min(train.size(), start + chunk); ++i) idx.push_back(i);
        latents.push_back(b.inference_tokenize(train.batch(idx)));
    }
    b.latent_stats = compute_latent_stats(latents);
}

void run_stage(TokenizerBundle& b, const StageSchedule& sched, const Dataset& train,
               MetricsWriter* metrics,
               const std::function<void(int, const LossReport&)>& on_step) {
    enter_stage(b, sched);
    AlignmentTrainer trainer(b, sched);
    const int n = train.size();
    if (n == 0) throw EmptyDataset("run_stage: empty training set");
    const uint64_t purpose = fnv1a_str(std::string("align_") + stage_name(sched.stage));

    std::vector<int> order;
    int epoch = 0, cursor = 0;
    auto next_index = [&]() {
        if (cursor >= static_cast<int>(order.size())) {
            order = epoch_order(n, b.cfg.tok.seed, purpose, epoch++);
            cursor = 0;
        }
        return order[static_cast<size_t>(cursor++)];
    };

    for (int step = 0; step < sched.steps; ++step) {
        std::vector<int> idx;
        idx.reserve(static_cast<size_t>(b.cfg.batch_size));
        for (int i = 0; i < b.cfg.batch_size; ++i) idx.push_back(next_index());
        LossReport r = trainer.train_step(train.batch(idx), step);
        if (on_step) on_step(step, r);
        if (metrics && (step % b.cfg.log_interval == 0 || step == sched.steps - 1)) {
            auto emit = [&](const std::string& name, double value) {
                MetricRecord m;
                m.step = step;
                m.name = name;
                m.value = value;
                m.tags["stage"] = stage_name(sched.stage);
                metrics->write(m);
            };
            emit("loss_total", r.total);
            for (const auto& [k, v] : r.components) emit("loss_" + k, v);
            for (const auto& [k, v] : r.rescale_factors) emit("rescale_" + k, v);
        }
    }
    finish_stage(b, sched, train);
}

std::vector<MetricRecord> evaluate_tokenizer(const TokenizerBundle& b, const Dataset& ds,
                                             int64_t step) {
    TokenizerEvalHooks hooks;
    hooks.tokenize = [&b](const ImageBatch& x) { return b.inference_tokenize(x); };
    hooks.decode = [&b](const LatentBatch& z) { return b.inference_decode(z); };
    hooks.feat_net = &b.perceptual_net;
    return evaluate_tokenizer_hooks(hooks, ds, step, b.cfg.tok.seed);
}

}  // namespace flowtok
