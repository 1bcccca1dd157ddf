#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "flowtok/errors.hpp"
#include "flowtok/losses.hpp"
#include "flowtok/rng.hpp"
#include "flowtok/trainer.hpp"

using namespace flowtok;

namespace {

RunConfig tiny_run_cfg() {
    RunConfig c;
    c.tok.image_size = 16;
    c.tok.f = 8;
    c.tok.d = 4;
    c.tok.gan_warmup_steps = 2;
    c.tok.lr_stage1 = 1e-3;
    c.tok.lr_stage2 = 1e-3;
    c.tok.lr_stage3 = 1e-3;
    c.tok.ema_decay = 0.9;
    c.steps_stage1 = 4;
    c.steps_stage2 = 4;
    c.steps_stage3 = 4;
    c.batch_size = 4;
    c.log_interval = 2;
    c.enc_dim = 32;
    c.enc_depth = 1;
    c.enc_heads = 4;
    c.adapter_hidden = 16;
    c.dec_base = 8;
    c.disc_base = 4;
    c.num_classes = 4;
    c.train_size = 32;
    c.val_size = 16;
    return c;
}

Dataset tiny_ds(int K = 4, int n_per = 10, int img = 16, uint64_t seed = 3) {
    DatasetSpec sp;
    sp.K = K;
    sp.n_per_class = n_per;
    sp.image_size = img;
    sp.seed = seed;
    return generate_synthetic(sp);
}

ToyEncoder tiny_enc(const RunConfig& c, uint64_t seed = 5) {
    EncoderConfig ec;
    ec.image_size = c.tok.image_size;
    ec.f = c.tok.f;
    ec.dim = c.enc_dim;
    ec.depth = c.enc_depth;
    ec.heads = c.enc_heads;
    return ToyEncoder(ec, seed);
}

ImageBatch probe_batch(const Dataset& ds, int n = 8) {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) idx.push_back(i);
    return ds.batch(idx);
}

}  // namespace

TEST_CASE("stage schedules encode the freezing plan") {
    RunConfig c = tiny_run_cfg();
    auto s1 = StageSchedule::for_stage(Stage::LatentAlignment, c);
    CHECK_FALSE(s1.train_encoder);
    CHECK(s1.train_adapter);
    CHECK(s1.train_decoder);
    CHECK(s1.train_discriminator);
    CHECK_FALSE(s1.sp_enabled);
    CHECK(s1.steps == c.steps_stage1);
    CHECK(s1.lr == c.tok.lr_stage1);

    auto s2 = StageSchedule::for_stage(Stage::PerceptualAlignment, c);
    CHECK(s2.train_encoder);
    CHECK(s2.train_adapter);
    CHECK(s2.train_decoder);
    CHECK(s2.train_discriminator);
    CHECK(s2.sp_enabled);
    CHECK(s2.sp_mode == SpMode::PostAdapter);

    auto s3 = StageSchedule::for_stage(Stage::DecoderRefinement, c);
    CHECK_FALSE(s3.train_encoder);
    CHECK_FALSE(s3.train_adapter);
    CHECK(s3.train_decoder);
    CHECK(s3.train_discriminator);
    CHECK_FALSE(s3.sp_enabled);

    c.sp_pre_adapter = true;
    CHECK(StageSchedule::for_stage(Stage::PerceptualAlignment, c).sp_mode == SpMode::PreAdapter);

    CHECK(stage_from_index(2) == Stage::PerceptualAlignment);
    CHECK_THROWS_AS(stage_from_index(0), ConfigError);
    CHECK_THROWS_AS(stage_from_index(4), ConfigError);
}

TEST_CASE("gan warmup gate boundaries") {
    CHECK_FALSE(gan_warmup_gate(0, Stage::LatentAlignment, 500));
    CHECK_FALSE(gan_warmup_gate(499, Stage::LatentAlignment, 500));
    CHECK(gan_warmup_gate(500, Stage::LatentAlignment, 500));
    CHECK(gan_warmup_gate(501, Stage::LatentAlignment, 500));
    CHECK(gan_warmup_gate(0, Stage::PerceptualAlignment, 500));
    CHECK(gan_warmup_gate(0, Stage::DecoderRefinement, 500));
}

TEST_CASE("ema shadow equals the unrolled recursion") {
    ParamTensor shadow("s", Tensor::full({3}, 1.0f));
    ParamTensor live("l", Tensor::zeros({3}));
    const double d = 0.7;
    float vals[3] = {2.0f, -1.0f, 0.5f};
    for (float v : vals) {
        std::fill(live.value.v.begin(), live.value.v.end(), v);
        ema_update({&shadow}, {&live}, d);
    }
    double want = 1.0;
    for (float v : vals) want = d * want + (1 - d) * double(v);
    for (float s : shadow.value.v) CHECK(s == doctest::Approx(want).epsilon(1e-7));

    // decay 0 jumps to live; identical tensors are a fixed point
    ParamTensor s2("s2", Tensor::full({2}, 5.0f));
    ParamTensor l2("l2", Tensor::full({2}, 2.0f));
    ema_update({&s2}, {&l2}, 0.0);
    CHECK(s2.value.v[0] == 2.0f);
    ema_update({&s2}, {&l2}, 0.5);
    CHECK(s2.value.v[0] == 2.0f);
}

TEST_CASE("stage 1 trains adapter and decoder but never the encoder") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    auto s1 = StageSchedule::for_stage(Stage::LatentAlignment, c);
    enter_stage(b, s1);
    AlignmentTrainer t(b, s1);

    uint64_t enc_before = params_checksum(b.encoder.params());
    uint64_t adp_before = params_checksum(b.adapter.params());
    uint64_t dec_before = params_checksum(b.decoder.params());
    uint64_t perc_before = params_checksum(b.perceptual_net.params());

    LossReport r = t.train_step(probe_batch(ds), 0);
    CHECK(std::isfinite(r.total));
    CHECK(r.components.count("l1") == 1);
    CHECK(r.components.count("perceptual") == 1);
    CHECK(r.components.count("gan_g") == 0);  // warmup gate off at step 0

    CHECK(params_checksum(b.encoder.params()) == enc_before);
    CHECK(params_checksum(b.perceptual_net.params()) == perc_before);
    CHECK(params_checksum(b.adapter.params()) != adp_before);
    CHECK(params_checksum(b.decoder.params()) != dec_before);

    // past the warmup boundary the GAN terms appear and the disc trains
    uint64_t disc_before = params_checksum(b.disc.params());
    LossReport r2 = t.train_step(probe_batch(ds), c.tok.gan_warmup_steps);
    CHECK(r2.components.count("gan_g") == 1);
    CHECK(r2.components.count("gan_d") == 1);
    CHECK(r2.rescale_factors.count("gan") == 1);
    CHECK(params_checksum(b.disc.params()) != disc_before);
}

TEST_CASE("stage 3 freezes encoder and adapter exactly") {
    RunConfig c = tiny_run_cfg();
    c.steps_stage1 = 2;
    c.steps_stage2 = 2;
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);
    run_stage(b, StageSchedule::for_stage(Stage::PerceptualAlignment, c), ds);

    auto s3 = StageSchedule::for_stage(Stage::DecoderRefinement, c);
    enter_stage(b, s3);
    AlignmentTrainer t(b, s3);
    uint64_t enc_before = params_checksum(b.encoder.params());
    uint64_t adp_before = params_checksum(b.adapter.params());
    uint64_t ema_enc_before = params_checksum(b.ema_encoder.params());
    uint64_t ema_adp_before = params_checksum(b.ema_adapter.params());
    uint64_t dec_before = params_checksum(b.decoder.params());
    for (int i = 0; i < 3; ++i) t.train_step(probe_batch(ds), i);
    CHECK(params_checksum(b.encoder.params()) == enc_before);
    CHECK(params_checksum(b.adapter.params()) == adp_before);
    CHECK(params_checksum(b.ema_encoder.params()) == ema_enc_before);
    CHECK(params_checksum(b.ema_adapter.params()) == ema_adp_before);
    CHECK(params_checksum(b.decoder.params()) != dec_before);
}

TEST_CASE("stage ordering is enforced") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    CHECK_THROWS_AS(enter_stage(b, StageSchedule::for_stage(Stage::PerceptualAlignment, c)),
                    StageOrderError);
    CHECK_THROWS_AS(enter_stage(b, StageSchedule::for_stage(Stage::DecoderRefinement, c)),
                    StageOrderError);
    run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);
    CHECK(b.completed_stage == 1);
    CHECK_THROWS_AS(enter_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c)),
                    StageOrderError);
    CHECK_THROWS_AS(enter_stage(b, StageSchedule::for_stage(Stage::DecoderRefinement, c)),
                    StageOrderError);

    // stage 2 without a snapshot is rejected even if forced past enter_stage
    TokenizerBundle b2 = make_bundle(c, tiny_enc(c));
    b2.completed_stage = 1;
    auto s2 = StageSchedule::for_stage(Stage::PerceptualAlignment, c);
    CHECK_THROWS_AS(AlignmentTrainer(b2, s2), StageOrderError);
}

TEST_CASE("a huge sp weight pulls latents back toward the frozen target") {
    RunConfig c = tiny_run_cfg();
    c.tok.w_sp = 0.0;
    c.steps_stage1 = 2;
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);

    auto s2 = StageSchedule::for_stage(Stage::PerceptualAlignment, c);
    enter_stage(b, s2);
    ImageBatch probe = probe_batch(ds);

    // drift away from the frozen target with the sp term disabled
    {
        AlignmentTrainer t(b, s2);
        for (int i = 0; i < 8; ++i) t.train_step(probe_batch(ds), i);
    }
    LatentBatch frozen = b.sp_target->tokenize(probe);
    double sp_pre = semantic_preservation_loss(tokenize(b.encoder, b.adapter, probe), frozen);
    CHECK(sp_pre > 0.0);

    // now optimize with an overwhelming sp weight
    b.cfg.tok.w_sp = 1e3;
    {
        AlignmentTrainer t(b, s2);
        for (int i = 0; i < 8; ++i) t.train_step(probe_batch(ds), i);
    }
    double sp_post = semantic_preservation_loss(tokenize(b.encoder, b.adapter, probe), frozen);
    CHECK(sp_post < sp_pre);
}

TEST_CASE("sp rescaling equalizes encoder-anchor gradient norms on a live step") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);
    auto s2 = StageSchedule::for_stage(Stage::PerceptualAlignment, c);
    enter_stage(b, s2);
    // drift first so L_sp has a nonzero gradient
    {
        AlignmentTrainer t(b, s2);
        for (int i = 0; i < 4; ++i) t.train_step(probe_batch(ds), i);
    }

    ImageBatch batch = probe_batch(ds);
    Graph g;
    NodeId x = g.constant(batch.pixels);
    NodeId feats = b.encoder.forward(g, x, true);
    NodeId z_live = b.adapter.forward(g, feats, true);
    NodeId xhat = b.decoder.forward(g, z_live, true);
    auto rec = build_reconstruction_loss(g, x, xhat, b.perceptual_net, b.disc, c.tok.w_p,
                                         c.tok.w_g, true, b.decoder.last_layer_params());
    LatentBatch zf = b.sp_target->tokenize(batch);
    NodeId sp = g.mean_sq_diff(z_live, g.constant(zf.codes));

    g.backward(rec.total);
    double primary = g.bound_grad_norm(b.encoder.last_layer_params());
    g.backward(sp);
    double secondary = g.bound_grad_norm(b.encoder.last_layer_params());
    REQUIRE(secondary > 0.0);
    double factor = grad_norm_rescale(primary, secondary);

    g.backward(g.scale(sp, factor));
    double rescaled = g.bound_grad_norm(b.encoder.last_layer_params());
    CHECK(rescaled == doctest::Approx(primary).epsilon(1e-4));
}

TEST_CASE("full mini pipeline leaves the latent space bit-identical through stage 3") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);
    run_stage(b, StageSchedule::for_stage(Stage::PerceptualAlignment, c), ds);

    ImageBatch probe = probe_batch(ds);
    Tensor codes_s2 = b.inference_tokenize(probe).codes;
    Tensor raw_s2 = tokenize(b.encoder, b.adapter, probe).codes;
    LatentStats stats_s2 = b.latent_stats;

    run_stage(b, StageSchedule::for_stage(Stage::DecoderRefinement, c), ds);
    CHECK(b.completed_stage == 3);
    Tensor codes_s3 = b.inference_tokenize(probe).codes;
    Tensor raw_s3 = tokenize(b.encoder, b.adapter, probe).codes;
    CHECK(codes_s3.max_abs_diff(codes_s2) == 0.0f);
    CHECK(raw_s3.max_abs_diff(raw_s2) == 0.0f);
    CHECK(b.latent_stats.per_channel_mean == stats_s2.per_channel_mean);
    CHECK(b.latent_stats.per_channel_std == stats_s2.per_channel_std);

    // EMA weights drive inference after stage 2: shadows differ from raw
    CHECK(params_checksum(b.ema_decoder.params()) != params_checksum(b.decoder.params()));
}

TEST_CASE("identical config and seed reproduce identical parameters") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    auto run = [&]() {
        TokenizerBundle b = make_bundle(c, tiny_enc(c));
        run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);
        run_stage(b, StageSchedule::for_stage(Stage::PerceptualAlignment, c), ds);
        return b;
    };
    TokenizerBundle a = run();
    TokenizerBundle b = run();
    CHECK(params_checksum(a.encoder.params()) == params_checksum(b.encoder.params()));
    CHECK(params_checksum(a.adapter.params()) == params_checksum(b.adapter.params()));
    CHECK(params_checksum(a.decoder.params()) == params_checksum(b.decoder.params()));
    CHECK(params_checksum(a.disc.params()) == params_checksum(b.disc.params()));
    CHECK(params_checksum(a.ema_decoder.params()) == params_checksum(b.ema_decoder.params()));
    CHECK(a.latent_stats.per_channel_mean == b.latent_stats.per_channel_mean);
}

TEST_CASE("non-finite parameters abort with a diagnostic") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    auto s1 = StageSchedule::for_stage(Stage::LatentAlignment, c);
    enter_stage(b, s1);
    AlignmentTrainer t(b, s1);
    b.adapter.params()[0]->value.v[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(t.train_step(probe_batch(ds), 0),
                         doctest::Contains("diverged"), NonFiniteLoss);
}

TEST_CASE("run_stage appends stage-tagged loss records") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    std::string path = "/tmp/flowtok_trainer_metrics.jsonl";
    std::remove(path.c_str());
    {
        MetricsWriter w(path, false);
        run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds, &w);
    }
    auto recs = read_metrics(path);
    REQUIRE(!recs.empty());
    int totals = 0, l1s = 0;
    for (const auto& r : recs) {
        CHECK(r.tags.at("stage") == std::string("stage1"));
        if (r.name == "loss_total") ++totals;
        if (r.name == "loss_l1") ++l1s;
    }
    CHECK(totals >= 2);
    CHECK(l1s == totals);
    std::remove(path.c_str());
}

TEST_CASE("evaluate_tokenizer emits exactly the four metrics") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);
    auto recs = evaluate_tokenizer(b, ds, 7);
    REQUIRE(recs.size() == 4);
    CHECK(recs[0].name == "psnr");
    CHECK(recs[1].name == "l1");
    CHECK(recs[2].name == "rfid_proxy");
    CHECK(recs[3].name == "probe_acc");
    for (const auto& r : recs) {
        CHECK(r.step == 7);
        CHECK(std::isfinite(r.value));
    }
    CHECK(recs[0].value > 0.0);
    CHECK(recs[3].value >= 0.0);
    CHECK(recs[3].value <= 1.0);
}

TEST_CASE("an identity tokenizer mock evaluates as perfect reconstruction") {
    Dataset ds = tiny_ds(2, 12, 16, 9);
    EncoderConfig ec;
    ec.image_size = 16;
    ec.f = 8;
    ec.dim = 32;
    ec.depth = 1;
    ec.heads = 4;
    ToyEncoder feat(ec, 31);

    TokenizerEvalHooks hooks;
    hooks.tokenize = [](const ImageBatch& x) {
        LatentBatch z;
        z.codes = x.pixels;
        return z;
    };
    hooks.decode = [](const LatentBatch& z) {
        ImageBatch x;
        x.pixels = z.codes;
        x.labels.assign(static_cast<size_t>(z.codes.shape[0]), -1);
        return x;
    };
    hooks.feat_net = &feat;

    auto recs = evaluate_tokenizer_hooks(hooks, ds, 0, 1);
    REQUIRE(recs.size() == 4);
    CHECK(recs[0].value == 100.0);
    CHECK(recs[1].value == 0.0);
    CHECK(recs[2].value < 1e-3);
}
