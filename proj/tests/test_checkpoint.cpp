#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "flowtok/checkpoint.hpp"
#include "flowtok/diffusion.hpp"
#include "flowtok/errors.hpp"
#include "flowtok/nn.hpp"
#include "flowtok/rng.hpp"
#include "flowtok/trainer.hpp"

using namespace flowtok;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name)
        : path((std::filesystem::temp_directory_path() / name).string()) {
        std::remove(path.c_str());
    }
    ~TempFile() { std::remove(path.c_str()); }
};

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
    c.steps_stage1 = 3;
    c.steps_stage2 = 3;
    c.steps_stage3 = 3;
    c.batch_size = 4;
    c.log_interval = 2;
    c.enc_dim = 32;
    c.enc_depth = 1;
    c.enc_heads = 4;
    c.adapter_hidden = 16;
    c.dec_base = 8;
    c.disc_base = 4;
    c.num_classes = 4;
    c.diff_width = 16;
    c.diff_depth = 1;
    c.diff_heads = 2;
    return c;
}

Dataset tiny_ds(uint64_t seed = 3) {
    DatasetSpec sp;
    sp.K = 4;
    sp.n_per_class = 10;
    sp.image_size = 16;
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

std::vector<uint64_t> group_checksums(TokenizerBundle& b) {
    std::vector<uint64_t> sums{
        params_checksum(b.encoder.params()),     params_checksum(b.adapter.params()),
        params_checksum(b.decoder.params()),     params_checksum(b.disc.params()),
        params_checksum(b.ema_encoder.params()), params_checksum(b.ema_adapter.params()),
        params_checksum(b.ema_decoder.params()), params_checksum(b.perceptual_net.params()),
    };
    if (b.sp_target) {
        sums.push_back(params_checksum(b.sp_target->encoder.params()));
        sums.push_back(params_checksum(b.sp_target->adapter.params()));
    }
    return sums;
}

uint64_t moments_checksum(std::vector<ParamTensor*> ps) {
    uint64_t h = 1469598103934665603ull;
    for (const ParamTensor* p : ps) {
        h = fnv1a(p->adam_m.v.data(), p->adam_m.v.size() * sizeof(float), h);
        h = fnv1a(p->adam_v.v.data(), p->adam_v.v.size() * sizeof(float), h);
    }
    return h;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("raw container round-trips tensors bit for bit") {
    TempFile f("ck_raw.fck");
    Tensor a({2, 3});
    Tensor b({4});
    Rng rng(7);
    rng.fill_normal(a, 0.0, 1.0);
    rng.fill_uniform(b, -2.0, 2.0);

    CheckpointManifest m;
    m.kind = "tokenizer";
    m.stage_tag = "stage1";
    m.config_hash = 12345678901234567ull;
    m.config_text = "f = 8\n";
    m.extra["completed_stage"] = "1";
    write_checkpoint(f.path, m, {{"x/a", &a}, {"x/b", &b}});

    LoadedCheckpoint ck = read_checkpoint(f.path);
    CHECK(ck.manifest.format_version == 1);
    CHECK(ck.manifest.kind == "tokenizer");
    CHECK(ck.manifest.stage_tag == "stage1");
    CHECK(ck.manifest.config_hash == 12345678901234567ull);
    CHECK(ck.manifest.config_text == "f = 8\n");
    CHECK(ck.manifest.extra.at("completed_stage") == "1");
    REQUIRE(ck.manifest.tensors.size() == 2);
    CHECK(ck.manifest.tensors[0].name == "x/a");
    CHECK(ck.manifest.tensors[0].offset == 0);
    CHECK(ck.manifest.tensors[0].count == 6);
    CHECK(ck.manifest.tensors[1].offset == 6);
    CHECK(ck.at("x/a").v == a.v);
    CHECK(ck.at("x/b").v == b.v);
    CHECK(ck.at("x/a").shape == a.shape);
    CHECK_THROWS_AS(ck.at("x/missing"), MissingArtifact);

    // Manifest-only read agrees with the full read.
    CheckpointManifest only = read_checkpoint_manifest(f.path);
    CHECK(only.tensors.size() == 2);
    CHECK(only.config_hash == m.config_hash);

    // Same inputs serialize to identical bytes.
    TempFile f2("ck_raw2.fck");
    write_checkpoint(f2.path, m, {{"x/a", &a}, {"x/b", &b}});
    CHECK(file_bytes(f.path) == file_bytes(f2.path));
}

TEST_CASE("container rejects missing, corrupt, and truncated files") {
    CHECK_THROWS_AS(read_checkpoint("/nonexistent/nope.fck"), MissingArtifact);

    TempFile bad("ck_bad.fck");
    {
        std::ofstream out(bad.path, std::ios::binary);
        out << "not a checkpoint\n";
    }
    CHECK_THROWS_AS(read_checkpoint(bad.path), IoError);

    // A valid file truncated mid-payload.
    TempFile full("ck_full.fck");
    Tensor a({16});
    Rng(3).fill_normal(a, 0.0, 1.0);
    CheckpointManifest m;
    m.kind = "encoder";
    m.stage_tag = "pretrained";
    write_checkpoint(full.path, m, {{"x", &a}});
    std::string bytes = file_bytes(full.path);
    TempFile cut("ck_cut.fck");
    {
        std::ofstream out(cut.path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
    }
    CHECK_THROWS_AS(read_checkpoint(cut.path), IoError);

    // Trailing garbage is also an error.
    TempFile fat("ck_fat.fck");
    {
        std::ofstream out(fat.path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out << "junk";
    }
    CHECK_THROWS_AS(read_checkpoint(fat.path), IoError);

    // Unsupported version.
    TempFile vers("ck_vers.fck");
    {
        std::string manifest =
            "{\"format_version\":9,\"kind\":\"encoder\",\"stage_tag\":\"x\","
            "\"config_hash\":\"0\",\"config\":\"\",\"extra\":{},\"tensors\":[]}";
        std::ofstream out(vers.path, std::ios::binary);
        out << "flowtok-checkpoint v1\n" << manifest.size() << "\n" << manifest << "\n";
    }
    CHECK_THROWS_AS(read_checkpoint(vers.path), IoError);
}

TEST_CASE("encoder checkpoints restore the exact weights") {
    TempFile f("ck_enc.fck");
    RunConfig c = tiny_run_cfg();
    ToyEncoder enc = tiny_enc(c, 11);
    // Nudge a weight so the file does not just reproduce the seeded init.
    enc.params()[0]->value.v[0] = 0.25f;
    save_encoder_checkpoint(f.path, enc, c);

    CheckpointManifest m;
    ToyEncoder back = load_encoder_checkpoint(f.path, &m);
    CHECK(m.kind == "encoder");
    CHECK(m.stage_tag == "pretrained");
    CHECK(m.config_hash == config_hash(c));
    CHECK(params_checksum(back.params()) == params_checksum(enc.params()));

    // Kind mismatch is rejected.
    CHECK_THROWS_AS(load_tokenizer_checkpoint(f.path), IoError);
}

TEST_CASE("tokenizer checkpoints round-trip every group bit for bit") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle b = make_bundle(c, tiny_enc(c));
    run_stage(b, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);
    run_stage(b, StageSchedule::for_stage(Stage::PerceptualAlignment, c), ds);
    REQUIRE(b.sp_target.has_value());

    TempFile f("ck_tok.fck");
    save_tokenizer_checkpoint(f.path, b);
    TokenizerBundle back = load_tokenizer_checkpoint(f.path);

    CHECK(back.completed_stage == 2);
    CHECK(back.cfg == b.cfg);
    CHECK(group_checksums(back) == group_checksums(b));
    CHECK(back.latent_stats.per_channel_mean == b.latent_stats.per_channel_mean);
    CHECK(back.latent_stats.per_channel_std == b.latent_stats.per_channel_std);
    REQUIRE(back.sp_target.has_value());
    CHECK(back.sp_target->stage_tag == b.sp_target->stage_tag);
    CHECK(moments_checksum(back.decoder.params()) == moments_checksum(b.decoder.params()));
    CHECK(moments_checksum(back.encoder.params()) == moments_checksum(b.encoder.params()));

    // Inference behavior carries over bit for bit.
    ImageBatch probe = ds.batch({0, 1, 2, 3});
    CHECK(back.inference_tokenize(probe).codes.v == b.inference_tokenize(probe).codes.v);

    // Identical bundles write identical bytes.
    TempFile f2("ck_tok2.fck");
    save_tokenizer_checkpoint(f2.path, back);
    CHECK(file_bytes(f.path) == file_bytes(f2.path));
}

TEST_CASE("save, load, and one more step matches uninterrupted training") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();

    // Uninterrupted: stage 1 then two extra steps inside stage 2.
    TokenizerBundle gold = make_bundle(c, tiny_enc(c));
    run_stage(gold, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);

    TempFile f("ck_resume.fck");
    save_tokenizer_checkpoint(f.path, gold);
    TokenizerBundle resumed = load_tokenizer_checkpoint(f.path);

    auto two_steps = [&](TokenizerBundle& b) {
        StageSchedule s2 = StageSchedule::for_stage(Stage::PerceptualAlignment, b.cfg);
        enter_stage(b, s2);
        AlignmentTrainer tr(b, s2);
        ImageBatch batch = ds.batch({0, 1, 2, 3});
        LossReport r0 = tr.train_step(batch, 0);
        LossReport r1 = tr.train_step(batch, 1);
        return std::pair<LossReport, LossReport>(r0, r1);
    };
    auto [g0, g1] = two_steps(gold);
    auto [r0, r1] = two_steps(resumed);

    CHECK(r0.total == doctest::Approx(g0.total).epsilon(1e-6));
    CHECK(r1.total == doctest::Approx(g1.total).epsilon(1e-6));
    for (const auto& [k, v] : g0.components)
        CHECK(r0.components.at(k) == doctest::Approx(v).epsilon(1e-6));
    CHECK(params_checksum(gold.decoder.params()) == params_checksum(resumed.decoder.params()));
}

TEST_CASE("diffusion checkpoints round-trip the nets and stats") {
    RunConfig c = tiny_run_cfg();
    Dataset ds = tiny_ds();
    TokenizerBundle tok = make_bundle(c, tiny_enc(c));
    run_stage(tok, StageSchedule::for_stage(Stage::LatentAlignment, c), ds);

    DiffusionBundle db = make_diffusion_bundle(c);
    train_diffusion(db, tok, ds, 5);

    TempFile f("ck_diff.fck");
    save_diffusion_checkpoint(f.path, db, c);
    CheckpointManifest m;
    DiffusionBundle back = load_diffusion_checkpoint(f.path, &m);

    CHECK(m.kind == "diffusion");
    CHECK(m.stage_tag == "diffusion");
    CHECK(back.trained_steps == 5);
    CHECK(params_checksum(back.net.params()) == params_checksum(db.net.params()));
    CHECK(params_checksum(back.ema.params()) == params_checksum(db.ema.params()));
    CHECK(moments_checksum(back.net.params()) == moments_checksum(db.net.params()));
    CHECK(back.latent_stats.per_channel_mean == db.latent_stats.per_channel_mean);

    // Sampling from the restored bundle is bit-identical.
    SamplerConfig sc;
    sc.steps = 2;
    sc.seed = 31;
    LatentBatch za = euler_sample(db.ema, sc, 1, {2, 2, 2, 4});
    LatentBatch zb = euler_sample(back.ema, sc, 1, {2, 2, 2, 4});
    CHECK(za.codes.v == zb.codes.v);

    CHECK_THROWS_AS(load_encoder_checkpoint(f.path), IoError);
}

TEST_CASE("a tampered config hash is rejected at load") {
    RunConfig c = tiny_run_cfg();
    TempFile f("ck_tamper.fck");
    save_encoder_checkpoint(f.path, tiny_enc(c), c);

    // Flip the stored hash; the config text no longer matches it.
    std::string bytes = file_bytes(f.path);
    const std::string needle = "\"config_hash\":\"";
    size_t pos = bytes.find(needle);
    REQUIRE(pos != std::string::npos);
    pos += needle.size();
    bytes[pos] = bytes[pos] == '1' ? '2' : '1';
    {
        std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_encoder_checkpoint(f.path), IoError);
}
