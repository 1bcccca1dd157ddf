#include <doctest.h>

#include <cmath>

#include "flowtok/dataset.hpp"
#include "flowtok/encoder.hpp"
#include "flowtok/errors.hpp"
#include "flowtok/evalsuite.hpp"
#include "flowtok/nn.hpp"
#include "support/gradcheck.hpp"

using namespace flowtok;

namespace {

EncoderConfig tiny_cfg() {
    EncoderConfig cfg;
    cfg.image_size = 32;
    cfg.f = 8;
    cfg.dim = 64;
    cfg.depth = 1;
    cfg.heads = 4;
    return cfg;
}

Dataset tiny_dataset(int n_per_class = 16, uint64_t seed = 11) {
    DatasetSpec spec;
    spec.K = 10;
    spec.n_per_class = n_per_class;
    spec.image_size = 32;
    spec.seed = seed;
    return generate_synthetic(spec);
}

std::vector<LatentBatch> per_item_latents(const ToyEncoder& enc, const Adapter& adp,
                                          const Dataset& ds) {
    std::vector<LatentBatch> out;
    for (int i = 0; i < ds.size(); ++i)
        out.push_back(tokenize(enc, adp, ds.batch({i})));
    return out;
}

}  // namespace

TEST_CASE("encoder output shape, purity, and input validation") {
    ToyEncoder enc(tiny_cfg(), 5);
    Tensor x = Tensor::zeros({2, 32, 32, 3});
    Rng(3).fill_uniform(x, 0.0, 1.0);
    // duplicate image 0 into slot 1
    std::copy_n(x.v.data(), x.v.size() / 2, x.v.data() + x.v.size() / 2);
    Tensor f = enc.encode(x);
    CHECK(f.shape == std::vector<int>{2, 4, 4, 64});
    CHECK(f.all_finite());
    // identical inputs give identical rows
    float diff = 0.0f;
    for (size_t i = 0; i < f.v.size() / 2; ++i)
        diff = std::max(diff, std::abs(f.v[i] - f.v[i + f.v.size() / 2]));
    CHECK(diff == 0.0f);
    CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 16, 16, 3})), ShapeError);

    ToyEncoder enc2(tiny_cfg(), 5);
    CHECK(params_checksum(enc2.params()) == params_checksum(enc.params()));
    ToyEncoder enc3(tiny_cfg(), 6);
    CHECK(params_checksum(enc3.params()) != params_checksum(enc.params()));
}

TEST_CASE("adapter is position-wise and matches a per-position oracle") {
    Adapter adp(6, 10, 4, 7);
    Tensor feats = Tensor::zeros({1, 2, 3, 6});
    Rng(9).fill_normal(feats, 0.0, 1.0);
    Tensor out = adp.apply(feats);
    REQUIRE(out.shape == std::vector<int>{1, 2, 3, 4});

    // independent oracle: per position, two matmuls with silu between
    const ParamTensor* w1 = adp.params()[0];
    const ParamTensor* b1 = adp.params()[1];
    const ParamTensor* w2 = adp.params()[2];
    const ParamTensor* b2 = adp.params()[3];
    for (int p = 0; p < 6; ++p) {
        std::vector<double> h(10, 0.0);
        for (int j = 0; j < 10; ++j) {
            for (int i = 0; i < 6; ++i)
                h[j] += static_cast<double>(feats.v[p * 6 + i]) * w1->value.v[i * 10 + j];
            h[j] += b1->value.v[j];
            h[j] = h[j] / (1.0 + std::exp(-h[j]));
        }
        for (int o = 0; o < 4; ++o) {
            double y = b2->value.v[o];
            for (int j = 0; j < 10; ++j) y += h[j] * w2->value.v[j * 4 + o];
            CHECK(out.v[p * 4 + o] == doctest::Approx(y).epsilon(1e-5));
        }
    }

    // permuting spatial positions permutes outputs the same way (tiny tolerance:
    // the GEMM may pick different SIMD paths for different row alignments)
    Tensor shuffled = feats;
    std::swap_ranges(shuffled.v.begin(), shuffled.v.begin() + 6, shuffled.v.begin() + 24);
    Tensor out2 = adp.apply(shuffled);
    for (int c = 0; c < 4; ++c) {
        CHECK(out2.v[c] == doctest::Approx(out.v[4 * 4 + c]).epsilon(1e-6));
        CHECK(out2.v[4 * 4 + c] == doctest::Approx(out.v[c]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(adp.apply(Tensor::zeros({1, 2, 2, 5})), ShapeError);
}

TEST_CASE("adapter gradcheck on a 4-position toy input") {
    Adapter adp(3, 5, 2, 13);
    Tensor feats = Tensor::zeros({1, 2, 2, 3});
    Rng(17).fill_normal(feats, 0.0, 1.0);
    auto ps = adp.params();
    auto res = flowtok::testing::gradcheck(
        [&](Graph& g) {
            NodeId z = adp.forward(g, g.constant(feats), true);
            return g.mean_sq_diff(z, g.constant(Tensor::full({1, 2, 2, 2}, 0.3f)));
        },
        ps);
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("tokenize composes encode and adapt with contracted shapes") {
    ToyEncoder enc(tiny_cfg(), 21);
    Adapter adp(64, 96, 32, 21);
    Dataset ds = tiny_dataset(2);
    ImageBatch b = ds.batch({0, 1, 2});
    LatentBatch z = tokenize(enc, adp, b);
    CHECK(z.codes.shape == std::vector<int>{3, 4, 4, 32});
    CHECK_FALSE(z.normalized);
    Tensor feats = enc.encode(b.pixels);
    CHECK(max_abs_diff(z.codes, adp.apply(feats)) == 0.0f);
}

TEST_CASE("snapshot_frozen is a deep immutable copy") {
    ToyEncoder enc(tiny_cfg(), 31);
    Adapter adp(64, 96, 16, 31);
    Dataset ds = tiny_dataset(2);
    ImageBatch b = ds.batch({5});
    FrozenTokenizerRef snap = snapshot_frozen(enc, adp, "stage1");
    CHECK(snap.stage_tag == "stage1");
    Tensor before = snap.tokenize(b).codes;
    CHECK(max_abs_diff(before, tokenize(enc, adp, b).codes) == 0.0f);

    for (ParamTensor* p : adp.params())
        for (float& v : p->value.v) v += 0.5f;
    for (ParamTensor* p : enc.params())
        for (float& v : p->value.v) v += 0.01f;

    Tensor after = snap.tokenize(b).codes;
    CHECK(max_abs_diff(before, after) == 0.0f);
    CHECK(max_abs_diff(before, tokenize(enc, adp, b).codes) > 0.0f);

    FrozenTokenizerRef snap2 = snapshot_frozen(snap.encoder, snap.adapter, "again");
    CHECK(max_abs_diff(snap2.tokenize(b).codes, before) == 0.0f);
}

TEST_CASE("pretrain_toy_encoder rejects thin datasets and is deterministic") {
    Dataset thin = tiny_dataset(8);
    CHECK_THROWS_AS(pretrain_toy_encoder(thin, tiny_cfg(), 1, 8, 1e-3, 1), DatasetTooSmall);

    Dataset ds = tiny_dataset(10);
    ToyEncoder a = pretrain_toy_encoder(ds, tiny_cfg(), 1, 20, 1e-3, 5);
    ToyEncoder b = pretrain_toy_encoder(ds, tiny_cfg(), 1, 20, 1e-3, 5);
    CHECK(params_checksum(a.params()) == params_checksum(b.params()));
}

TEST_CASE("pretraining lifts probe accuracy well above the untrained encoder") {
    Dataset ds = tiny_dataset(16);
    EncoderConfig cfg = tiny_cfg();

    ToyEncoder untrained(cfg, 77);
    std::vector<LatentBatch> feats0;
    for (int i = 0; i < ds.size(); ++i) {
        LatentBatch lb;
        lb.codes = untrained.encode(ds.batch({i}).pixels);
        feats0.push_back(std::move(lb));
    }
    ProbeResult r0 = linear_probe_accuracy(feats0, ds.labels, 123);
    CHECK(r0.chance_level == doctest::Approx(0.1));

    ToyEncoder trained = pretrain_toy_encoder(ds, cfg, 20, 16, 1e-3, 77);
    std::vector<LatentBatch> feats1;
    for (int i = 0; i < ds.size(); ++i) {
        LatentBatch lb;
        lb.codes = trained.encode(ds.batch({i}).pixels);
        feats1.push_back(std::move(lb));
    }
    ProbeResult r1 = linear_probe_accuracy(feats1, ds.labels, 123);
    MESSAGE("untrained probe acc ", r0.accuracy, " trained ", r1.accuracy);
    CHECK(r1.accuracy >= 3.0 * r1.chance_level);
    CHECK(r1.accuracy > r0.accuracy);
}
