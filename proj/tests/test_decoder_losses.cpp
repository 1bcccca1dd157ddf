#include <doctest.h>

#include <cmath>

#include "flowtok/decoder.hpp"
#include "flowtok/encoder.hpp"
#include "flowtok/errors.hpp"
#include "flowtok/losses.hpp"
#include "flowtok/nn.hpp"
#include "flowtok/rng.hpp"
#include "support/gradcheck.hpp"

using namespace flowtok;
using flowtok::testing::gradcheck;

namespace {

Tensor rand_tensor(std::vector<int> shape, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    Rng(seed).fill_uniform(t, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("decoder maps latents to full-resolution images in [0,1]") {
    DecoderConfig cfg;
    cfg.f = 8;
    cfg.d = 32;
    cfg.base = 32;
    Decoder dec(cfg, 3);

    LatentBatch z;
    z.codes = rand_tensor({2, 8, 8, 32}, 5, -3.0, 3.0);
    ImageBatch out = dec.decode(z);
    CHECK(out.pixels.shape == std::vector<int>{2, 64, 64, 3});
    for (float v : out.pixels.v) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    ImageBatch again = dec.decode(z);
    CHECK(out.pixels.max_abs_diff(again.pixels) == 0.0f);

    LatentBatch norm = z;
    norm.normalized = true;
    CHECK_THROWS_AS(dec.decode(norm), NormalizedLatentError);

    LatentBatch bad;
    bad.codes = rand_tensor({1, 4, 4, 7}, 6);
    CHECK_THROWS_AS(dec.decode(bad), ShapeError);
}

TEST_CASE("decode inverts the tokenize shape arithmetic for several configs") {
    for (int f : {2, 4, 8}) {
        const int img = 4 * f;
        EncoderConfig ec;
        ec.image_size = img;
        ec.f = f;
        ec.dim = 32;
        ec.depth = 1;
        ec.heads = 4;
        ToyEncoder enc(ec, 1);
        Adapter adp(32, 16, 6, 2);
        DecoderConfig dc;
        dc.f = f;
        dc.d = 6;
        dc.base = 16;
        Decoder dec(dc, 3);

        ImageBatch x;
        x.pixels = rand_tensor({2, img, img, 3}, 9 + static_cast<uint64_t>(f));
        x.labels = {0, 1};
        LatentBatch z = tokenize(enc, adp, x);
        CHECK(z.codes.shape == std::vector<int>{2, 4, 4, 6});
        ImageBatch xhat = dec.decode(z);
        CHECK(xhat.pixels.shape == x.pixels.shape);
    }
}

TEST_CASE("decoder rejects non power-of-two factors") {
    DecoderConfig cfg;
    cfg.f = 6;
    CHECK_THROWS_AS(Decoder(cfg, 1), ConfigError);
}

TEST_CASE("decoder gradcheck on a 2x2 latent toy") {
    DecoderConfig cfg;
    cfg.f = 2;
    cfg.d = 2;
    cfg.base = 4;
    Decoder dec(cfg, 11);
    Tensor z = rand_tensor({1, 2, 2, 2}, 12, -1.0, 1.0);
    Tensor target = rand_tensor({1, 4, 4, 3}, 13, 0.2, 0.8);
    auto ps = dec.params();
    auto res = gradcheck(
        [&](Graph& g) {
            NodeId out = dec.forward(g, g.constant(z), true);
            return g.mean_sq_diff(out, g.constant(target));
        },
        ps);
    CHECK(res.max_rel_err < 1e-3);
    CHECK(res.checked > 50);
}

TEST_CASE("discriminator stride arithmetic and purity") {
    Discriminator disc(8, 21);
    Tensor x = rand_tensor({2, 64, 64, 3}, 22);
    Tensor logits = disc.discriminate(x);
    CHECK(logits.shape == std::vector<int>{2, 8, 8, 1});
    CHECK(logits.all_finite());

    // identical rows in, identical logit rows out
    Tensor pair = Tensor::zeros({2, 16, 16, 3});
    Tensor one = rand_tensor({1, 16, 16, 3}, 23);
    std::copy(one.v.begin(), one.v.end(), pair.v.begin());
    std::copy(one.v.begin(), one.v.end(), pair.v.begin() + one.v.size());
    Tensor lp = disc.discriminate(pair);
    const size_t half = lp.v.size() / 2;
    for (size_t i = 0; i < half; ++i) CHECK(lp.v[i] == lp.v[half + i]);

    // zeroed weights give a zero map
    Discriminator zdisc(8, 24);
    for (ParamTensor* p : zdisc.params()) std::fill(p->value.v.begin(), p->value.v.end(), 0.0f);
    Tensor zl = zdisc.discriminate(x);
    for (float v : zl.v) CHECK(v == 0.0f);

    CHECK_THROWS_AS(disc.discriminate(rand_tensor({1, 8, 8, 4}, 25)), ShapeError);
}

TEST_CASE("l1 and sp losses match naive loop oracles") {
    Tensor x = rand_tensor({2, 5, 5, 3}, 31);
    Tensor y = rand_tensor({2, 5, 5, 3}, 32);
    double l1_want = 0.0, l2_want = 0.0;
    for (size_t i = 0; i < x.v.size(); ++i) {
        double d = double(x.v[i]) - double(y.v[i]);
        l1_want += std::abs(d);
        l2_want += d * d;
    }
    l1_want /= double(x.v.size());
    l2_want /= double(x.v.size());

    CHECK(l1_loss(x, y) == doctest::Approx(l1_want).epsilon(1e-6));
    CHECK(l1_loss(x, x) == 0.0);
    Tensor shifted = x;
    for (float& v : shifted.v) v += 0.5f;
    CHECK(l1_loss(x, shifted) == doctest::Approx(0.5).epsilon(1e-6));

    LatentBatch a, b;
    a.codes = x;
    b.codes = y;
    CHECK(semantic_preservation_loss(a, b) == doctest::Approx(l2_want).epsilon(1e-6));
    CHECK(semantic_preservation_loss(a, a) == 0.0);
    LatentBatch c;
    c.codes = shifted;
    CHECK(semantic_preservation_loss(a, c) == doctest::Approx(0.25).epsilon(1e-6));

    CHECK(pre_adapter_sp_loss(x, y) == doctest::Approx(l2_want).epsilon(1e-6));
    CHECK(pre_adapter_sp_loss(x, shifted) == doctest::Approx(0.25).epsilon(1e-6));
    CHECK_THROWS_AS(l1_loss(x, rand_tensor({1, 5, 5, 3}, 33)), ShapeError);
}

TEST_CASE("perceptual loss agrees with the two-step extract-then-mse oracle") {
    EncoderConfig ec;
    ec.image_size = 16;
    ec.f = 8;
    ec.dim = 32;
    ec.depth = 1;
    ec.heads = 4;
    ToyEncoder net(ec, 41);
    Tensor x = rand_tensor({2, 16, 16, 3}, 42);
    Tensor y = rand_tensor({2, 16, 16, 3}, 43);

    Tensor fx = net.encode(x), fy = net.encode(y);
    double want = 0.0;
    for (size_t i = 0; i < fx.v.size(); ++i) {
        double d = double(fx.v[i]) - double(fy.v[i]);
        want += d * d;
    }
    want /= double(fx.v.size());

    CHECK(perceptual_loss(net, x, y) == doctest::Approx(want).epsilon(1e-5));
    CHECK(perceptual_loss(net, x, x) == 0.0);
    CHECK(perceptual_loss(net, x, y) == doctest::Approx(perceptual_loss(net, y, x)).epsilon(1e-7));
}

TEST_CASE("hinge losses match the scalar oracle") {
    Discriminator disc(4, 51);
    Tensor x = rand_tensor({2, 16, 16, 3}, 52);
    Tensor y = rand_tensor({2, 16, 16, 3}, 53);

    Tensor lr = disc.discriminate(x), lf = disc.discriminate(y);
    double gen_want = 0.0, d_real = 0.0, d_fake = 0.0;
    for (float v : lf.v) {
        gen_want -= double(v);
        d_fake += std::max(0.0, 1.0 + double(v));
    }
    for (float v : lr.v) d_real += std::max(0.0, 1.0 - double(v));
    gen_want /= double(lf.v.size());
    d_real /= double(lr.v.size());
    d_fake /= double(lf.v.size());

    CHECK(gan_generator_loss(disc, y) == doctest::Approx(gen_want).epsilon(1e-6));
    CHECK(gan_discriminator_loss(disc, x, y) == doctest::Approx(d_real + d_fake).epsilon(1e-6));

    // closed forms at pinned logits
    Graph g;
    NodeId zeros = g.constant(Tensor::zeros({1, 2, 2, 1}));
    CHECK(g.scalar(hinge_generator_loss(g, zeros)) == 0.0);
    CHECK(g.scalar(hinge_discriminator_loss(g, zeros, zeros)) == doctest::Approx(2.0));
    NodeId plus = g.constant(Tensor::full({1, 2, 2, 1}, 1.0f));
    NodeId minus = g.constant(Tensor::full({1, 2, 2, 1}, -1.0f));
    CHECK(g.scalar(hinge_discriminator_loss(g, plus, minus)) == 0.0);
}

TEST_CASE("grad_norm_rescale pinned values and clamps") {
    CHECK(grad_norm_rescale(1.0, 2.0) == doctest::Approx(0.5));
    CHECK(grad_norm_rescale(0.0, 2.0) == 0.0);
    CHECK(grad_norm_rescale(1.0, 0.0) == doctest::Approx(1e4));
    CHECK(grad_norm_rescale(5.0, 1e-12) == doctest::Approx(1e4));
    CHECK_THROWS_AS(grad_norm_rescale(-1.0, 1.0), DomainError);
}

TEST_CASE("rescaling equalizes anchor-layer gradient norms on a live tape") {
    DecoderConfig dc;
    dc.f = 2;
    dc.d = 3;
    dc.base = 8;
    Decoder dec(dc, 61);
    Discriminator disc(4, 62);
    EncoderConfig ec;
    ec.image_size = 16;
    ec.f = 8;
    ec.dim = 32;
    ec.depth = 1;
    ec.heads = 4;
    ToyEncoder feat(ec, 63);

    Tensor z = rand_tensor({2, 8, 8, 3}, 64, -1.0, 1.0);
    Tensor target = rand_tensor({2, 16, 16, 3}, 65, 0.1, 0.9);

    Graph g;
    NodeId xhat = dec.forward(g, g.constant(z), true);
    auto build = build_reconstruction_loss(g, g.constant(target), xhat, feat, disc, 1.0, 0.5,
                                           true, dec.last_layer_params());
    REQUIRE(build.gan_g >= 0);
    CHECK(build.gan_rescale > 0.0);

    g.backward(build.base);
    double primary = g.bound_grad_norm(dec.last_layer_params());
    NodeId rescaled_gan = g.scale(build.gan_g, build.gan_rescale);
    g.backward(rescaled_gan);
    double rescaled = g.bound_grad_norm(dec.last_layer_params());
    CHECK(rescaled == doctest::Approx(primary).epsilon(1e-4));
}

TEST_CASE("loss reports reconstruct their totals") {
    EncoderConfig ec;
    ec.image_size = 16;
    ec.f = 8;
    ec.dim = 32;
    ec.depth = 1;
    ec.heads = 4;
    ToyEncoder feat(ec, 71);
    Discriminator disc(4, 72);
    Tensor x = rand_tensor({2, 16, 16, 3}, 73);
    Tensor y = rand_tensor({2, 16, 16, 3}, 74);

    LossReport off = reconstruction_loss(x, y, feat, disc, 1.0, 0.5, false);
    CHECK(off.total == doctest::Approx(off.component("l1") + off.component("perceptual"))
                           .epsilon(1e-6));
    CHECK(off.components.count("gan_g") == 0);

    LossReport zero = reconstruction_loss(x, x, feat, disc, 0.0, 0.5, false);
    CHECK(zero.total == 0.0);

    LossReport on = reconstruction_loss(x, y, feat, disc, 1.0, 0.5, true, 2.25);
    CHECK(on.total ==
          doctest::Approx(on.component("l1") + on.component("perceptual") +
                          0.5 * 2.25 * on.component("gan_g"))
              .epsilon(1e-6));
    CHECK(on.rescale_factors.at("gan") == 2.25);

    LossReport pa = perceptual_alignment_loss(on, 0.125, 1.0, 3.0);
    CHECK(pa.total == doctest::Approx(on.total + 1.0 * 3.0 * 0.125).epsilon(1e-6));
    CHECK(pa.component("sp") == 0.125);
    LossReport pa0 = perceptual_alignment_loss(on, 0.125, 0.0, 3.0);
    CHECK(pa0.total == doctest::Approx(on.total).epsilon(1e-9));
    for (double w : {0.0, 1.0, 5.0, 10.0}) CHECK_NOTHROW(perceptual_alignment_loss(on, 0.1, w, 1.0));
}

TEST_CASE("gradients of composite losses pass FD checks on toys") {
    DecoderConfig dc;
    dc.f = 2;
    dc.d = 2;
    dc.base = 4;
    Decoder dec(dc, 81);
    Tensor z = rand_tensor({1, 2, 2, 2}, 82, -1.0, 1.0);
    // target outside the sigmoid range keeps the L1 kink out of FD reach
    Tensor target = rand_tensor({1, 4, 4, 3}, 83, 1.2, 1.8);

    // L1 through the decoder
    auto ps = dec.params();
    auto r1 = gradcheck(
        [&](Graph& g) {
            return g.mean_abs_diff(dec.forward(g, g.constant(z), true), g.constant(target));
        },
        ps);
    CHECK(r1.max_rel_err < 1e-3);

    // hinge losses wrt the final discriminator layer; upstream leaky kinks
    // stay frozen so the FD point is smooth, and small weights keep the
    // logits strictly inside the active hinge region
    Discriminator disc(2, 84);
    auto all_dps = disc.params();
    std::vector<ParamTensor*> dps{all_dps[all_dps.size() - 2], all_dps[all_dps.size() - 1]};
    for (float& v : dps[0]->value.v) v *= 0.1f;
    Tensor img = rand_tensor({1, 8, 8, 3}, 85);
    Tensor img2 = rand_tensor({1, 8, 8, 3}, 86);
    auto r2 = gradcheck(
        [&](Graph& g) {
            return hinge_generator_loss(g, disc.forward(g, g.constant(img), true));
        },
        dps);
    CHECK(r2.max_rel_err < 1e-3);
    auto r2d = gradcheck(
        [&](Graph& g) {
            return hinge_discriminator_loss(g, disc.forward(g, g.constant(img), true),
                                            disc.forward(g, g.constant(img2), true));
        },
        dps, 2e-2);
    CHECK(r2d.max_rel_err < 1e-3);

    // sp loss through a tiny adapter
    Adapter adp(3, 4, 2, 86);
    Tensor feats = rand_tensor({1, 2, 2, 3}, 87, -1.0, 1.0);
    Tensor frozen = rand_tensor({1, 2, 2, 2}, 88, -1.0, 1.0);
    auto aps = adp.params();
    auto r3 = gradcheck(
        [&](Graph& g) {
            return g.mean_sq_diff(adp.forward(g, g.constant(feats), true), g.constant(frozen));
        },
        aps);
    CHECK(r3.max_rel_err < 1e-3);
}
