#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowtok/errors.hpp"
#include "flowtok/rng.hpp"
#include "flowtok/tensor.hpp"

using namespace flowtok;

TEST_CASE("tensor construction and shape helpers") {
    Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.dim(0) == 2);
    CHECK(t.dim(-1) == 4);
    CHECK(t.shape_str() == "(2,3,4)");
    CHECK(std::all_of(t.v.begin(), t.v.end(), [](float x) { return x == 0.0f; }));

    Tensor f = Tensor::full({2, 2}, 1.5f);
    CHECK(f.v[3] == 1.5f);

    Tensor g = Tensor::from({3}, {1.0f, 2.0f, 3.0f});
    CHECK(g.v[1] == 2.0f);
    CHECK_THROWS_AS(Tensor::from({3}, {1.0f}), ShapeError);
}

TEST_CASE("tensor finiteness and diff helpers") {
    Tensor a = Tensor::from({2}, {1.0f, 2.0f});
    Tensor b = Tensor::from({2}, {1.0f, 2.5f});
    CHECK(a.all_finite());
    CHECK(max_abs_diff(a, b) == doctest::Approx(0.5));
    a.v[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(a.all_finite());
    Tensor c = Tensor::zeros({3});
    CHECK_THROWS_AS(require_same_shape(b, c, "test"), ShapeError);
}

TEST_CASE("rng streams are deterministic and purpose-separated") {
    Rng a = Rng::derive(7, 1, 2, 3);
    Rng b = Rng::derive(7, 1, 2, 3);
    Rng c = Rng::derive(7, 1, 2, 4);
    bool same = true, differ = false;
    for (int i = 0; i < 64; ++i) {
        double ua = a.uniform(), ub = b.uniform(), uc = c.uniform();
        same = same && (ua == ub);
        differ = differ || (ua != uc);
    }
    CHECK(same);
    CHECK(differ);
}

TEST_CASE("rng uniform stays in [0,1) and normal has sane moments") {
    Rng r(123);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < n; ++i) {
        double z = r.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("rng permutation is a permutation and seed-stable") {
    Rng r(5);
    auto p = r.permutation(100);
    auto q = Rng(5).permutation(100);
    CHECK(p == q);
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> iota(100);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
}

TEST_CASE("fnv1a hashing is stable across calls") {
    CHECK(fnv1a_str("adapter.w0") == fnv1a_str("adapter.w0"));
    CHECK(fnv1a_str("adapter.w0") != fnv1a_str("adapter.w1"));
}
