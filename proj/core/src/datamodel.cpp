#include "flowtok/datamodel.hpp"

#include <cmath>

#include "flowtok/errors.hpp"

namespace flowtok {

void ImageBatch::validate(int f) const {
    if (pixels.shape.size() != 4 || pixels.shape[3] != 3)
        throw ShapeError("ImageBatch: pixels must be (B,H,W,3), got " + pixels.shape_str());
    if (f <= 0) throw DomainError("ImageBatch: downsampling factor must be positive");
    if (pixels.shape[1] % f != 0 || pixels.shape[2] % f != 0)
        throw ShapeError("ImageBatch: spatial dims of " + pixels.shape_str() +
                         " not divisible by f=" + std::to_string(f));
    for (float v : pixels.v) {
        if (!std::isfinite(v)) throw DomainError("ImageBatch: non-finite pixel value");
        if (v < 0.0f || v > 1.0f) throw DomainError("ImageBatch: pixel value outside [0,1]");
    }
    if (!labels.empty() && static_cast<int>(labels.size()) != pixels.shape[0])
        throw ShapeError("ImageBatch: label count does not match batch size");
}

LatentStats compute_latent_stats(const std::vector<LatentBatch>& latents) {
    int d = -1;
    int64_t count = 0;
    for (const LatentBatch& b : latents) {
        if (b.normalized) throw DoubleNormalize("compute_latent_stats: codes already normalized");
        if (b.codes.shape.size() != 4)
            throw ShapeError("compute_latent_stats: codes must be (B,h,w,d), got " +
                             b.codes.shape_str());
        if (d < 0) d = b.codes.shape[3];
        if (b.codes.shape[3] != d)
            throw ShapeError("compute_latent_stats: inconsistent channel counts");
        count += b.codes.numel();
    }
    if (d < 0 || count == 0) throw EmptyInput("compute_latent_stats: no latent elements");

    std::vector<double> sum(static_cast<size_t>(d), 0.0), sumsq(static_cast<size_t>(d), 0.0);
    int64_t per_channel = count / d;
    for (const LatentBatch& b : latents)
        for (size_t i = 0; i < b.codes.v.size(); ++i) {
            double x = b.codes.v[i];
            size_t c = i % static_cast<size_t>(d);
            sum[c] += x;
            sumsq[c] += x * x;
        }
    LatentStats st;
    st.per_channel_mean.resize(static_cast<size_t>(d));
    st.per_channel_std.resize(static_cast<size_t>(d));
    for (int c = 0; c < d; ++c) {
        double m = sum[static_cast<size_t>(c)] / static_cast<double>(per_channel);
        double var = sumsq[static_cast<size_t>(c)] / static_cast<double>(per_channel) - m * m;
        st.per_channel_mean[static_cast<size_t>(c)] = static_cast<float>(m);
        st.per_channel_std[static_cast<size_t>(c)] =
            static_cast<float>(std::max(std::sqrt(std::max(var, 0.0)), 1e-6));
    }
    return st;
}

static void check_stats(const LatentBatch& z, const LatentStats& stats, const char* what) {
    if (z.codes.shape.size() != 4)
        throw ShapeError(std::string(what) + ": codes must be (B,h,w,d), got " + z.codes.shape_str());
    const size_t d = static_cast<size_t>(z.codes.shape[3]);
    if (stats.per_channel_mean.size() != d || stats.per_channel_std.size() != d)
        throw ShapeError(std::string(what) + ": stats dimension does not match d=" +
                         std::to_string(d));
    for (float s : stats.per_channel_std)
        if (!(s > 0.0f)) throw DomainError(std::string(what) + ": std entries must be positive");
}

LatentBatch normalize_latents(const LatentBatch& z, const LatentStats& stats) {
    if (z.normalized) throw DoubleNormalize("normalize_latents: codes already normalized");
    check_stats(z, stats, "normalize_latents");
    LatentBatch out = z;
    const size_t d = stats.per_channel_mean.size();
    for (size_t i = 0; i < out.codes.v.size(); ++i) {
        size_t c = i % d;
        out.codes.v[i] = (out.codes.v[i] - stats.per_channel_mean[c]) / stats.per_channel_std[c];
    }
    out.normalized = true;
    return out;
}

LatentBatch denormalize_latents(const LatentBatch& z, const LatentStats& stats) {
    if (!z.normalized)
        throw NormalizedLatentError("denormalize_latents: codes are not normalized");
    check_stats(z, stats, "denormalize_latents");
    LatentBatch out = z;
    const size_t d = stats.per_channel_mean.size();
    for (size_t i = 0; i < out.codes.v.size(); ++i) {
        size_t c = i % d;
        out.codes.v[i] = out.codes.v[i] * stats.per_channel_std[c] + stats.per_channel_mean[c];
    }
    out.normalized = false;
    return out;
}

}  // namespace flowtok
