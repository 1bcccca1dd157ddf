#include "flowtok/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "flowtok/errors.hpp"
#include "flowtok/image_io.hpp"
#include "flowtok/rng.hpp"

namespace flowtok {

namespace fs = std::filesystem;

ImageBatch Dataset::batch(const std::vector<int>& indices) const {
    if (images.shape.size() != 4) throw ShapeError("Dataset::batch: no images loaded");
    const int H = images.shape[1], W = images.shape[2], C = images.shape[3];
    const size_t item = static_cast<size_t>(H) * W * C;
    ImageBatch b;
    b.pixels = Tensor::zeros({static_cast<int>(indices.size()), H, W, C});
    for (size_t i = 0; i < indices.size(); ++i) {
        int idx = indices[i];
        if (idx < 0 || idx >= size()) throw DomainError("Dataset::batch: index out of range");
        std::copy_n(images.v.data() + static_cast<size_t>(idx) * item, item,
                    b.pixels.v.data() + i * item);
        b.labels.push_back(labels[static_cast<size_t>(idx)]);
    }
    return b;
}

namespace {

struct Vec2 {
    float x, y;
};

// Signed distances, negative inside. s is the glyph half-extent in pixels.
float sdf_disk(Vec2 p, float s) { return std::hypot(p.x, p.y) - s; }
float sdf_ring(Vec2 p, float s) { return std::abs(std::hypot(p.x, p.y) - s) - 0.35f * s; }
float sdf_box(Vec2 p, float hx, float hy) {
    float dx = std::abs(p.x) - hx, dy = std::abs(p.y) - hy;
    float ox = std::max(dx, 0.0f), oy = std::max(dy, 0.0f);
    return std::hypot(ox, oy) + std::min(std::max(dx, dy), 0.0f);
}
float sdf_square(Vec2 p, float s) { return sdf_box(p, s, s); }
float sdf_frame(Vec2 p, float s) { return std::abs(sdf_box(p, s, s)) - 0.3f * s; }
float sdf_triangle(Vec2 p, float s) {
    // equilateral with circumradius s
    const float k = std::sqrt(3.0f);
    p.x = std::abs(p.x) - s;
    p.y = p.y + s / k;
    if (p.x + k * p.y > 0.0f) p = {(p.x - k * p.y) / 2.0f, (-k * p.x - p.y) / 2.0f};
    p.x -= std::clamp(p.x, -2.0f * s, 0.0f);
    float len = std::hypot(p.x, p.y);
    return p.y > 0.0f ? -len : len;
}
float sdf_cross(Vec2 p, float s) {
    return std::min(sdf_box(p, s, 0.32f * s), sdf_box(p, 0.32f * s, s));
}
float sdf_xcross(Vec2 p, float s) {
    const float r = 0.70710678f;
    Vec2 q{r * (p.x - p.y), r * (p.x + p.y)};
    return sdf_cross(q, s);
}
float sdf_diamond(Vec2 p, float s) {
    return (std::abs(p.x) + std::abs(p.y) - 1.25f * s) * 0.70710678f;
}
float sdf_hbars(Vec2 p, float s) {
    return std::min(sdf_box({p.x, p.y - 0.6f * s}, s, 0.27f * s),
                    sdf_box({p.x, p.y + 0.6f * s}, s, 0.27f * s));
}
float sdf_vbars(Vec2 p, float s) {
    return std::min(sdf_box({p.x - 0.6f * s, p.y}, 0.27f * s, s),
                    sdf_box({p.x + 0.6f * s, p.y}, 0.27f * s, s));
}

using SdfFn = float (*)(Vec2, float);
struct Glyph {
    const char* name;
    SdfFn sdf;
};

const Glyph kGlyphs[] = {
    {"disk", sdf_disk},      {"ring", sdf_ring},     {"square", sdf_square},
    {"frame", sdf_frame},    {"triangle", sdf_triangle}, {"cross", sdf_cross},
    {"xcross", sdf_xcross},  {"diamond", sdf_diamond},   {"hbars", sdf_hbars},
    {"vbars", sdf_vbars},
};
constexpr int kNumGlyphs = sizeof(kGlyphs) / sizeof(kGlyphs[0]);

double coverage(SdfFn sdf, float cx, float cy, float s, int size) {
    int inside = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (sdf({static_cast<float>(x) + 0.5f - cx, static_cast<float>(y) + 0.5f - cy}, s) < 0.0f)
                ++inside;
    return static_cast<double>(inside) / (static_cast<double>(size) * size);
}

// Solves for the half-extent that makes the glyph cover `target` of the
// canvas, so class identity is not readable from mean intensity.
float calibrate_scale(SdfFn sdf, float cx, float cy, double target, int size) {
    float lo = 1.0f, hi = static_cast<float>(size) * 0.75f;
    for (int it = 0; it < 24; ++it) {
        float mid = 0.5f * (lo + hi);
        if (coverage(sdf, cx, cy, mid, size) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5f * (lo + hi);
}

void hsv_to_rgb(float h, float sa, float v, float rgb[3]) {
    float c = v * sa;
    float hp = h * 6.0f;
    float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
    float r = 0, g = 0, b = 0;
    if (hp < 1)      { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else             { r = c; b = x; }
    float m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

void render_item(float* dst, int size, int glyph, Rng& rng) {
    const float fsize = static_cast<float>(size);
    const float cx = fsize * (0.5f + 0.1f * (static_cast<float>(rng.uniform()) - 0.5f) * 2.0f);
    const float cy = fsize * (0.5f + 0.1f * (static_cast<float>(rng.uniform()) - 0.5f) * 2.0f);
    const double target = rng.uniform(0.13, 0.21);
    const float s = calibrate_scale(kGlyphs[glyph].sdf, cx, cy, target, size);

    float fg[3], bg0[3], bg1[3];
    hsv_to_rgb(static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform(0.55, 0.95)),
               static_cast<float>(rng.uniform(0.75, 1.0)), fg);
    hsv_to_rgb(static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform(0.2, 0.6)),
               static_cast<float>(rng.uniform(0.08, 0.35)), bg0);
    hsv_to_rgb(static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform(0.2, 0.6)),
               static_cast<float>(rng.uniform(0.08, 0.35)), bg1);
    const float gang = static_cast<float>(rng.uniform()) * 6.2831853f;
    const float gx = std::cos(gang), gy = std::sin(gang);

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            Vec2 p{static_cast<float>(x) + 0.5f - cx, static_cast<float>(y) + 0.5f - cy};
            float d = kGlyphs[glyph].sdf(p, s);
            float alpha = std::clamp(0.5f - d, 0.0f, 1.0f);  // 1px soft edge
            float t = 0.5f + 0.5f * (gx * (x / fsize - 0.5f) + gy * (y / fsize - 0.5f)) * 2.0f;
            t = std::clamp(t, 0.0f, 1.0f);
            float* px = dst + (static_cast<size_t>(y) * size + x) * 3;
            for (int c = 0; c < 3; ++c) {
                float bg = (1.0f - t) * bg0[c] + t * bg1[c];
                float v = (1.0f - alpha) * bg + alpha * fg[c];
                v += 0.03f * (static_cast<float>(rng.uniform()) - 0.5f);
                px[c] = std::clamp(v, 0.0f, 1.0f);
            }
        }
}

}  // namespace

Dataset generate_synthetic(const DatasetSpec& spec) {
    if (spec.source != DataSource::synthetic_shapes)
        throw ConfigError("generate_synthetic: spec.source is not synthetic_shapes");
    if (spec.K < 1) throw ConfigError("generate_synthetic: K must be >= 1");
    if (spec.K > kNumGlyphs)
        throw ConfigError("generate_synthetic: at most " + std::to_string(kNumGlyphs) +
                          " classes available");
    if (spec.n_per_class < 1) throw ConfigError("generate_synthetic: n_per_class must be >= 1");
    if (spec.image_size < 16) throw ConfigError("generate_synthetic: image_size must be >= 16");

    const int N = spec.K * spec.n_per_class;
    Dataset ds;
    ds.images = Tensor::zeros({N, spec.image_size, spec.image_size, 3});
    ds.labels.resize(static_cast<size_t>(N));
    ds.num_classes = spec.K;
    for (int k = 0; k < spec.K; ++k) ds.class_names.push_back(kGlyphs[k].name);

    const size_t item = static_cast<size_t>(spec.image_size) * spec.image_size * 3;
    for (int i = 0; i < spec.n_per_class; ++i)
        for (int k = 0; k < spec.K; ++k) {
            const int idx = i * spec.K + k;
            // stream keyed by (class, repeat): independent of K and N
            Rng rng = Rng::derive(spec.seed, fnv1a_str("synthetic"), static_cast<uint64_t>(k),
                                  static_cast<uint64_t>(i));
            render_item(ds.images.v.data() + static_cast<size_t>(idx) * item, spec.image_size, k,
                        rng);
            ds.labels[static_cast<size_t>(idx)] = k;
        }
    return ds;
}

Dataset ingest_folder(const std::string& path, int image_size) {
    if (!fs::is_directory(path)) throw IoError("ingest_folder: not a directory: " + path);
    if (image_size < 1) throw ConfigError("ingest_folder: image_size must be positive");

    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());

    std::vector<Tensor> imgs;
    std::vector<int> labels;
    for (size_t k = 0; k < class_dirs.size(); ++k) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(path) / class_dirs[k]))
            if (e.is_regular_file() && is_supported_image(e.path().string()))
                files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const std::string& f : files) {
            try {
                imgs.push_back(resize_shorter_edge_center_crop(read_image(f), image_size));
                labels.push_back(static_cast<int>(k));
            } catch (const IoError& e) {
                std::cerr << "warning: skipping unreadable image " << f << " (" << e.what()
                          << ")\n";
            }
        }
    }
    if (imgs.empty()) throw EmptyDataset("ingest_folder: no decodable images under " + path);

    Dataset ds;
    ds.num_classes = static_cast<int>(class_dirs.size());
    ds.class_names = class_dirs;
    ds.labels = std::move(labels);
    ds.images = Tensor::zeros({static_cast<int>(imgs.size()), image_size, image_size, 3});
    const size_t item = static_cast<size_t>(image_size) * image_size * 3;
    for (size_t i = 0; i < imgs.size(); ++i)
        std::copy_n(imgs[i].v.data(), item, ds.images.v.data() + i * item);
    return ds;
}

Dataset build_dataset(const DatasetSpec& spec) {
    return spec.source == DataSource::synthetic_shapes ? generate_synthetic(spec)
                                                       : ingest_folder(spec.path, spec.image_size);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, int n_train, int n_val) {
    if (n_train < 1 || n_val < 1) throw ConfigError("split_dataset: split sizes must be >= 1");
    if (ds.size() < n_train + n_val)
        throw DatasetTooSmall("split_dataset: have " + std::to_string(ds.size()) +
                              " items, need " + std::to_string(n_train + n_val));
    auto take = [&](int from, int count) {
        std::vector<int> idx(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = from + i;
        ImageBatch b = ds.batch(idx);
        Dataset out;
        out.images = std::move(b.pixels);
        out.labels = std::move(b.labels);
        out.num_classes = ds.num_classes;
        out.class_names = ds.class_names;
        return out;
    };
    return {take(0, n_train), take(n_train, n_val)};
}

std::vector<int> epoch_order(int n, uint64_t seed, uint64_t purpose, uint64_t epoch) {
    if (n < 1) throw EmptyInput("epoch_order: n must be >= 1");
    Rng rng = Rng::derive(seed, fnv1a_str("epoch_order"), purpose, epoch);
    return rng.permutation(n);
}

}  // namespace flowtok
