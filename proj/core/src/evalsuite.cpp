#include "flowtok/evalsuite.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>

#include "flowtok/errors.hpp"
#include "flowtok/rng.hpp"

namespace flowtok {

double psnr(const Tensor& x, const Tensor& xhat) {
    require_same_shape(x, xhat, "psnr");
    if (x.numel() == 0) throw EmptyInput("psnr: empty tensors");
    double acc = 0.0;
    for (size_t i = 0; i < x.v.size(); ++i) {
        double d = static_cast<double>(x.v[i]) - xhat.v[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(x.v.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

FeatureStats feature_stats(const Tensor& pooled_rows) {
    if (pooled_rows.shape.size() != 2)
        throw ShapeError("feature_stats: expected (N,m), got " + pooled_rows.shape_str());
    const int n = pooled_rows.shape[0], m = pooled_rows.shape[1];
    if (n < 2) throw EmptyInput("feature_stats: need at least 2 rows");
    FeatureStats st;
    st.dim = m;
    st.count = n;
    st.mean.assign(static_cast<size_t>(m), 0.0);
    st.cov.assign(static_cast<size_t>(m) * m, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            st.mean[static_cast<size_t>(j)] += pooled_rows.v[static_cast<size_t>(i) * m + j];
    for (double& v : st.mean) v /= n;
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < m; ++a) {
            const double da = pooled_rows.v[static_cast<size_t>(i) * m + a] - st.mean[static_cast<size_t>(a)];
            for (int b = a; b < m; ++b) {
                const double db = pooled_rows.v[static_cast<size_t>(i) * m + b] - st.mean[static_cast<size_t>(b)];
                st.cov[static_cast<size_t>(a) * m + b] += da * db;
            }
        }
    for (int a = 0; a < m; ++a)
        for (int b = a; b < m; ++b) {
            const double v = st.cov[static_cast<size_t>(a) * m + b] / (n - 1);
            st.cov[static_cast<size_t>(a) * m + b] = v;
            st.cov[static_cast<size_t>(b) * m + a] = v;
        }
    return st;
}

double frechet_from_stats(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim != b.dim) throw ShapeError("frechet: feature dims differ");
    const int m = a.dim;
    using Mat = Eigen::MatrixXd;
    Mat Ca = Eigen::Map<const Mat>(a.cov.data(), m, m);
    Mat Cb = Eigen::Map<const Mat>(b.cov.data(), m, m);
    const double eps = 1e-6;
    Ca.diagonal().array() += eps;
    Cb.diagonal().array() += eps;

    // tr sqrt(Ca Cb) = tr sqrt(sqrt(Ca) Cb sqrt(Ca)); the inner matrix is
    // symmetric PSD so a self-adjoint eigensolver is exact and stable.
    Eigen::SelfAdjointEigenSolver<Mat> esa(Ca);
    Mat sqrtCa = esa.operatorSqrt();
    Mat inner = sqrtCa * Cb * sqrtCa;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> esi(inner);
    double tr_sqrt = 0.0;
    for (int i = 0; i < m; ++i) tr_sqrt += std::sqrt(std::max(esi.eigenvalues()[i], 0.0));

    double mean_term = 0.0;
    for (int i = 0; i < m; ++i) {
        const double d = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
        mean_term += d * d;
    }
    const double dist = mean_term + Ca.trace() + Cb.trace() - 2.0 * tr_sqrt;
    return std::max(dist, 0.0);
}

Tensor pooled_features(const ToyEncoder& feat_net, const Tensor& images) {
    if (images.shape.size() != 4 || images.shape[3] != 3)
        throw ShapeError("pooled_features: expected (N,H,W,3), got " + images.shape_str());
    const int n = images.shape[0];
    const int m = feat_net.config().dim;
    Tensor rows = Tensor::zeros({n, m});
    const int chunk = 16;
    const size_t item = images.v.size() / static_cast<size_t>(n);
    for (int start = 0; start < n; start += chunk) {
        const int bs = std::min(chunk, n - start);
        Tensor batch = Tensor::zeros({bs, images.shape[1], images.shape[2], 3});
        std::copy_n(images.v.data() + static_cast<size_t>(start) * item, item * bs,
                    batch.v.data());
        Tensor feats = feat_net.encode(batch);  // (bs, h, w, m)
        const int hw = feats.shape[1] * feats.shape[2];
        for (int i = 0; i < bs; ++i)
            for (int c = 0; c < m; ++c) {
                double acc = 0.0;
                for (int p = 0; p < hw; ++p)
                    acc += feats.v[(static_cast<size_t>(i) * hw + p) * m + c];
                rows.v[static_cast<size_t>(start + i) * m + c] = static_cast<float>(acc / hw);
            }
    }
    return rows;
}

double frechet_feature_distance(const ToyEncoder& feat_net, const Tensor& set_a,
                                const Tensor& set_b) {
    if (set_a.shape.size() != 4 || set_a.shape[0] < 2 || set_b.shape.size() != 4 ||
        set_b.shape[0] < 2)
        throw EmptyInput("frechet_feature_distance: each set needs at least 2 images");
    return frechet_from_stats(feature_stats(pooled_features(feat_net, set_a)),
                              feature_stats(pooled_features(feat_net, set_b)));
}

ProbeResult linear_probe_accuracy(const std::vector<LatentBatch>& latents,
                                  const std::vector<int>& labels, uint64_t split_seed) {
    // mean-pool every latent item to a d-vector
    std::vector<std::vector<double>> rows;
    for (const LatentBatch& lb : latents) {
        if (lb.codes.shape.size() != 4)
            throw ShapeError("linear_probe: codes must be (B,h,w,d), got " + lb.codes.shape_str());
        const int B = lb.codes.shape[0], hw = lb.codes.shape[1] * lb.codes.shape[2];
        const int d = lb.codes.shape[3];
        for (int i = 0; i < B; ++i) {
            std::vector<double> r(static_cast<size_t>(d), 0.0);
            for (int p = 0; p < hw; ++p)
                for (int c = 0; c < d; ++c)
                    r[static_cast<size_t>(c)] +=
                        lb.codes.v[(static_cast<size_t>(i) * hw + p) * d + c];
            for (double& v : r) v /= hw;
            rows.push_back(std::move(r));
        }
    }
    const int n = static_cast<int>(rows.size());
    if (n == 0) throw EmptyInput("linear_probe: no latents");
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("linear_probe: label count mismatch");
    const int K = *std::max_element(labels.begin(), labels.end()) + 1;
    if (K < 2) throw DatasetTooSmall("linear_probe: need at least 2 classes");
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) by_class[labels[static_cast<size_t>(i)]].push_back(i);
    for (const auto& [k, idx] : by_class)
        if (static_cast<int>(idx.size()) < 10)
            throw DatasetTooSmall("linear_probe: class " + std::to_string(k) +
                                  " has fewer than 10 examples");

    // stratified 80/20 split, deterministic in split_seed
    std::vector<int> train_idx, test_idx;
    for (auto& [k, idx] : by_class) {
        Rng rng = Rng::derive(split_seed, fnv1a_str("probe_split"), static_cast<uint64_t>(k));
        std::vector<int> perm = rng.permutation(static_cast<int>(idx.size()));
        const int n_tr = static_cast<int>(idx.size()) * 4 / 5;
        for (int i = 0; i < static_cast<int>(idx.size()); ++i)
            (i < n_tr ? train_idx : test_idx).push_back(idx[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
    }
    const int d = static_cast<int>(rows[0].size());

    // standardize on the train split for well-conditioned descent
    std::vector<double> mu(static_cast<size_t>(d), 0.0), sd(static_cast<size_t>(d), 0.0);
    for (int i : train_idx)
        for (int c = 0; c < d; ++c) mu[static_cast<size_t>(c)] += rows[static_cast<size_t>(i)][static_cast<size_t>(c)];
    for (double& v : mu) v /= static_cast<double>(train_idx.size());
    for (int i : train_idx)
        for (int c = 0; c < d; ++c) {
            double dv = rows[static_cast<size_t>(i)][static_cast<size_t>(c)] - mu[static_cast<size_t>(c)];
            sd[static_cast<size_t>(c)] += dv * dv;
        }
    for (double& v : sd) v = std::max(std::sqrt(v / static_cast<double>(train_idx.size())), 1e-8);

    using Mat = Eigen::MatrixXd;
    auto design = [&](const std::vector<int>& idx) {
        Mat X(idx.size(), d);
        for (size_t i = 0; i < idx.size(); ++i)
            for (int c = 0; c < d; ++c)
                X(static_cast<Eigen::Index>(i), c) =
                    (rows[static_cast<size_t>(idx[i])][static_cast<size_t>(c)] - mu[static_cast<size_t>(c)]) /
                    sd[static_cast<size_t>(c)];
        return X;
    };
    Mat Xtr = design(train_idx), Xte = design(test_idx);

    Mat W = Mat::Zero(d, K);
    Eigen::VectorXd bias = Eigen::VectorXd::Zero(K);
    const double lambda = 1e-3;
    const double lr = 1.0;
    const int iters = 500;
    const auto ntr = static_cast<double>(train_idx.size());
    for (int it = 0; it < iters; ++it) {
        Mat logits = (Xtr * W).rowwise() + bias.transpose();
        Mat P = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
        P.array().colwise() /= P.rowwise().sum().array();
        for (size_t i = 0; i < train_idx.size(); ++i)
            P(static_cast<Eigen::Index>(i), labels[static_cast<size_t>(train_idx[i])]) -= 1.0;
        Mat gW = Xtr.transpose() * P / ntr + lambda * W;
        Eigen::VectorXd gb = P.colwise().sum() / ntr;
        W -= lr * gW;
        bias -= lr * gb;
    }

    int correct = 0;
    Mat logits = (Xte * W).rowwise() + bias.transpose();
    for (size_t i = 0; i < test_idx.size(); ++i) {
        Eigen::Index argmax;
        logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&argmax);
        if (static_cast<int>(argmax) == labels[static_cast<size_t>(test_idx[i])]) ++correct;
    }
    ProbeResult res;
    res.accuracy = static_cast<double>(correct) / static_cast<double>(test_idx.size());
    res.chance_level = 1.0 / K;
    res.n_train = static_cast<int>(train_idx.size());
    res.n_test = static_cast<int>(test_idx.size());
    return res;
}


namespace {
void append_images(Tensor& dst, const Tensor& src) {
    if (dst.v.empty()) {
        dst = src;
        return;
    }
    require_same_shape(Tensor::zeros({1, dst.shape[1], dst.shape[2], dst.shape[3]}),
                       Tensor::zeros({1, src.shape[1], src.shape[2], src.shape[3]}),
                       "evaluate_tokenizer batches");
    dst.shape[0] += src.shape[0];
    dst.v.insert(dst.v.end(), src.v.begin(), src.v.end());
}
}  // namespace

std::vector<MetricRecord> evaluate_tokenizer_hooks(const TokenizerEvalHooks& hooks,
                                                   const Dataset& ds, int64_t step,
                                                   uint64_t probe_seed) {
    if (ds.size() == 0) throw EmptyInput("evaluate_tokenizer: empty dataset");
    if (!hooks.tokenize || !hooks.decode || hooks.feat_net == nullptr)
        throw ConfigError("evaluate_tokenizer: hooks incomplete");

    const int chunk = 16;
    double abs_sum = 0.0, sq_sum = 0.0;
    int64_t count = 0;
    Tensor originals, recons;
    std::vector<LatentBatch> latents;
    for (int start = 0; start < ds.size(); start += chunk) {
        std::vector<int> idx;
        for (int i = start; i < std::min(ds.size(), start + chunk); ++i) idx.push_back(i);
        ImageBatch xb = ds.batch(idx);
        LatentBatch z = hooks.tokenize(xb);
        ImageBatch xr = hooks.decode(z);
        require_same_shape(xb.pixels, xr.pixels, "evaluate_tokenizer reconstruction");
        for (size_t i = 0; i < xb.pixels.v.size(); ++i) {
            double d = double(xb.pixels.v[i]) - double(xr.pixels.v[i]);
            abs_sum += std::abs(d);
            sq_sum += d * d;
        }
        count += static_cast<int64_t>(xb.pixels.v.size());
        append_images(originals, xb.pixels);
        append_images(recons, xr.pixels);
        // per-item latents for the probe
        for (int i = 0; i < z.codes.shape[0]; ++i) {
            LatentBatch one;
            one.normalized = z.normalized;
            one.codes = Tensor::zeros({1, z.codes.shape[1], z.codes.shape[2], z.codes.shape[3]});
            const size_t item = one.codes.v.size();
            std::copy(z.codes.v.begin() + static_cast<std::ptrdiff_t>(item * i),
                      z.codes.v.begin() + static_cast<std::ptrdiff_t>(item * (i + 1)),
                      one.codes.v.begin());
            latents.push_back(std::move(one));
        }
    }

    const double mse = sq_sum / static_cast<double>(count);
    const double psnr_db = mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse);
    const double l1 = abs_sum / static_cast<double>(count);
    const double rfid = frechet_feature_distance(*hooks.feat_net, originals, recons);
    ProbeResult probe = linear_probe_accuracy(latents, ds.labels, probe_seed);

    std::vector<MetricRecord> out;
    auto rec = [&](const char* name, double value) {
        MetricRecord r;
        r.step = step;
        r.name = name;
        r.value = value;
        out.push_back(std::move(r));
    };
    rec("psnr", psnr_db);
    rec("l1", l1);
    rec("rfid_proxy", rfid);
    rec("probe_acc", probe.accuracy);
    return out;
}

}  // namespace flowtok
