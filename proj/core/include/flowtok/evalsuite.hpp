#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "flowtok/datamodel.hpp"
#include "flowtok/encoder.hpp"
#include "flowtok/tensor.hpp"

namespace flowtok {

struct ProbeResult {
    double accuracy = 0.0;
    double chance_level = 0.0;
    int n_train = 0;
    int n_test = 0;
};

// 10*log10(1/MSE) for images in [0,1]; capped at 100 dB when MSE < 1e-10.
double psnr(const Tensor& x, const Tensor& xhat);

// Mean and covariance of row-feature matrices (N, m).
struct FeatureStats {
    int dim = 0;
    int64_t count = 0;
    std::vector<double> mean;  // (m)
    std::vector<double> cov;   // (m*m) row-major
};

FeatureStats feature_stats(const Tensor& pooled_rows);

// ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca Cb)^{1/2}), with eI (e = 1e-6) added
// to both covariances before the square root.
double frechet_from_stats(const FeatureStats& a, const FeatureStats& b);

// Mean-pooled feat_net features of both image sets (B,H,W,3 tensors), then
// the stats distance above. Requires >= 2 images per set.
double frechet_feature_distance(const ToyEncoder& feat_net, const Tensor& set_a,
                                const Tensor& set_b);

// Mean-pooled feature rows (N, dim) of an image set under feat_net.
Tensor pooled_features(const ToyEncoder& feat_net, const Tensor& images);

// Multinomial logistic regression (L2 1e-3, deterministic full-batch descent)
// on spatially mean-pooled latents, stratified 80/20 split by split_seed.
ProbeResult linear_probe_accuracy(const std::vector<LatentBatch>& latents,
                                  const std::vector<int>& labels, uint64_t split_seed);

// Tokenizer under test, abstracted so mocks and live bundles evaluate alike.
struct TokenizerEvalHooks {
    std::function<LatentBatch(const ImageBatch&)> tokenize;
    std::function<ImageBatch(const LatentBatch&)> decode;
    const ToyEncoder* feat_net = nullptr;  // shared measurement space
};

// Reconstruction metrics over ds plus a probe on the tokenize outputs.
// Returns records named exactly psnr, l1, rfid_proxy, probe_acc.
std::vector<MetricRecord> evaluate_tokenizer_hooks(const TokenizerEvalHooks& hooks,
                                                   const Dataset& ds, int64_t step,
                                                   uint64_t probe_seed);

}  // namespace flowtok
