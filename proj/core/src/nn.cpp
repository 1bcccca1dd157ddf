#include "flowtok/nn.hpp"

#include <cmath>

#include "flowtok/errors.hpp"

namespace flowtok {

Tensor normal_init(const std::vector<int>& shape, double stddev, uint64_t seed,
                   const std::string& name) {
    Tensor t = Tensor::zeros(shape);
    Rng rng = Rng::derive(seed, fnv1a_str(name));
    rng.fill_normal(t, 0.0, stddev);
    return t;
}

Tensor fanin_init(const std::vector<int>& shape, int fan_in, double gain, uint64_t seed,
                  const std::string& name) {
    if (fan_in <= 0) throw ConfigError("fanin_init: fan_in must be positive");
    return normal_init(shape, gain / std::sqrt(static_cast<double>(fan_in)), seed, name);
}

size_t param_count(const std::vector<ParamTensor*>& ps) {
    size_t n = 0;
    for (const ParamTensor* p : ps) n += p->value.v.size();
    return n;
}

void zero_grads(const std::vector<ParamTensor*>& ps) {
    for (ParamTensor* p : ps) p->zero_grad();
}

uint64_t params_checksum(const std::vector<ParamTensor*>& ps) {
    uint64_t h = 1469598103934665603ull;
    for (const ParamTensor* p : ps) {
        h = fnv1a_str(p->name, h);
        h = fnv1a(p->value.v.data(), p->value.v.size() * sizeof(float), h);
    }
    return h;
}

void copy_param_values(const std::vector<ParamTensor*>& dst,
                       const std::vector<ParamTensor*>& src) {
    if (dst.size() != src.size())
        throw ShapeError("copy_param_values: param list sizes differ");
    for (size_t i = 0; i < dst.size(); ++i) {
        require_same_shape(dst[i]->value, src[i]->value, "copy_param_values");
        dst[i]->value.v = src[i]->value.v;
    }
}

void ema_update(const std::vector<ParamTensor*>& shadow,
                const std::vector<ParamTensor*>& src, double decay) {
    if (shadow.size() != src.size()) throw ShapeError("ema_update: param list sizes differ");
    const float d = static_cast<float>(decay);
    const float omd = static_cast<float>(1.0 - decay);
    for (size_t i = 0; i < shadow.size(); ++i) {
        require_same_shape(shadow[i]->value, src[i]->value, "ema_update");
        float* s = shadow[i]->value.v.data();
        const float* x = src[i]->value.v.data();
        const size_t n = shadow[i]->value.v.size();
        for (size_t j = 0; j < n; ++j) s[j] = d * s[j] + omd * x[j];
    }
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0) throw ConfigError("Adam: lr must be positive");
}

void Adam::step(const std::vector<ParamTensor*>& ps) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (ParamTensor* p : ps) {
        float* w = p->value.v.data();
        float* g = p->grad.v.data();
        float* m = p->adam_m.v.data();
        float* v = p->adam_v.v.data();
        const size_t n = p->value.v.size();
        for (size_t i = 0; i < n; ++i) {
            if (!std::isfinite(g[i]))
                throw NonFiniteLoss("Adam: non-finite gradient in " + p->name);
            m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
            v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] = static_cast<float>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

void Adam::reset_moments(const std::vector<ParamTensor*>& ps) {
    t_ = 0;
    for (ParamTensor* p : ps) {
        std::fill(p->adam_m.v.begin(), p->adam_m.v.end(), 0.0f);
        std::fill(p->adam_v.v.begin(), p->adam_v.v.end(), 0.0f);
    }
}

}  // namespace flowtok
