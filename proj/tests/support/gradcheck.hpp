#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "flowtok/graph.hpp"

namespace flowtok::testing {

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

// Central finite differences against the tape gradients. `build` must
// reconstruct the scalar graph from the params' current values on every call.
// The denominator floor keeps near-zero gradients from amplifying FD noise:
// float32 loss evaluations carry ~1e-7 relative round-off, so an O(1) loss
// yields ~1e-5 absolute noise in the quotient at h=1e-2. With floor=1e-2 a
// sub-floor gradient is effectively held to |ana-fd| < tol*1e-2, the tightest
// absolute bound the noise supports.
inline GradCheckResult gradcheck(const std::function<NodeId(Graph&)>& build,
                                 const std::vector<ParamTensor*>& params,
                                 double h = 1e-2, double floor = 1e-2) {
    GradCheckResult res;
    {
        Graph g;
        NodeId root = build(g);
        g.backward(root);
        for (ParamTensor* p : params) p->zero_grad();
        g.accumulate_param_grads();
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (ParamTensor* p : params) analytic.push_back(p->grad);

    auto eval = [&]() {
        Graph g;
        return g.scalar(build(g));
    };
    for (size_t pi = 0; pi < params.size(); ++pi) {
        ParamTensor& p = *params[pi];
        for (size_t i = 0; i < p.value.v.size(); ++i) {
            const float old = p.value.v[i];
            p.value.v[i] = old + static_cast<float>(h);
            const float vp = p.value.v[i];
            const double fp = eval();
            p.value.v[i] = old - static_cast<float>(h);
            const float vm = p.value.v[i];
            const double fm = eval();
            p.value.v[i] = old;
            const double he = (static_cast<double>(vp) - vm) / 2.0;
            const double fd = (fp - fm) / (2.0 * he);
            const double ana = analytic[pi].v[i];
            const double rel = std::abs(ana - fd) / std::max({floor, std::abs(ana), std::abs(fd)});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace flowtok::testing
