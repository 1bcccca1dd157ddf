#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowtok/tensor.hpp"

namespace flowtok {

// A learnable tensor plus its gradient and Adam moment buffers. Modules own
// these by value; trainers update them in place.
struct ParamTensor {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;

    ParamTensor() = default;
    ParamTensor(std::string n, Tensor init);

    void zero_grad();
};

using NodeId = int32_t;

// Reverse-mode tape. One Graph is built per training step: leaves are
// constants or bound ParamTensors, interior nodes carry their forward value
// and a backward closure. backward(root) may be called repeatedly on the same
// tape with different scalar roots (used for the gradient-norm rescale
// factors); each call recomputes node gradients from scratch.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    NodeId constant(Tensor v);
    // Binds p.value as a leaf. Trainable params receive gradients on
    // accumulate_param_grads(); re-binding the same ParamTensor returns the
    // existing node.
    NodeId param(ParamTensor& p, bool trainable = true);

    // ---- elementwise ----
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId x, double s);
    NodeId affine(NodeId x, double a, double b);  // a*x + b
    NodeId relu(NodeId x);
    NodeId leaky_relu(NodeId x, double slope);
    NodeId silu(NodeId x);
    NodeId sigmoid(NodeId x);

    // ---- broadcasts ----
    // v.shape must be a suffix of x.shape; v is tiled over the leading dims.
    NodeId add_bcast(NodeId x, NodeId v);
    // x (B,T,W) + v (B,W) tiled over T.
    NodeId add_mid_bcast(NodeId x, NodeId v);

    // ---- linear algebra ----
    NodeId matmul(NodeId a, NodeId b);  // (M,K) x (K,N)
    NodeId bmm(NodeId a, NodeId b);     // (B,M,K) x (B,K,N)

    // ---- shape ----
    NodeId reshape(NodeId x, std::vector<int> shape);
    NodeId permute(NodeId x, std::vector<int> dims);

    // ---- image ops (channel-last) ----
    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
    NodeId upsample2x(NodeId x);
    NodeId resize_bilinear(NodeId x, int out_h, int out_w);
    NodeId patchify(NodeId x, int p);  // (B,H,W,C) -> (B,H/p,W/p,p*p*C)

    // ---- normalization / attention pieces ----
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
    NodeId rms_norm(NodeId x, double eps = 1e-6);
    NodeId softmax(NodeId x);  // last dim

    // ---- reductions (double accumulation) ----
    NodeId mean_all(NodeId x);
    NodeId mean_abs_diff(NodeId a, NodeId b);
    NodeId mean_sq_diff(NodeId a, NodeId b);
    NodeId cross_entropy(NodeId logits, std::vector<int> labels);  // mean NLL

    // ---- embeddings / pooling ----
    NodeId gather_rows(NodeId table, std::vector<int> ids);
    NodeId mean_pool_hw(NodeId x);  // (B,H,W,C) -> (B,C)

    // ---- execution ----
    // Root must be a single-element tensor; seeds d(root)=1 and sweeps the
    // tape in reverse over the ancestors of root.
    void backward(NodeId root);
    // Adds the node gradients of the most recent backward() into the bound
    // trainable ParamTensors' .grad.
    void accumulate_param_grads();

    const Tensor& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    double scalar(NodeId id) const;
    // Gradient from the most recent backward(); zero tensor if the node was
    // not an ancestor of the root.
    const Tensor& grad(NodeId id) const;
    // L2 norm over the listed params' node gradients from the last backward().
    double bound_grad_norm(const std::vector<const ParamTensor*>& ps) const;

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<NodeId> parents;
        std::function<void(Graph&, NodeId)> bwd;
        ParamTensor* bound = nullptr;
        bool trainable = false;
        bool requires_grad = false;
        bool needed = false;
    };

    NodeId emit(Tensor value, std::vector<NodeId> parents,
                std::function<void(Graph&, NodeId)> bwd);
    // Gradient buffer of `id` if it participates in the current backward,
    // else nullptr (callers skip accumulation).
    Tensor* grad_if_needed(NodeId id);
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
    std::unordered_map<const ParamTensor*, NodeId> param_nodes_;
    mutable Tensor zero_like_;
};

}  // namespace flowtok
