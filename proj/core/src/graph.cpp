#include "flowtok/graph.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "flowtok/errors.hpp"

namespace flowtok {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using ConstMapM = Eigen::Map<const MatRM>;

ParamTensor::ParamTensor(std::string n, Tensor init)
    : name(std::move(n)),
      value(std::move(init)),
      grad(Tensor::zeros(value.shape)),
      adam_m(Tensor::zeros(value.shape)),
      adam_v(Tensor::zeros(value.shape)) {}

void ParamTensor::zero_grad() {
    std::fill(grad.v.begin(), grad.v.end(), 0.0f);
}

NodeId Graph::emit(Tensor value, std::vector<NodeId> parents,
                   std::function<void(Graph&, NodeId)> bwd) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.bwd = std::move(bwd);
    for (NodeId p : n.parents) {
        if (p < 0 || static_cast<size_t>(p) >= nodes_.size())
            throw ConfigError("graph: parent node id out of range");
        if (nodes_[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor* Graph::grad_if_needed(NodeId id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    return n.needed ? &n.grad : nullptr;
}

NodeId Graph::constant(Tensor v) {
    return emit(std::move(v), {}, nullptr);
}

NodeId Graph::param(ParamTensor& p, bool trainable) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.value = p.value;
    n.bound = &p;
    n.trainable = trainable;
    n.requires_grad = trainable;
    nodes_.push_back(std::move(n));
    NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    param_nodes_.emplace(&p, id);
    return id;
}

double Graph::scalar(NodeId id) const {
    const Tensor& t = val(id);
    if (t.numel() != 1) throw ShapeError("graph: scalar() on tensor with shape " + t.shape_str());
    return static_cast<double>(t.v[0]);
}

const Tensor& Graph::grad(NodeId id) const {
    const Node& n = node(id);
    if (n.needed) return n.grad;
    zero_like_ = Tensor::zeros(n.value.shape);
    return zero_like_;
}

double Graph::bound_grad_norm(const std::vector<const ParamTensor*>& ps) const {
    double acc = 0.0;
    for (const ParamTensor* p : ps) {
        auto it = param_nodes_.find(p);
        if (it == param_nodes_.end()) continue;
        const Node& n = node(it->second);
        if (!n.needed) continue;
        for (float g : n.grad.v) acc += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(acc);
}

void Graph::backward(NodeId root) {
    if (root < 0 || static_cast<size_t>(root) >= nodes_.size())
        throw ConfigError("graph: backward root out of range");
    if (node(root).value.numel() != 1)
        throw ShapeError("graph: backward root must be scalar, got " + node(root).value.shape_str());

    for (Node& n : nodes_) {
        n.needed = false;
        n.grad.shape.clear();
        n.grad.v.clear();
    }
    if (!node(root).requires_grad) return;

    std::vector<NodeId> stack{root};
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.needed) continue;
        n.needed = true;
        for (NodeId p : n.parents)
            if (nodes_[static_cast<size_t>(p)].requires_grad && !nodes_[static_cast<size_t>(p)].needed)
                stack.push_back(p);
    }
    for (Node& n : nodes_)
        if (n.needed) n.grad = Tensor::zeros(n.value.shape);

    nodes_[static_cast<size_t>(root)].grad.v[0] = 1.0f;
    for (NodeId id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.needed && n.bwd) n.bwd(*this, id);
    }
}

void Graph::accumulate_param_grads() {
    for (auto& [p, id] : param_nodes_) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.trainable || !n.needed) continue;
        Tensor& dst = n.bound->grad;
        for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += n.grad.v[i];
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

NodeId Graph::add(NodeId a, NodeId b) {
    require_same_shape(val(a), val(b), "add");
    Tensor out = val(a);
    const Tensor& vb = val(b);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += vb.v[i];
    return emit(std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        if (Tensor* ga = g.grad_if_needed(a))
            for (size_t i = 0; i < gc.v.size(); ++i) ga->v[i] += gc.v[i];
        if (Tensor* gb = g.grad_if_needed(b))
            for (size_t i = 0; i < gc.v.size(); ++i) gb->v[i] += gc.v[i];
    });
}

NodeId Graph::sub(NodeId a, NodeId b) {
    require_same_shape(val(a), val(b), "sub");
    Tensor out = val(a);
    const Tensor& vb = val(b);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= vb.v[i];
    return emit(std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        if (Tensor* ga = g.grad_if_needed(a))
            for (size_t i = 0; i < gc.v.size(); ++i) ga->v[i] += gc.v[i];
        if (Tensor* gb = g.grad_if_needed(b))
            for (size_t i = 0; i < gc.v.size(); ++i) gb->v[i] -= gc.v[i];
    });
}

NodeId Graph::mul(NodeId a, NodeId b) {
    require_same_shape(val(a), val(b), "mul");
    Tensor out = val(a);
    const Tensor& vb = val(b);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= vb.v[i];
    return emit(std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        const Tensor& va = g.val(a);
        const Tensor& vb2 = g.val(b);
        if (Tensor* ga = g.grad_if_needed(a))
            for (size_t i = 0; i < gc.v.size(); ++i) ga->v[i] += gc.v[i] * vb2.v[i];
        if (Tensor* gb = g.grad_if_needed(b))
            for (size_t i = 0; i < gc.v.size(); ++i) gb->v[i] += gc.v[i] * va.v[i];
    });
}

NodeId Graph::scale(NodeId x, double s) { return affine(x, s, 0.0); }

NodeId Graph::affine(NodeId x, double a, double b) {
    Tensor out = val(x);
    const float fa = static_cast<float>(a);
    const float fb = static_cast<float>(b);
    for (float& v : out.v) v = fa * v + fb;
    return emit(std::move(out), {x}, [x, fa](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        if (Tensor* gx = g.grad_if_needed(x))
            for (size_t i = 0; i < gc.v.size(); ++i) gx->v[i] += fa * gc.v[i];
    });
}

NodeId Graph::relu(NodeId x) {
    Tensor out = val(x);
    for (float& v : out.v) v = v > 0.0f ? v : 0.0f;
    return emit(std::move(out), {x}, [x](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        const Tensor& vx = g.val(x);
        if (Tensor* gx = g.grad_if_needed(x))
            for (size_t i = 0; i < gc.v.size(); ++i)
                if (vx.v[i] > 0.0f) gx->v[i] += gc.v[i];
    });
}

NodeId Graph::leaky_relu(NodeId x, double slope) {
    Tensor out = val(x);
    const float s = static_cast<float>(slope);
    for (float& v : out.v) v = v > 0.0f ? v : s * v;
    return emit(std::move(out), {x}, [x, s](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        const Tensor& vx = g.val(x);
        if (Tensor* gx = g.grad_if_needed(x))
            for (size_t i = 0; i < gc.v.size(); ++i)
                gx->v[i] += (vx.v[i] > 0.0f ? 1.0f : s) * gc.v[i];
    });
}

static inline float sigf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

NodeId Graph::silu(NodeId x) {
    Tensor out = val(x);
    for (float& v : out.v) v = v * sigf(v);
    return emit(std::move(out), {x}, [x](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        const Tensor& vx = g.val(x);
        if (Tensor* gx = g.grad_if_needed(x))
            for (size_t i = 0; i < gc.v.size(); ++i) {
                float s = sigf(vx.v[i]);
                gx->v[i] += gc.v[i] * (s + vx.v[i] * s * (1.0f - s));
            }
    });
}

NodeId Graph::sigmoid(NodeId x) {
    Tensor out = val(x);
    for (float& v : out.v) v = sigf(v);
    return emit(std::move(out), {x}, [x](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        const Tensor& y = g.val(self);
        if (Tensor* gx = g.grad_if_needed(x))
            for (size_t i = 0; i < gc.v.size(); ++i)
                gx->v[i] += gc.v[i] * y.v[i] * (1.0f - y.v[i]);
    });
}

// ---------------------------------------------------------------------------
// broadcasts
// ---------------------------------------------------------------------------

NodeId Graph::add_bcast(NodeId x, NodeId v) {
    const Tensor& vx = val(x);
    const Tensor& vv = val(v);
    if (vv.shape.size() > vx.shape.size())
        throw ShapeError("add_bcast: v rank exceeds x rank");
    size_t off = vx.shape.size() - vv.shape.size();
    for (size_t i = 0; i < vv.shape.size(); ++i)
        if (vv.shape[i] != vx.shape[off + i])
            throw ShapeError("add_bcast: " + vv.shape_str() + " is not a suffix of " + vx.shape_str());
    Tensor out = vx;
    const size_t vn = vv.v.size();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += vv.v[i % vn];
    return emit(std::move(out), {x, v}, [x, v, vn](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        if (Tensor* gx = g.grad_if_needed(x))
            for (size_t i = 0; i < gc.v.size(); ++i) gx->v[i] += gc.v[i];
        if (Tensor* gv = g.grad_if_needed(v)) {
            std::vector<double> acc(vn, 0.0);
            for (size_t i = 0; i < gc.v.size(); ++i) acc[i % vn] += gc.v[i];
            for (size_t j = 0; j < vn; ++j) gv->v[j] += static_cast<float>(acc[j]);
        }
    });
}

NodeId Graph::add_mid_bcast(NodeId x, NodeId v) {
    const Tensor& vx = val(x);
    const Tensor& vv = val(v);
    if (vx.shape.size() != 3 || vv.shape.size() != 2 || vx.shape[0] != vv.shape[0] ||
        vx.shape[2] != vv.shape[1])
        throw ShapeError("add_mid_bcast: want (B,T,W)+(B,W), got " + vx.shape_str() + "+" +
                         vv.shape_str());
    const int B = vx.shape[0], T = vx.shape[1], W = vx.shape[2];
    Tensor out = vx;
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
            for (int w = 0; w < W; ++w)
                out.v[(static_cast<size_t>(b) * T + t) * W + w] += vv.v[static_cast<size_t>(b) * W + w];
    return emit(std::move(out), {x, v}, [x, v, B, T, W](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        if (Tensor* gx = g.grad_if_needed(x))
            for (size_t i = 0; i < gc.v.size(); ++i) gx->v[i] += gc.v[i];
        if (Tensor* gv = g.grad_if_needed(v))
            for (int b = 0; b < B; ++b)
                for (int w = 0; w < W; ++w) {
                    double acc = 0.0;
                    for (int t = 0; t < T; ++t)
                        acc += gc.v[(static_cast<size_t>(b) * T + t) * W + w];
                    gv->v[static_cast<size_t>(b) * W + w] += static_cast<float>(acc);
                }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (va.shape.size() != 2 || vb.shape.size() != 2 || va.shape[1] != vb.shape[0])
        throw ShapeError("matmul: incompatible shapes " + va.shape_str() + " x " + vb.shape_str());
    const int M = va.shape[0], K = va.shape[1], N = vb.shape[1];
    Tensor out = Tensor::zeros({M, N});
    ConstMapM A(va.v.data(), M, K), B(vb.v.data(), K, N);
    MapM C(out.v.data(), M, N);
    C.noalias() = A * B;
    return emit(std::move(out), {a, b}, [a, b, M, K, N](Graph& g, NodeId self) {
        ConstMapM GC(g.node(self).grad.v.data(), M, N);
        ConstMapM A2(g.val(a).v.data(), M, K), B2(g.val(b).v.data(), K, N);
        if (Tensor* ga = g.grad_if_needed(a)) {
            MapM GA(ga->v.data(), M, K);
            GA.noalias() += GC * B2.transpose();
        }
        if (Tensor* gb = g.grad_if_needed(b)) {
            MapM GB(gb->v.data(), K, N);
            GB.noalias() += A2.transpose() * GC;
        }
    });
}

NodeId Graph::bmm(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (va.shape.size() != 3 || vb.shape.size() != 3 || va.shape[0] != vb.shape[0] ||
        va.shape[2] != vb.shape[1])
        throw ShapeError("bmm: incompatible shapes " + va.shape_str() + " x " + vb.shape_str());
    const int Bn = va.shape[0], M = va.shape[1], K = va.shape[2], N = vb.shape[2];
    Tensor out = Tensor::zeros({Bn, M, N});
    for (int i = 0; i < Bn; ++i) {
        ConstMapM A(va.v.data() + static_cast<size_t>(i) * M * K, M, K);
        ConstMapM B(vb.v.data() + static_cast<size_t>(i) * K * N, K, N);
        MapM C(out.v.data() + static_cast<size_t>(i) * M * N, M, N);
        C.noalias() = A * B;
    }
    return emit(std::move(out), {a, b}, [a, b, Bn, M, K, N](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        Tensor* ga = g.grad_if_needed(a);
        Tensor* gb = g.grad_if_needed(b);
        for (int i = 0; i < Bn; ++i) {
            ConstMapM GC(gc.v.data() + static_cast<size_t>(i) * M * N, M, N);
            ConstMapM A(g.val(a).v.data() + static_cast<size_t>(i) * M * K, M, K);
            ConstMapM B(g.val(b).v.data() + static_cast<size_t>(i) * K * N, K, N);
            if (ga) {
                MapM GA(ga->v.data() + static_cast<size_t>(i) * M * K, M, K);
                GA.noalias() += GC * B.transpose();
            }
            if (gb) {
                MapM GB(gb->v.data() + static_cast<size_t>(i) * K * N, K, N);
                GB.noalias() += A.transpose() * GC;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

NodeId Graph::reshape(NodeId x, std::vector<int> shape) {
    const Tensor& vx = val(x);
    if (Tensor::numel_of(shape) != vx.numel())
        throw ShapeError("reshape: cannot view " + vx.shape_str() + " as " + shape_str(shape));
    Tensor out;
    out.shape = shape;
    out.v = vx.v;
    return emit(std::move(out), {x}, [x](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        if (Tensor* gx = g.grad_if_needed(x))
            for (size_t i = 0; i < gc.v.size(); ++i) gx->v[i] += gc.v[i];
    });
}

static std::vector<size_t> strides_of(const std::vector<int>& shape) {
    std::vector<size_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * static_cast<size_t>(shape[static_cast<size_t>(i) + 1]);
    return st;
}

NodeId Graph::permute(NodeId x, std::vector<int> dims) {
    const Tensor& vx = val(x);
    const size_t r = vx.shape.size();
    if (dims.size() != r) throw ShapeError("permute: dims rank mismatch for " + vx.shape_str());
    std::vector<char> seen(r, 0);
    for (int d : dims) {
        if (d < 0 || static_cast<size_t>(d) >= r || seen[static_cast<size_t>(d)])
            throw ShapeError("permute: invalid dims");
        seen[static_cast<size_t>(d)] = 1;
    }
    std::vector<int> oshape(r);
    for (size_t i = 0; i < r; ++i) oshape[i] = vx.shape[static_cast<size_t>(dims[i])];
    const auto ist = strides_of(vx.shape);
    Tensor out = Tensor::zeros(oshape);
    // walk output in order, decoding the multi-index into a source offset
    std::vector<int> idx(r, 0);
    const size_t n = out.v.size();
    // source stride per output axis
    std::vector<size_t> sst(r);
    for (size_t i = 0; i < r; ++i) sst[i] = ist[static_cast<size_t>(dims[i])];
    std::vector<size_t> src_off(n);
    size_t off = 0;
    for (size_t lin = 0; lin < n; ++lin) {
        out.v[lin] = vx.v[off];
        src_off[lin] = off;
        for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
            size_t a = static_cast<size_t>(ax);
            ++idx[a];
            off += sst[a];
            if (idx[a] < oshape[a]) break;
            off -= sst[a] * static_cast<size_t>(oshape[a]);
            idx[a] = 0;
        }
    }
    return emit(std::move(out), {x},
                [x, src_off = std::move(src_off)](Graph& g, NodeId self) {
                    const Tensor& gc = g.node(self).grad;
                    if (Tensor* gx = g.grad_if_needed(x))
                        for (size_t lin = 0; lin < gc.v.size(); ++lin)
                            gx->v[src_off[lin]] += gc.v[lin];
                });
}

// ---------------------------------------------------------------------------
// image ops (channel-last)
// ---------------------------------------------------------------------------

namespace {
struct ConvDims {
    int B, H, W, Ci, kh, kw, Co, Ho, Wo, stride, pad;
};

void im2col(const float* x, const ConvDims& d, int b, float* col) {
    // col is (Ho*Wo, kh*kw*Ci)
    const size_t plane = static_cast<size_t>(d.H) * d.W * d.Ci;
    const float* xb = x + static_cast<size_t>(b) * plane;
    size_t ci_bytes = static_cast<size_t>(d.Ci) * sizeof(float);
    for (int oy = 0; oy < d.Ho; ++oy)
        for (int ox = 0; ox < d.Wo; ++ox) {
            float* row = col + (static_cast<size_t>(oy) * d.Wo + ox) * d.kh * d.kw * d.Ci;
            for (int ky = 0; ky < d.kh; ++ky) {
                int iy = oy * d.stride - d.pad + ky;
                for (int kx = 0; kx < d.kw; ++kx) {
                    int ix = ox * d.stride - d.pad + kx;
                    float* dst = row + (static_cast<size_t>(ky) * d.kw + kx) * d.Ci;
                    if (iy < 0 || iy >= d.H || ix < 0 || ix >= d.W)
                        std::memset(dst, 0, ci_bytes);
                    else
                        std::memcpy(dst, xb + (static_cast<size_t>(iy) * d.W + ix) * d.Ci, ci_bytes);
                }
            }
        }
}

void col2im_add(const float* col, const ConvDims& d, int b, float* gx) {
    const size_t plane = static_cast<size_t>(d.H) * d.W * d.Ci;
    float* gb = gx + static_cast<size_t>(b) * plane;
    for (int oy = 0; oy < d.Ho; ++oy)
        for (int ox = 0; ox < d.Wo; ++ox) {
            const float* row = col + (static_cast<size_t>(oy) * d.Wo + ox) * d.kh * d.kw * d.Ci;
            for (int ky = 0; ky < d.kh; ++ky) {
                int iy = oy * d.stride - d.pad + ky;
                if (iy < 0 || iy >= d.H) continue;
                for (int kx = 0; kx < d.kw; ++kx) {
                    int ix = ox * d.stride - d.pad + kx;
                    if (ix < 0 || ix >= d.W) continue;
                    const float* src = row + (static_cast<size_t>(ky) * d.kw + kx) * d.Ci;
                    float* dst = gb + (static_cast<size_t>(iy) * d.W + ix) * d.Ci;
                    for (int c = 0; c < d.Ci; ++c) dst[c] += src[c];
                }
            }
        }
}
}  // namespace

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const Tensor& vb = val(b);
    if (vx.shape.size() != 4) throw ShapeError("conv2d: input must be (B,H,W,C), got " + vx.shape_str());
    if (vw.shape.size() != 4) throw ShapeError("conv2d: weight must be (kh,kw,Ci,Co), got " + vw.shape_str());
    if (stride < 1 || pad < 0) throw ConfigError("conv2d: invalid stride/pad");
    ConvDims d;
    d.B = vx.shape[0]; d.H = vx.shape[1]; d.W = vx.shape[2]; d.Ci = vx.shape[3];
    d.kh = vw.shape[0]; d.kw = vw.shape[1]; d.Co = vw.shape[3];
    d.stride = stride; d.pad = pad;
    if (vw.shape[2] != d.Ci)
        throw ShapeError("conv2d: channel mismatch " + vx.shape_str() + " vs " + vw.shape_str());
    if (vb.shape != std::vector<int>{d.Co})
        throw ShapeError("conv2d: bias must be (Co), got " + vb.shape_str());
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    if (d.Ho < 1 || d.Wo < 1) throw ShapeError("conv2d: output would be empty for " + vx.shape_str());

    const int rows = d.Ho * d.Wo, cols = d.kh * d.kw * d.Ci;
    Tensor out = Tensor::zeros({d.B, d.Ho, d.Wo, d.Co});
    std::vector<float> col(static_cast<size_t>(rows) * cols);
    ConstMapM Wm(vw.v.data(), cols, d.Co);
    for (int bi = 0; bi < d.B; ++bi) {
        im2col(vx.v.data(), d, bi, col.data());
        ConstMapM C(col.data(), rows, cols);
        MapM O(out.v.data() + static_cast<size_t>(bi) * rows * d.Co, rows, d.Co);
        O.noalias() = C * Wm;
        O.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(vb.v.data(), d.Co);
    }
    return emit(std::move(out), {x, w, b}, [x, w, b, d, rows, cols](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        Tensor* gx = g.grad_if_needed(x);
        Tensor* gw = g.grad_if_needed(w);
        Tensor* gb = g.grad_if_needed(b);
        std::vector<float> col(static_cast<size_t>(rows) * cols);
        std::vector<float> dcol(gx ? col.size() : 0);
        ConstMapM Wm(g.val(w).v.data(), cols, d.Co);
        std::vector<double> db(gb ? static_cast<size_t>(d.Co) : 0, 0.0);
        for (int bi = 0; bi < d.B; ++bi) {
            ConstMapM GO(gc.v.data() + static_cast<size_t>(bi) * rows * d.Co, rows, d.Co);
            if (gw || gx) im2col(g.val(x).v.data(), d, bi, col.data());
            if (gw) {
                ConstMapM C(col.data(), rows, cols);
                MapM GW(gw->v.data(), cols, d.Co);
                GW.noalias() += C.transpose() * GO;
            }
            if (gx) {
                MapM DC(dcol.data(), rows, cols);
                DC.noalias() = GO * Wm.transpose();
                col2im_add(dcol.data(), d, bi, gx->v.data());
            }
            if (gb)
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < d.Co; ++c)
                        db[static_cast<size_t>(c)] += GO(r, c);
        }
        if (gb)
            for (int c = 0; c < d.Co; ++c) gb->v[static_cast<size_t>(c)] += static_cast<float>(db[static_cast<size_t>(c)]);
    });
}

NodeId Graph::upsample2x(NodeId x) {
    const Tensor& vx = val(x);
    if (vx.shape.size() != 4) throw ShapeError("upsample2x: input must be (B,H,W,C), got " + vx.shape_str());
    const int B = vx.shape[0], H = vx.shape[1], W = vx.shape[2], C = vx.shape[3];
    Tensor out = Tensor::zeros({B, 2 * H, 2 * W, C});
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < 2 * H; ++y)
            for (int xw = 0; xw < 2 * W; ++xw) {
                const float* src = vx.v.data() + ((static_cast<size_t>(b) * H + y / 2) * W + xw / 2) * C;
                float* dst = out.v.data() + ((static_cast<size_t>(b) * 2 * H + y) * 2 * W + xw) * C;
                std::memcpy(dst, src, static_cast<size_t>(C) * sizeof(float));
            }
    return emit(std::move(out), {x}, [x, B, H, W, C](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        if (Tensor* gx = g.grad_if_needed(x))
            for (int b = 0; b < B; ++b)
                for (int y = 0; y < 2 * H; ++y)
                    for (int xw = 0; xw < 2 * W; ++xw) {
                        const float* src = gc.v.data() + ((static_cast<size_t>(b) * 2 * H + y) * 2 * W + xw) * C;
                        float* dst = gx->v.data() + ((static_cast<size_t>(b) * H + y / 2) * W + xw / 2) * C;
                        for (int c = 0; c < C; ++c) dst[c] += src[c];
                    }
    });
}

NodeId Graph::resize_bilinear(NodeId x, int out_h, int out_w) {
    const Tensor& vx = val(x);
    if (vx.shape.size() != 4) throw ShapeError("resize_bilinear: input must be (B,H,W,C), got " + vx.shape_str());
    if (out_h < 1 || out_w < 1) throw ConfigError("resize_bilinear: invalid output size");
    const int B = vx.shape[0], H = vx.shape[1], W = vx.shape[2], C = vx.shape[3];
    Tensor out = Tensor::zeros({B, out_h, out_w, C});
    // per-output-pixel source corners and lerp weights, shared across batch
    struct Tap { int y0, y1, x0, x1; float wy, wx; };
    std::vector<Tap> taps(static_cast<size_t>(out_h) * out_w);
    const float sy = static_cast<float>(H) / static_cast<float>(out_h);
    const float sx = static_cast<float>(W) / static_cast<float>(out_w);
    for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
            float fy = (static_cast<float>(oy) + 0.5f) * sy - 0.5f;
            float fx = (static_cast<float>(ox) + 0.5f) * sx - 0.5f;
            fy = std::min(std::max(fy, 0.0f), static_cast<float>(H - 1));
            fx = std::min(std::max(fx, 0.0f), static_cast<float>(W - 1));
            Tap& t = taps[static_cast<size_t>(oy) * out_w + ox];
            t.y0 = static_cast<int>(fy);
            t.x0 = static_cast<int>(fx);
            t.y1 = std::min(t.y0 + 1, H - 1);
            t.x1 = std::min(t.x0 + 1, W - 1);
            t.wy = fy - static_cast<float>(t.y0);
            t.wx = fx - static_cast<float>(t.x0);
        }
    for (int b = 0; b < B; ++b) {
        const float* xb = vx.v.data() + static_cast<size_t>(b) * H * W * C;
        float* ob = out.v.data() + static_cast<size_t>(b) * out_h * out_w * C;
        for (size_t p = 0; p < taps.size(); ++p) {
            const Tap& t = taps[p];
            const float w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx;
            const float w10 = t.wy * (1 - t.wx), w11 = t.wy * t.wx;
            const float* p00 = xb + (static_cast<size_t>(t.y0) * W + t.x0) * C;
            const float* p01 = xb + (static_cast<size_t>(t.y0) * W + t.x1) * C;
            const float* p10 = xb + (static_cast<size_t>(t.y1) * W + t.x0) * C;
            const float* p11 = xb + (static_cast<size_t>(t.y1) * W + t.x1) * C;
            float* dst = ob + p * C;
            for (int c = 0; c < C; ++c)
                dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
        }
    }
    return emit(std::move(out), {x},
                [x, B, H, W, C, out_h, out_w, taps = std::move(taps)](Graph& g, NodeId self) {
                    const Tensor& gc = g.node(self).grad;
                    Tensor* gx = g.grad_if_needed(x);
                    if (!gx) return;
                    for (int b = 0; b < B; ++b) {
                        float* xb = gx->v.data() + static_cast<size_t>(b) * H * W * C;
                        const float* ob = gc.v.data() + static_cast<size_t>(b) * out_h * out_w * C;
                        for (size_t p = 0; p < taps.size(); ++p) {
                            const auto& t = taps[p];
                            const float w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx;
                            const float w10 = t.wy * (1 - t.wx), w11 = t.wy * t.wx;
                            const float* src = ob + p * C;
                            float* p00 = xb + (static_cast<size_t>(t.y0) * W + t.x0) * C;
                            float* p01 = xb + (static_cast<size_t>(t.y0) * W + t.x1) * C;
                            float* p10 = xb + (static_cast<size_t>(t.y1) * W + t.x0) * C;
                            float* p11 = xb + (static_cast<size_t>(t.y1) * W + t.x1) * C;
                            for (int c = 0; c < C; ++c) {
                                p00[c] += w00 * src[c];
                                p01[c] += w01 * src[c];
                                p10[c] += w10 * src[c];
                                p11[c] += w11 * src[c];
                            }
                        }
                    }
                });
}

NodeId Graph::patchify(NodeId x, int p) {
    const Tensor& vx = val(x);
    if (vx.shape.size() != 4) throw ShapeError("patchify: input must be (B,H,W,C), got " + vx.shape_str());
    const int B = vx.shape[0], H = vx.shape[1], W = vx.shape[2], C = vx.shape[3];
    if (p < 1 || H % p != 0 || W % p != 0)
        throw ShapeError("patchify: patch size " + std::to_string(p) + " does not divide " + vx.shape_str());
    const int Gh = H / p, Gw = W / p;
    Tensor out = Tensor::zeros({B, Gh, Gw, p * p * C});
    for (int b = 0; b < B; ++b)
        for (int gy = 0; gy < Gh; ++gy)
            for (int gx = 0; gx < Gw; ++gx)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px) {
                        const float* src =
                            vx.v.data() + ((static_cast<size_t>(b) * H + gy * p + py) * W + gx * p + px) * C;
                        float* dst = out.v.data() +
                                     ((static_cast<size_t>(b) * Gh + gy) * Gw + gx) * (p * p * C) +
                                     (static_cast<size_t>(py) * p + px) * C;
                        std::memcpy(dst, src, static_cast<size_t>(C) * sizeof(float));
                    }
    return emit(std::move(out), {x}, [x, B, H, W, C, p](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        Tensor* gx0 = g.grad_if_needed(x);
        if (!gx0) return;
        const int Gh = H / p, Gw = W / p;
        for (int b = 0; b < B; ++b)
            for (int gy = 0; gy < Gh; ++gy)
                for (int gx = 0; gx < Gw; ++gx)
                    for (int py = 0; py < p; ++py)
                        for (int px = 0; px < p; ++px) {
                            float* dst = gx0->v.data() +
                                         ((static_cast<size_t>(b) * H + gy * p + py) * W + gx * p + px) * C;
                            const float* src = gc.v.data() +
                                               ((static_cast<size_t>(b) * Gh + gy) * Gw + gx) * (p * p * C) +
                                               (static_cast<size_t>(py) * p + px) * C;
                            for (int c = 0; c < C; ++c) dst[c] += src[c];
                        }
    });
}

// ---------------------------------------------------------------------------
// normalization / attention pieces
// ---------------------------------------------------------------------------

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
    const Tensor& vx = val(x);
    if (vx.shape.empty()) throw ShapeError("layer_norm: scalar input");
    const int D = vx.shape.back();
    const size_t R = vx.v.size() / static_cast<size_t>(D);
    const Tensor& vg = val(gain);
    const Tensor& vb = val(bias);
    if (vg.shape != std::vector<int>{D} || vb.shape != std::vector<int>{D})
        throw ShapeError("layer_norm: gain/bias must be (" + std::to_string(D) + ")");
    Tensor out = Tensor::zeros(vx.shape);
    std::vector<float> mu(R), istd(R);
    for (size_t r = 0; r < R; ++r) {
        const float* row = vx.v.data() + r * static_cast<size_t>(D);
        double m = 0.0;
        for (int i = 0; i < D; ++i) m += row[i];
        m /= D;
        double var = 0.0;
        for (int i = 0; i < D; ++i) {
            double d = row[i] - m;
            var += d * d;
        }
        var /= D;
        mu[r] = static_cast<float>(m);
        istd[r] = static_cast<float>(1.0 / std::sqrt(var + eps));
        float* orow = out.v.data() + r * static_cast<size_t>(D);
        for (int i = 0; i < D; ++i)
            orow[i] = (row[i] - mu[r]) * istd[r] * vg.v[static_cast<size_t>(i)] + vb.v[static_cast<size_t>(i)];
    }
    return emit(std::move(out), {x, gain, bias},
                [x, gain, bias, D, R, mu = std::move(mu), istd = std::move(istd)](Graph& g, NodeId self) {
                    const Tensor& gc = g.node(self).grad;
                    const Tensor& vx2 = g.val(x);
                    const Tensor& vg2 = g.val(gain);
                    Tensor* gx = g.grad_if_needed(x);
                    Tensor* gg = g.grad_if_needed(gain);
                    Tensor* gb = g.grad_if_needed(bias);
                    std::vector<double> dg(gg ? static_cast<size_t>(D) : 0, 0.0);
                    std::vector<double> db(gb ? static_cast<size_t>(D) : 0, 0.0);
                    for (size_t r = 0; r < R; ++r) {
                        const float* row = vx2.v.data() + r * static_cast<size_t>(D);
                        const float* gr = gc.v.data() + r * static_cast<size_t>(D);
                        if (gg || gb)
                            for (int i = 0; i < D; ++i) {
                                float xh = (row[i] - mu[r]) * istd[r];
                                if (gg) dg[static_cast<size_t>(i)] += static_cast<double>(gr[i]) * xh;
                                if (gb) db[static_cast<size_t>(i)] += gr[i];
                            }
                        if (gx) {
                            double s1 = 0.0, s2 = 0.0;  // sum(dxhat), sum(dxhat*xhat)
                            for (int i = 0; i < D; ++i) {
                                float xh = (row[i] - mu[r]) * istd[r];
                                double dxh = static_cast<double>(gr[i]) * vg2.v[static_cast<size_t>(i)];
                                s1 += dxh;
                                s2 += dxh * xh;
                            }
                            float* gxr = gx->v.data() + r * static_cast<size_t>(D);
                            for (int i = 0; i < D; ++i) {
                                float xh = (row[i] - mu[r]) * istd[r];
                                double dxh = static_cast<double>(gr[i]) * vg2.v[static_cast<size_t>(i)];
                                gxr[i] += static_cast<float>(istd[r] * (dxh - s1 / D - xh * s2 / D));
                            }
                        }
                    }
                    if (gg)
                        for (int i = 0; i < D; ++i) gg->v[static_cast<size_t>(i)] += static_cast<float>(dg[static_cast<size_t>(i)]);
                    if (gb)
                        for (int i = 0; i < D; ++i) gb->v[static_cast<size_t>(i)] += static_cast<float>(db[static_cast<size_t>(i)]);
                });
}

NodeId Graph::rms_norm(NodeId x, double eps) {
    const Tensor& vx = val(x);
    if (vx.shape.empty()) throw ShapeError("rms_norm: scalar input");
    const int D = vx.shape.back();
    const size_t R = vx.v.size() / static_cast<size_t>(D);
    Tensor out = Tensor::zeros(vx.shape);
    std::vector<float> ir(R);
    for (size_t r = 0; r < R; ++r) {
        const float* row = vx.v.data() + r * static_cast<size_t>(D);
        double m = 0.0;
        for (int i = 0; i < D; ++i) m += static_cast<double>(row[i]) * row[i];
        ir[r] = static_cast<float>(1.0 / std::sqrt(m / D + eps));
        float* orow = out.v.data() + r * static_cast<size_t>(D);
        for (int i = 0; i < D; ++i) orow[i] = row[i] * ir[r];
    }
    return emit(std::move(out), {x}, [x, D, R, ir = std::move(ir)](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        const Tensor& vx2 = g.val(x);
        Tensor* gx = g.grad_if_needed(x);
        if (!gx) return;
        for (size_t r = 0; r < R; ++r) {
            const float* row = vx2.v.data() + r * static_cast<size_t>(D);
            const float* gr = gc.v.data() + r * static_cast<size_t>(D);
            double dot = 0.0;
            for (int i = 0; i < D; ++i) dot += static_cast<double>(gr[i]) * row[i];
            const double k = dot * ir[r] * ir[r] * ir[r] / D;
            float* gxr = gx->v.data() + r * static_cast<size_t>(D);
            for (int i = 0; i < D; ++i)
                gxr[i] += static_cast<float>(gr[i] * ir[r] - row[i] * k);
        }
    });
}

NodeId Graph::softmax(NodeId x) {
    const Tensor& vx = val(x);
    if (vx.shape.empty()) throw ShapeError("softmax: scalar input");
    const int D = vx.shape.back();
    const size_t R = vx.v.size() / static_cast<size_t>(D);
    Tensor out = Tensor::zeros(vx.shape);
    for (size_t r = 0; r < R; ++r) {
        const float* row = vx.v.data() + r * static_cast<size_t>(D);
        float* orow = out.v.data() + r * static_cast<size_t>(D);
        float mx = row[0];
        for (int i = 1; i < D; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (int i = 0; i < D; ++i) {
            orow[i] = std::exp(row[i] - mx);
            sum += orow[i];
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int i = 0; i < D; ++i) orow[i] *= inv;
    }
    return emit(std::move(out), {x}, [x, D, R](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        const Tensor& y = g.val(self);
        Tensor* gx = g.grad_if_needed(x);
        if (!gx) return;
        for (size_t r = 0; r < R; ++r) {
            const float* yr = y.v.data() + r * static_cast<size_t>(D);
            const float* gr = gc.v.data() + r * static_cast<size_t>(D);
            double dot = 0.0;
            for (int i = 0; i < D; ++i) dot += static_cast<double>(gr[i]) * yr[i];
            float* gxr = gx->v.data() + r * static_cast<size_t>(D);
            for (int i = 0; i < D; ++i)
                gxr[i] += static_cast<float>(yr[i] * (gr[i] - dot));
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

NodeId Graph::mean_all(NodeId x) {
    const Tensor& vx = val(x);
    if (vx.numel() == 0) throw EmptyInput("mean_all: empty tensor");
    double acc = 0.0;
    for (float v : vx.v) acc += v;
    const size_t n = vx.v.size();
    Tensor out = Tensor::from({1}, {static_cast<float>(acc / static_cast<double>(n))});
    return emit(std::move(out), {x}, [x, n](Graph& g, NodeId self) {
        const float gc = g.node(self).grad.v[0];
        if (Tensor* gx = g.grad_if_needed(x)) {
            const float s = gc / static_cast<float>(n);
            for (float& v : gx->v) v += s;
        }
    });
}

NodeId Graph::mean_abs_diff(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    require_same_shape(va, vb, "mean_abs_diff");
    if (va.numel() == 0) throw EmptyInput("mean_abs_diff: empty tensor");
    double acc = 0.0;
    for (size_t i = 0; i < va.v.size(); ++i) acc += std::abs(static_cast<double>(va.v[i]) - vb.v[i]);
    const size_t n = va.v.size();
    Tensor out = Tensor::from({1}, {static_cast<float>(acc / static_cast<double>(n))});
    return emit(std::move(out), {a, b}, [a, b, n](Graph& g, NodeId self) {
        const float gc = g.node(self).grad.v[0];
        const Tensor& va2 = g.val(a);
        const Tensor& vb2 = g.val(b);
        Tensor* ga = g.grad_if_needed(a);
        Tensor* gb = g.grad_if_needed(b);
        const float s = gc / static_cast<float>(n);
        for (size_t i = 0; i < va2.v.size(); ++i) {
            float d = va2.v[i] - vb2.v[i];
            float sg = d > 0.0f ? s : (d < 0.0f ? -s : 0.0f);
            if (ga) ga->v[i] += sg;
            if (gb) gb->v[i] -= sg;
        }
    });
}

NodeId Graph::mean_sq_diff(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    require_same_shape(va, vb, "mean_sq_diff");
    if (va.numel() == 0) throw EmptyInput("mean_sq_diff: empty tensor");
    double acc = 0.0;
    for (size_t i = 0; i < va.v.size(); ++i) {
        double d = static_cast<double>(va.v[i]) - vb.v[i];
        acc += d * d;
    }
    const size_t n = va.v.size();
    Tensor out = Tensor::from({1}, {static_cast<float>(acc / static_cast<double>(n))});
    return emit(std::move(out), {a, b}, [a, b, n](Graph& g, NodeId self) {
        const float gc = g.node(self).grad.v[0];
        const Tensor& va2 = g.val(a);
        const Tensor& vb2 = g.val(b);
        Tensor* ga = g.grad_if_needed(a);
        Tensor* gb = g.grad_if_needed(b);
        const float s = 2.0f * gc / static_cast<float>(n);
        for (size_t i = 0; i < va2.v.size(); ++i) {
            float d = s * (va2.v[i] - vb2.v[i]);
            if (ga) ga->v[i] += d;
            if (gb) gb->v[i] -= d;
        }
    });
}

NodeId Graph::cross_entropy(NodeId logits, std::vector<int> labels) {
    const Tensor& vl = val(logits);
    if (vl.shape.size() != 2) throw ShapeError("cross_entropy: logits must be (B,K), got " + vl.shape_str());
    const int B = vl.shape[0], K = vl.shape[1];
    if (static_cast<int>(labels.size()) != B)
        throw ShapeError("cross_entropy: labels size mismatch");
    for (int y : labels)
        if (y < 0 || y >= K) throw DomainError("cross_entropy: label out of range");
    if (B == 0) throw EmptyInput("cross_entropy: empty batch");
    // probs cached for the backward pass
    std::vector<float> probs(vl.v.size());
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const float* row = vl.v.data() + static_cast<size_t>(b) * K;
        float mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(row[k]) - mx);
        double lse = mx + std::log(sum);
        loss += lse - row[labels[static_cast<size_t>(b)]];
        float* pr = probs.data() + static_cast<size_t>(b) * K;
        for (int k = 0; k < K; ++k)
            pr[k] = static_cast<float>(std::exp(static_cast<double>(row[k]) - lse));
    }
    Tensor out = Tensor::from({1}, {static_cast<float>(loss / B)});
    return emit(std::move(out), {logits},
                [logits, B, K, labels = std::move(labels), probs = std::move(probs)](Graph& g, NodeId self) {
                    const float gc = g.node(self).grad.v[0];
                    Tensor* gl = g.grad_if_needed(logits);
                    if (!gl) return;
                    const float s = gc / static_cast<float>(B);
                    for (int b = 0; b < B; ++b) {
                        float* row = gl->v.data() + static_cast<size_t>(b) * K;
                        const float* pr = probs.data() + static_cast<size_t>(b) * K;
                        for (int k = 0; k < K; ++k) row[k] += s * pr[k];
                        row[labels[static_cast<size_t>(b)]] -= s;
                    }
                });
}

// ---------------------------------------------------------------------------
// embeddings / pooling
// ---------------------------------------------------------------------------

NodeId Graph::gather_rows(NodeId table, std::vector<int> ids) {
    const Tensor& vt = val(table);
    if (vt.shape.size() != 2) throw ShapeError("gather_rows: table must be (V,W), got " + vt.shape_str());
    const int V = vt.shape[0], W = vt.shape[1];
    for (int id : ids)
        if (id < 0 || id >= V) throw DomainError("gather_rows: index out of range");
    const int B = static_cast<int>(ids.size());
    Tensor out = Tensor::zeros({B, W});
    for (int b = 0; b < B; ++b)
        std::memcpy(out.v.data() + static_cast<size_t>(b) * W,
                    vt.v.data() + static_cast<size_t>(ids[static_cast<size_t>(b)]) * W,
                    static_cast<size_t>(W) * sizeof(float));
    return emit(std::move(out), {table}, [table, W, ids = std::move(ids)](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        Tensor* gt = g.grad_if_needed(table);
        if (!gt) return;
        for (size_t b = 0; b < ids.size(); ++b) {
            float* dst = gt->v.data() + static_cast<size_t>(ids[b]) * W;
            const float* src = gc.v.data() + b * static_cast<size_t>(W);
            for (int w = 0; w < W; ++w) dst[w] += src[w];
        }
    });
}

NodeId Graph::mean_pool_hw(NodeId x) {
    const Tensor& vx = val(x);
    if (vx.shape.size() != 4) throw ShapeError("mean_pool_hw: input must be (B,H,W,C), got " + vx.shape_str());
    const int B = vx.shape[0], H = vx.shape[1], W = vx.shape[2], C = vx.shape[3];
    if (H * W == 0) throw EmptyInput("mean_pool_hw: empty spatial extent");
    Tensor out = Tensor::zeros({B, C});
    std::vector<double> acc(static_cast<size_t>(C));
    for (int b = 0; b < B; ++b) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* xb = vx.v.data() + static_cast<size_t>(b) * H * W * C;
        for (int p = 0; p < H * W; ++p)
            for (int c = 0; c < C; ++c) acc[static_cast<size_t>(c)] += xb[static_cast<size_t>(p) * C + c];
        for (int c = 0; c < C; ++c)
            out.v[static_cast<size_t>(b) * C + c] = static_cast<float>(acc[static_cast<size_t>(c)] / (H * W));
    }
    return emit(std::move(out), {x}, [x, B, H, W, C](Graph& g, NodeId self) {
        const Tensor& gc = g.node(self).grad;
        Tensor* gx = g.grad_if_needed(x);
        if (!gx) return;
        const float inv = 1.0f / static_cast<float>(H * W);
        for (int b = 0; b < B; ++b) {
            float* xb = gx->v.data() + static_cast<size_t>(b) * H * W * C;
            const float* gb = gc.v.data() + static_cast<size_t>(b) * C;
            for (int p = 0; p < H * W; ++p)
                for (int c = 0; c < C; ++c) xb[static_cast<size_t>(p) * C + c] += gb[c] * inv;
        }
    });
}

}  // namespace flowtok
