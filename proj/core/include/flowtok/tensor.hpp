#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flowtok {

// Dense row-major float32 tensor. Image data is channel-last: (B, H, W, C).
struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    static int64_t numel_of(const std::vector<int>& s);
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    bool empty() const { return v.empty(); }

    int dim(int i) const;  // negative i counts from the back

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float value);
    static Tensor from(std::vector<int> s, std::vector<float> data);

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;

    float max_abs_diff(const Tensor& o) const;

    std::string shape_str() const;
};

// Throws ShapeError with a message naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

inline float max_abs_diff(const Tensor& a, const Tensor& b) { return a.max_abs_diff(b); }

std::string shape_str(const std::vector<int>& s);

}  // namespace flowtok
