#include "flowtok/tensor.hpp"

#include <cmath>
#include <sstream>

#include "flowtok/errors.hpp"

namespace flowtok {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
}

int64_t Tensor::numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative tensor dimension in " + flowtok::shape_str(s));
        n *= d;
    }
    return n;
}

int Tensor::dim(int i) const {
    const int nd = static_cast<int>(shape.size());
    if (i < 0) i += nd;
    if (i < 0 || i >= nd) throw ShapeError("dim index out of range for " + shape_str());
    return shape[static_cast<size_t>(i)];
}

Tensor Tensor::full(std::vector<int> s, float value) {
    Tensor t(std::move(s));
    for (float& x : t.v) x = value;
    return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<float> data) {
    if (numel_of(s) != static_cast<int64_t>(data.size()))
        throw ShapeError("data size does not match shape " + flowtok::shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.v = std::move(data);
    return t;
}

bool Tensor::all_finite() const {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

float Tensor::max_abs_diff(const Tensor& o) const {
    require_same_shape(*this, o, "max_abs_diff");
    float m = 0.0f;
    for (size_t i = 0; i < v.size(); ++i) m = std::max(m, std::fabs(v[i] - o.v[i]));
    return m;
}

std::string Tensor::shape_str() const { return flowtok::shape_str(shape); }

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

}  // namespace flowtok
