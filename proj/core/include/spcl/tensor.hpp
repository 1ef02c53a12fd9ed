#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace spcl {

/// Dense row-major array of real values. Rank-3 tensors use (row, col, channel)
/// indexing; images and score maps are stored height x width x channels.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s, T fill = T(0)) : shape(std::move(s)) {
        for (int64_t d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
        }
        v.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
    }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    // rank-3 access: (y, x, c)
    T& at(int64_t y, int64_t x, int64_t c) {
        return v[static_cast<size_t>((y * shape[1] + x) * shape[2] + c)];
    }
    const T& at(int64_t y, int64_t x, int64_t c) const {
        return v[static_cast<size_t>((y * shape[1] + x) * shape[2] + c)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
inline T sigmoid(T x) {
    // split on sign so exp never overflows
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
inline Tensor<T> sigmoid(const Tensor<T>& t) {
    Tensor<T> out = t;
    for (auto& x : out.v) x = sigmoid(x);
    return out;
}

/// Per-channel mean over the spatial extent of a rank-3 (G x G x L) tensor.
template <typename T>
inline std::vector<T> spatial_mean(const Tensor<T>& t) {
    if (t.rank() != 3) throw std::invalid_argument("spatial_mean: rank-3 input required");
    const int64_t h = t.shape[0], w = t.shape[1], c = t.shape[2];
    if (h * w == 0) throw std::invalid_argument("spatial_mean: zero spatial extent");
    std::vector<T> mean(static_cast<size_t>(c), T(0));
    for (int64_t i = 0; i < h * w; ++i)
        for (int64_t k = 0; k < c; ++k) mean[static_cast<size_t>(k)] += t.v[static_cast<size_t>(i * c + k)];
    const T inv = T(1) / static_cast<T>(h * w);
    for (auto& m : mean) m *= inv;
    return mean;
}

/// Bilinear resize of an h x w x c tensor with half-pixel-center sampling
/// (source position of output pixel i is (i + 0.5) * h / out_h - 0.5).
template <typename T>
inline Tensor<T> bilinear_resize(const Tensor<T>& t, int64_t out_h, int64_t out_w) {
    if (t.rank() != 3) throw std::invalid_argument("bilinear_resize: rank-3 input required");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: output size < 1");
    const int64_t h = t.shape[0], w = t.shape[1], c = t.shape[2];
    if (out_h == h && out_w == w) return t;

    Tensor<T> out({out_h, out_w, c});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (int64_t oy = 0; oy < out_h; ++oy) {
        double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const int64_t y0 = static_cast<int64_t>(fy);
        const int64_t y1 = std::min(y0 + 1, h - 1);
        const T wy = static_cast<T>(fy - static_cast<double>(y0));
        for (int64_t ox = 0; ox < out_w; ++ox) {
            double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const int64_t x0 = static_cast<int64_t>(fx);
            const int64_t x1 = std::min(x0 + 1, w - 1);
            const T wx = static_cast<T>(fx - static_cast<double>(x0));
            for (int64_t k = 0; k < c; ++k) {
                const T top = t.at(y0, x0, k) * (T(1) - wx) + t.at(y0, x1, k) * wx;
                const T bot = t.at(y1, x0, k) * (T(1) - wx) + t.at(y1, x1, k) * wx;
                out.at(oy, ox, k) = top * (T(1) - wy) + bot * wy;
            }
        }
    }
    return out;
}

/// Mirror a rank-3 tensor along its width axis.
template <typename T>
inline Tensor<T> hflip(const Tensor<T>& t) {
    if (t.rank() != 3) throw std::invalid_argument("hflip: rank-3 input required");
    Tensor<T> out = t;
    const int64_t h = t.shape[0], w = t.shape[1], c = t.shape[2];
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t k = 0; k < c; ++k) out.at(y, w - 1 - x, k) = t.at(y, x, k);
    return out;
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
/// Test oracle for every analytic gradient in the project.
template <typename T, typename F>
inline Tensor<T> finite_difference_gradient(F&& f, const Tensor<T>& t, T eps) {
    if (!(eps > T(0))) throw std::invalid_argument("finite_difference_gradient: eps must be > 0");
    Tensor<T> grad = t;
    Tensor<T> probe = t;
    for (size_t i = 0; i < t.v.size(); ++i) {
        const T x = t.v[i];
        probe.v[i] = x + eps;
        const T up = f(probe);
        probe.v[i] = x - eps;
        const T down = f(probe);
        probe.v[i] = x;
        grad.v[i] = (up - down) / (T(2) * eps);
    }
    return grad;
}

template <typename T>
inline bool all_finite(const Tensor<T>& t) {
    return std::all_of(t.v.begin(), t.v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace spcl
