#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spcl/checkpoint.hpp"
#include "spcl/rng.hpp"
#include "spcl/tensor.hpp"

namespace spcl {

/// Small convolutional classifier: per stage a 3x3 same convolution, ReLU and
/// 2x2 average pool; then the classification layer applied as a 1x1
/// convolution BEFORE pooling, yielding a spatial score map. The pooled
/// logits equal head-after-pool exactly, so inference cost is unchanged.
struct ModelConfig {
    int64_t input_size = 64;
    int64_t in_channels = 1;
    std::vector<int64_t> stage_channels = {8, 16, 32};
    int64_t num_classes = 8;
    /// Alternative global probability f = mean of per-location sigmoids
    /// instead of sigmoid of the pooled logits.
    bool mean_of_sigmoids = false;

    int64_t total_stride() const { return int64_t{1} << stage_channels.size(); }
    int64_t map_size() const { return input_size / total_stride(); }

    void validate() const {
        if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
        if (stage_channels.empty()) throw std::invalid_argument("ModelConfig: need at least one stage");
        if (input_size % total_stride() != 0)
            throw std::invalid_argument("ModelConfig: input_size must be divisible by the total stride " +
                                        std::to_string(total_stride()));
        if (map_size() < 1) throw std::invalid_argument("ModelConfig: spatial map collapses to zero");
    }
};

/// Per-location class probabilities F = sigmoid(U) over the G x G grid.
template <typename T>
struct SpatialScoreMap {
    Tensor<T> logits;         // U, G x G x L
    Tensor<T> probabilities;  // F = sigmoid(U)
};

/// Image-level output: pooled logits u and probabilities f.
template <typename T>
struct Prediction {
    std::vector<T> logits;         // u = spatial_mean(U)
    std::vector<T> probabilities;  // f
};

template <typename T>
struct ModelParams {
    std::vector<Tensor<T>> conv_w;  // per stage: [C_out, 3, 3, C_in]
    std::vector<Tensor<T>> conv_b;  // per stage: [C_out]
    Tensor<T> head_w;               // [L, C_last]
    Tensor<T> head_b;               // [L]

    /// Glorot-uniform weights; the head bias starts at the logit of the prior
    /// positive rate so the first epochs are not spent escaping saturation.
    static ModelParams initialized(const ModelConfig& cfg, Rng& rng, double prior_positive_rate) {
        cfg.validate();
        ModelParams p;
        int64_t cin = cfg.in_channels;
        for (int64_t cout : cfg.stage_channels) {
            Tensor<T> w({cout, 3, 3, cin});
            const double bound = std::sqrt(6.0 / (9.0 * static_cast<double>(cin) +
                                                  9.0 * static_cast<double>(cout)));
            for (auto& x : w.v) x = static_cast<T>(rng.uniform(-bound, bound));
            p.conv_w.push_back(std::move(w));
            p.conv_b.emplace_back(std::vector<int64_t>{cout}, T(0));
            cin = cout;
        }
        p.head_w = Tensor<T>({cfg.num_classes, cin});
        const double head_bound = std::sqrt(6.0 / static_cast<double>(cin + cfg.num_classes));
        for (auto& x : p.head_w.v) x = static_cast<T>(rng.uniform(-head_bound, head_bound));
        const double prior = std::clamp(prior_positive_rate, 1e-4, 1.0 - 1e-4);
        p.head_b = Tensor<T>({cfg.num_classes}, static_cast<T>(std::log(prior / (1.0 - prior))));
        return p;
    }

    static ModelParams zeros_like(const ModelParams& other) {
        ModelParams p;
        for (const auto& w : other.conv_w) p.conv_w.emplace_back(w.shape, T(0));
        for (const auto& b : other.conv_b) p.conv_b.emplace_back(b.shape, T(0));
        p.head_w = Tensor<T>(other.head_w.shape, T(0));
        p.head_b = Tensor<T>(other.head_b.shape, T(0));
        return p;
    }

    /// Stable iteration order over all parameter tensors.
    template <typename Fn>
    void for_each(Fn&& fn) {
        for (size_t i = 0; i < conv_w.size(); ++i) {
            fn("conv" + std::to_string(i) + ".w", conv_w[i]);
            fn("conv" + std::to_string(i) + ".b", conv_b[i]);
        }
        fn("head.w", head_w);
        fn("head.b", head_b);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (size_t i = 0; i < conv_w.size(); ++i) {
            fn("conv" + std::to_string(i) + ".w", conv_w[i]);
            fn("conv" + std::to_string(i) + ".b", conv_b[i]);
        }
        fn("head.w", head_w);
        fn("head.b", head_b);
    }

    int64_t num_values() const {
        int64_t n = 0;
        for_each([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
        return n;
    }
};

namespace detail {

/// Parameters live as [Cout,3,3,Cin] (the checkpoint layout), but the kernels
/// run on a [3,3,Cin,Cout] copy so the hot loops stream contiguously over the
/// output channels. The transpose is ~1e4 values against ~1e6 multiplies.
template <typename T>
void transpose_weights(const Tensor<T>& w, std::vector<T>& wt) {
    const int64_t cout = w.shape[0], cin = w.shape[3];
    wt.assign(static_cast<size_t>(9 * cin * cout), T(0));
    for (int64_t o = 0; o < cout; ++o)
        for (int64_t k = 0; k < 9; ++k)
            for (int64_t i = 0; i < cin; ++i)
                wt[static_cast<size_t>((k * cin + i) * cout + o)] =
                    w.v[static_cast<size_t>((o * 9 + k) * cin + i)];
}

/// 3x3 same convolution, zero padding, HWC layout.
template <typename T>
void conv3x3_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& out) {
    const int64_t h = in.shape[0], wd = in.shape[1], cin = in.shape[2];
    const int64_t cout = w.shape[0];
    if (out.shape != std::vector<int64_t>{h, wd, cout}) out = Tensor<T>({h, wd, cout});

    std::vector<T> wt;
    transpose_weights(w, wt);

    for (int64_t y = 0; y < h; ++y) {
        const int64_t ky0 = y == 0 ? 1 : 0, ky1 = y == h - 1 ? 2 : 3;
        for (int64_t x = 0; x < wd; ++x) {
            const int64_t kx0 = x == 0 ? 1 : 0, kx1 = x == wd - 1 ? 2 : 3;
            T* __restrict acc = &out.at(y, x, 0);
            for (int64_t o = 0; o < cout; ++o) acc[o] = b[o];
            for (int64_t ky = ky0; ky < ky1; ++ky) {
                const T* in_row = &in.at(y + ky - 1, x + kx0 - 1, 0);
                const T* wt_row = wt.data() + (ky * 3 + kx0) * cin * cout;
                for (int64_t kx = kx0; kx < kx1; ++kx) {
                    const T* __restrict ip = in_row;
                    const T* __restrict wk = wt_row;
                    for (int64_t i = 0; i < cin; ++i) {
                        const T vi = ip[i];
                        const T* __restrict wrow = wk + i * cout;
                        for (int64_t o = 0; o < cout; ++o) acc[o] += vi * wrow[o];
                    }
                    in_row += cin;
                    wt_row += cin * cout;
                }
            }
        }
    }
}

/// Fused gradient: accumulates dW/db and writes d(input) in one pass.
template <typename T>
void conv3x3_backward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& dout,
                      Tensor<T>& dw, Tensor<T>& db, Tensor<T>& din) {
    const int64_t h = in.shape[0], wd = in.shape[1], cin = in.shape[2];
    const int64_t cout = w.shape[0];
    din = Tensor<T>({h, wd, cin});

    std::vector<T> wt, dwt;
    transpose_weights(w, wt);
    dwt.assign(static_cast<size_t>(9 * cin * cout), T(0));

    for (int64_t y = 0; y < h; ++y) {
        const int64_t ky0 = y == 0 ? 1 : 0, ky1 = y == h - 1 ? 2 : 3;
        for (int64_t x = 0; x < wd; ++x) {
            const int64_t kx0 = x == 0 ? 1 : 0, kx1 = x == wd - 1 ? 2 : 3;
            const T* __restrict g = &dout.at(y, x, 0);
            for (int64_t o = 0; o < cout; ++o) db[o] += g[o];
            for (int64_t ky = ky0; ky < ky1; ++ky) {
                const int64_t yy = y + ky - 1;
                const T* in_row = &in.at(yy, x + kx0 - 1, 0);
                T* din_row = &din.at(yy, x + kx0 - 1, 0);
                const int64_t k_base = (ky * 3 + kx0) * cin;
                for (int64_t kx = kx0; kx < kx1; ++kx) {
                    const T* __restrict ip = in_row;
                    T* __restrict dip = din_row;
                    const int64_t k_off = k_base + (kx - kx0) * cin;
                    for (int64_t i = 0; i < cin; ++i) {
                        const T vi = ip[i];
                        const T* __restrict wrow = wt.data() + (k_off + i) * cout;
                        T* __restrict dwrow = dwt.data() + (k_off + i) * cout;
                        for (int64_t o = 0; o < cout; ++o) dwrow[o] += vi * g[o];
                        T dot = T(0);
                        for (int64_t o = 0; o < cout; ++o) dot += g[o] * wrow[o];
                        dip[i] += dot;
                    }
                    in_row += cin;
                    din_row += cin;
                }
            }
        }
    }

    // scatter the transposed accumulator back into the parameter layout
    for (int64_t o = 0; o < cout; ++o)
        for (int64_t k = 0; k < 9; ++k)
            for (int64_t i = 0; i < cin; ++i)
                dw.v[static_cast<size_t>((o * 9 + k) * cin + i)] +=
                    dwt[static_cast<size_t>((k * cin + i) * cout + o)];
}

template <typename T>
void avgpool2_forward(const Tensor<T>& in, Tensor<T>& out) {
    const int64_t h = in.shape[0] / 2, w = in.shape[1] / 2, c = in.shape[2];
    out = Tensor<T>({h, w, c});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t k = 0; k < c; ++k)
                out.at(y, x, k) = (in.at(2 * y, 2 * x, k) + in.at(2 * y, 2 * x + 1, k) +
                                   in.at(2 * y + 1, 2 * x, k) + in.at(2 * y + 1, 2 * x + 1, k)) /
                                  T(4);
}

template <typename T>
void avgpool2_backward(const Tensor<T>& dout, Tensor<T>& din) {
    const int64_t h = dout.shape[0], w = dout.shape[1], c = dout.shape[2];
    din = Tensor<T>({h * 2, w * 2, c});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t k = 0; k < c; ++k) {
                const T g = dout.at(y, x, k) / T(4);
                din.at(2 * y, 2 * x, k) = g;
                din.at(2 * y, 2 * x + 1, k) = g;
                din.at(2 * y + 1, 2 * x, k) = g;
                din.at(2 * y + 1, 2 * x + 1, k) = g;
            }
}

}  // namespace detail

/// Cached activations of one forward pass; owned by the caller so concurrent
/// forward/backward on shared parameters stays safe.
template <typename T>
struct ModelWorkspace {
    bool forward_done = false;
    Tensor<T> input;
    std::vector<Tensor<T>> pre_relu;  // conv output per stage
    std::vector<Tensor<T>> pooled;    // pool output per stage
    Tensor<T> score_logits;           // U
};

template <typename T>
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const ModelConfig& config() const { return cfg_; }

    void forward(const Tensor<T>& image, const ModelParams<T>& params, ModelWorkspace<T>& ws,
                 SpatialScoreMap<T>& map_out, Prediction<T>& pred_out) const {
        if (image.rank() != 3 || image.shape[0] != cfg_.input_size ||
            image.shape[1] != cfg_.input_size || image.shape[2] != cfg_.in_channels)
            throw std::invalid_argument("Model::forward: image shape mismatch");

        ws.input = image;
        const size_t stages = cfg_.stage_channels.size();
        ws.pre_relu.resize(stages);
        ws.pooled.resize(stages);

        const Tensor<T>* cur = &ws.input;
        for (size_t s = 0; s < stages; ++s) {
            detail::conv3x3_forward(*cur, params.conv_w[s], params.conv_b[s], ws.pre_relu[s]);
            Tensor<T> relu = ws.pre_relu[s];
            for (auto& x : relu.v) x = x > T(0) ? x : T(0);
            detail::avgpool2_forward(relu, ws.pooled[s]);
            cur = &ws.pooled[s];
        }

        // classification head as a 1x1 convolution over the feature map
        const Tensor<T>& feat = ws.pooled.back();
        const int64_t g = cfg_.map_size(), l = cfg_.num_classes, c = feat.shape[2];
        ws.score_logits = Tensor<T>({g, g, l});
        for (int64_t p = 0; p < g * g; ++p) {
            const T* fp = feat.v.data() + p * c;
            T* up = ws.score_logits.v.data() + p * l;
            for (int64_t j = 0; j < l; ++j) {
                const T* wj = params.head_w.v.data() + j * c;
                T acc = params.head_b[j];
                for (int64_t i = 0; i < c; ++i) acc += wj[i] * fp[i];
                up[j] = acc;
            }
        }

        map_out.logits = ws.score_logits;
        map_out.probabilities = sigmoid(ws.score_logits);
        pred_out.logits = spatial_mean(ws.score_logits);
        pred_out.probabilities.resize(static_cast<size_t>(l));
        if (cfg_.mean_of_sigmoids) {
            pred_out.probabilities = spatial_mean(map_out.probabilities);
        } else {
            for (int64_t j = 0; j < l; ++j)
                pred_out.probabilities[static_cast<size_t>(j)] = sigmoid(pred_out.logits[static_cast<size_t>(j)]);
        }
        ws.forward_done = true;
    }

    /// Backpropagate a gradient with respect to the score logits U. Gradients
    /// with respect to f or F must be folded into dU by the caller (they know
    /// which nonlinearity path they took).
    void backward(const ModelParams<T>& params, const ModelWorkspace<T>& ws,
                  const Tensor<T>& d_logits, ModelParams<T>& grads) const {
        if (!ws.forward_done)
            throw std::logic_error("Model::backward called before forward");
        if (d_logits.shape != ws.score_logits.shape)
            throw std::invalid_argument("Model::backward: gradient shape mismatch");

        const Tensor<T>& feat = ws.pooled.back();
        const int64_t g = cfg_.map_size(), l = cfg_.num_classes, c = feat.shape[2];

        Tensor<T> dfeat({g, g, c});
        for (int64_t p = 0; p < g * g; ++p) {
            const T* up = d_logits.v.data() + p * l;
            const T* fp = feat.v.data() + p * c;
            T* dfp = dfeat.v.data() + p * c;
            for (int64_t j = 0; j < l; ++j) {
                const T gj = up[j];
                if (gj == T(0)) continue;
                grads.head_b[j] += gj;
                T* dwj = grads.head_w.v.data() + j * c;
                const T* wj = params.head_w.v.data() + j * c;
                for (int64_t i = 0; i < c; ++i) {
                    dwj[i] += gj * fp[i];
                    dfp[i] += gj * wj[i];
                }
            }
        }

        Tensor<T> d_cur = std::move(dfeat);
        for (int64_t s = static_cast<int64_t>(cfg_.stage_channels.size()) - 1; s >= 0; --s) {
            Tensor<T> d_relu;
            detail::avgpool2_backward(d_cur, d_relu);
            const Tensor<T>& pre = ws.pre_relu[static_cast<size_t>(s)];
            for (size_t i = 0; i < d_relu.v.size(); ++i)
                if (pre.v[i] <= T(0)) d_relu.v[i] = T(0);
            const Tensor<T>& stage_in = s == 0 ? ws.input : ws.pooled[static_cast<size_t>(s - 1)];
            Tensor<T> din;
            detail::conv3x3_backward(stage_in, params.conv_w[static_cast<size_t>(s)], d_relu,
                                     grads.conv_w[static_cast<size_t>(s)],
                                     grads.conv_b[static_cast<size_t>(s)], din);
            d_cur = std::move(din);
        }
    }

private:
    ModelConfig cfg_;
};

/// Fold gradients taken with respect to the image-level probabilities f and
/// (optionally) the per-location probabilities F into a gradient with respect
/// to the score logits U, matching the nonlinearity path forward() took.
template <typename T>
Tensor<T> compose_logit_gradient(const ModelConfig& cfg, const SpatialScoreMap<T>& map,
                                 const Prediction<T>& pred, const std::vector<T>& grad_f,
                                 const std::type_identity_t<Tensor<T>>* grad_map) {
    const int64_t g = cfg.map_size(), l = cfg.num_classes;
    Tensor<T> d_logits({g, g, l});
    const T inv_area = T(1) / static_cast<T>(g * g);

    if (cfg.mean_of_sigmoids) {
        // f = spatial_mean(sigmoid(U)):  df/dU = sigma'(U) / G^2 per location
        for (int64_t p = 0; p < g * g; ++p)
            for (int64_t j = 0; j < l; ++j) {
                const T fp = map.probabilities.v[static_cast<size_t>(p * l + j)];
                d_logits.v[static_cast<size_t>(p * l + j)] =
                    grad_f[static_cast<size_t>(j)] * fp * (T(1) - fp) * inv_area;
            }
    } else {
        // f = sigmoid(mean(U)):  df/dU = sigma'(u) / G^2, constant over locations
        for (int64_t j = 0; j < l; ++j) {
            const T fj = pred.probabilities[static_cast<size_t>(j)];
            const T du = grad_f[static_cast<size_t>(j)] * fj * (T(1) - fj) * inv_area;
            for (int64_t p = 0; p < g * g; ++p) d_logits.v[static_cast<size_t>(p * l + j)] += du;
        }
    }

    if (grad_map != nullptr && grad_map->numel() > 0) {
        // F = sigmoid(U) elementwise
        for (size_t i = 0; i < d_logits.v.size(); ++i) {
            const T fp = map.probabilities.v[i];
            d_logits.v[i] += grad_map->v[i] * fp * (T(1) - fp);
        }
    }
    return d_logits;
}

/// Checkpoint layout of model parameters plus the config needed to rebuild.
template <typename T>
void params_to_arrays(const ModelConfig& cfg, const ModelParams<T>& params, ArrayStore& out,
                      const std::string& prefix) {
    out.put_scalar_i64(prefix + ".input_size", cfg.input_size);
    out.put_scalar_i64(prefix + ".in_channels", cfg.in_channels);
    out.put_scalar_i64(prefix + ".num_classes", cfg.num_classes);
    out.put_scalar_i64(prefix + ".mean_of_sigmoids", cfg.mean_of_sigmoids ? 1 : 0);
    out.put_i64(prefix + ".stage_channels",
                {static_cast<int64_t>(cfg.stage_channels.size())}, cfg.stage_channels.data());
    params.for_each([&](const std::string& name, const Tensor<T>& t) {
        out.put_tensor(prefix + "." + name, t);
    });
}

inline ModelConfig config_from_arrays(const ArrayStore& in, const std::string& prefix) {
    ModelConfig cfg;
    cfg.input_size = in.get_scalar_i64(prefix + ".input_size");
    cfg.in_channels = in.get_scalar_i64(prefix + ".in_channels");
    cfg.num_classes = in.get_scalar_i64(prefix + ".num_classes");
    cfg.mean_of_sigmoids = in.get_scalar_i64(prefix + ".mean_of_sigmoids") != 0;
    cfg.stage_channels = in.get_i64(prefix + ".stage_channels");
    cfg.validate();
    return cfg;
}

template <typename T>
ModelParams<T> params_from_arrays(const ArrayStore& in, const ModelConfig& cfg,
                                  const std::string& prefix) {
    ModelParams<T> p;
    for (size_t s = 0; s < cfg.stage_channels.size(); ++s) {
        p.conv_w.push_back(in.get_tensor_any_float<T>(prefix + ".conv" + std::to_string(s) + ".w"));
        p.conv_b.push_back(in.get_tensor_any_float<T>(prefix + ".conv" + std::to_string(s) + ".b"));
    }
    p.head_w = in.get_tensor_any_float<T>(prefix + ".head.w");
    p.head_b = in.get_tensor_any_float<T>(prefix + ".head.b");
    return p;
}

}  // namespace spcl
