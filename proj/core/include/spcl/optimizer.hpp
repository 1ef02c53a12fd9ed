#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "spcl/checkpoint.hpp"
#include "spcl/model.hpp"

namespace spcl {

/// base_lr * 0.5 * (1 + cos(pi * epoch / total_epochs))
inline double cosine_lr(int64_t epoch, int64_t total_epochs, double base_lr) {
    if (epoch < 0 || epoch >= total_epochs)
        throw std::invalid_argument("cosine_lr: epoch out of range");
    return base_lr * 0.5 *
           (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                           static_cast<double>(total_epochs)));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled, applied with the learning rate
};

/// Adaptive-moment update with bias correction.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(const ModelParams<T>& like, AdamConfig cfg)
        : cfg_(cfg), m_(ModelParams<T>::zeros_like(like)), v_(ModelParams<T>::zeros_like(like)) {}

    void step(ModelParams<T>& params, const ModelParams<T>& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        auto update = [&](Tensor<T>& p, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v) {
            const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
            for (size_t i = 0; i < p.v.size(); ++i) {
                m.v[i] = b1 * m.v[i] + (T(1) - b1) * g.v[i];
                v.v[i] = b2 * v.v[i] + (T(1) - b2) * g.v[i] * g.v[i];
                const double mhat = static_cast<double>(m.v[i]) / bc1;
                const double vhat = static_cast<double>(v.v[i]) / bc2;
                double delta = lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
                if (cfg_.weight_decay != 0.0) delta += lr * cfg_.weight_decay * static_cast<double>(p.v[i]);
                p.v[i] -= static_cast<T>(delta);
            }
        };
        update(params.head_w, grads.head_w, m_.head_w, v_.head_w);
        update(params.head_b, grads.head_b, m_.head_b, v_.head_b);
        for (size_t s = 0; s < params.conv_w.size(); ++s) {
            update(params.conv_w[s], grads.conv_w[s], m_.conv_w[s], v_.conv_w[s]);
            update(params.conv_b[s], grads.conv_b[s], m_.conv_b[s], v_.conv_b[s]);
        }
    }

    int64_t step_count() const { return t_; }

    void to_arrays(ArrayStore& out, const std::string& prefix) const {
        out.put_scalar_i64(prefix + ".t", t_);
        m_.for_each([&](const std::string& n, const Tensor<T>& t) { out.put_tensor(prefix + ".m." + n, t); });
        v_.for_each([&](const std::string& n, const Tensor<T>& t) { out.put_tensor(prefix + ".v." + n, t); });
    }
    void from_arrays(const ArrayStore& in, const std::string& prefix) {
        t_ = in.get_scalar_i64(prefix + ".t");
        m_.for_each([&](const std::string& n, Tensor<T>& t) { t = in.get_tensor_any_float<T>(prefix + ".m." + n); });
        v_.for_each([&](const std::string& n, Tensor<T>& t) { t = in.get_tensor_any_float<T>(prefix + ".v." + n); });
    }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    ModelParams<T> m_;
    ModelParams<T> v_;
};

}  // namespace spcl
