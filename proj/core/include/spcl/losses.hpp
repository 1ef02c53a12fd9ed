#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spcl/annotation.hpp"
#include "spcl/tensor.hpp"

namespace spcl {

enum class PrimaryLoss { Bce, An, En, Ep, Epr };
enum class ConsistencyLoss { None, Cl, Scl };

inline PrimaryLoss parse_primary_loss(const std::string& name) {
    if (name == "bce") return PrimaryLoss::Bce;
    if (name == "an") return PrimaryLoss::An;
    if (name == "en") return PrimaryLoss::En;
    if (name == "ep") return PrimaryLoss::Ep;
    if (name == "epr") return PrimaryLoss::Epr;
    throw std::invalid_argument("unknown primary loss '" + name + "' (expected bce|an|en|ep|epr)");
}

inline ConsistencyLoss parse_consistency_loss(const std::string& name) {
    if (name == "none") return ConsistencyLoss::None;
    if (name == "cl") return ConsistencyLoss::Cl;
    if (name == "scl") return ConsistencyLoss::Scl;
    throw std::invalid_argument("unknown consistency loss '" + name + "' (expected none|cl|scl)");
}

inline std::string to_string(PrimaryLoss l) {
    switch (l) {
        case PrimaryLoss::Bce: return "bce";
        case PrimaryLoss::An: return "an";
        case PrimaryLoss::En: return "en";
        case PrimaryLoss::Ep: return "ep";
        case PrimaryLoss::Epr: return "epr";
    }
    return "?";
}

inline std::string to_string(ConsistencyLoss l) {
    switch (l) {
        case ConsistencyLoss::None: return "none";
        case ConsistencyLoss::Cl: return "cl";
        case ConsistencyLoss::Scl: return "scl";
    }
    return "?";
}

/// Scalar loss value plus its gradient with respect to the probabilities it
/// was evaluated on.
template <typename T>
struct LossGrad {
    T value = T(0);
    std::vector<T> grad;
};

namespace detail {
// Probabilities are clamped 1e-7 away from {0,1} before every logarithm.
// Gradients are taken through the clamped value, so a saturated prediction
// keeps a bounded, nonzero pull back towards its target.
constexpr double kProbClamp = 1e-7;

template <typename T>
inline T clamp_prob(T f) {
    return std::clamp(f, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
}
}  // namespace detail

/// Cross entropy over the annotated entries only; unknowns contribute nothing.
template <typename T>
LossGrad<T> bce_loss(const std::vector<T>& f, const AnnotationVector& ann) {
    const int64_t L = ann.num_classes();
    LossGrad<T> out;
    out.grad.assign(f.size(), T(0));
    const T inv_l = T(1) / static_cast<T>(L);
    for (int64_t i = 0; i < L; ++i) {
        const T p = detail::clamp_prob(f[static_cast<size_t>(i)]);
        if (ann.z[static_cast<size_t>(i)] == Label::Positive) {
            out.value -= inv_l * std::log(p);
            out.grad[static_cast<size_t>(i)] = -inv_l / p;
        } else if (ann.z[static_cast<size_t>(i)] == Label::Negative) {
            out.value -= inv_l * std::log(T(1) - p);
            out.grad[static_cast<size_t>(i)] = inv_l / (T(1) - p);
        }
    }
    return out;
}

/// Unknown labels treated as negatives.
template <typename T>
LossGrad<T> an_loss(const std::vector<T>& f, const AnnotationVector& ann) {
    const int64_t L = ann.num_classes();
    LossGrad<T> out;
    out.grad.assign(f.size(), T(0));
    const T inv_l = T(1) / static_cast<T>(L);
    for (int64_t i = 0; i < L; ++i) {
        const T p = detail::clamp_prob(f[static_cast<size_t>(i)]);
        if (ann.z[static_cast<size_t>(i)] == Label::Positive) {
            out.value -= inv_l * std::log(p);
            out.grad[static_cast<size_t>(i)] = -inv_l / p;
        } else {
            out.value -= inv_l * std::log(T(1) - p);
            out.grad[static_cast<size_t>(i)] = inv_l / (T(1) - p);
        }
    }
    return out;
}

/// Like an_loss, but entries flagged as expected positives are exempt from the
/// negative term. Annotated positives keep their positive term.
template <typename T>
LossGrad<T> en_loss(const std::vector<T>& f, const AnnotationVector& ann,
                    const ExpectedPositiveMask& expected) {
    const int64_t L = ann.num_classes();
    if (static_cast<int64_t>(expected.size()) != L)
        throw std::invalid_argument("en_loss: mask size mismatch");
    LossGrad<T> out;
    out.grad.assign(f.size(), T(0));
    const T inv_l = T(1) / static_cast<T>(L);
    for (int64_t i = 0; i < L; ++i) {
        const T p = detail::clamp_prob(f[static_cast<size_t>(i)]);
        if (ann.z[static_cast<size_t>(i)] == Label::Positive) {
            out.value -= inv_l * std::log(p);
            out.grad[static_cast<size_t>(i)] = -inv_l / p;
        } else if (expected[static_cast<size_t>(i)] == 0) {
            out.value -= inv_l * std::log(T(1) - p);
            out.grad[static_cast<size_t>(i)] = inv_l / (T(1) - p);
        }
    }
    return out;
}

/// Expected positives become hard positives instead of being ignored.
template <typename T>
LossGrad<T> ep_loss(const std::vector<T>& f, const AnnotationVector& ann,
                    const ExpectedPositiveMask& expected) {
    const int64_t L = ann.num_classes();
    if (static_cast<int64_t>(expected.size()) != L)
        throw std::invalid_argument("ep_loss: mask size mismatch");
    LossGrad<T> out;
    out.grad.assign(f.size(), T(0));
    const T inv_l = T(1) / static_cast<T>(L);
    for (int64_t i = 0; i < L; ++i) {
        const T p = detail::clamp_prob(f[static_cast<size_t>(i)]);
        if (ann.z[static_cast<size_t>(i)] == Label::Positive || expected[static_cast<size_t>(i)] == 1) {
            out.value -= inv_l * std::log(p);
            out.grad[static_cast<size_t>(i)] = -inv_l / p;
        } else {
            out.value -= inv_l * std::log(T(1) - p);
            out.grad[static_cast<size_t>(i)] = inv_l / (T(1) - p);
        }
    }
    return out;
}

/// Annotated-positive cross entropy plus a squared penalty regressing the
/// probability sum towards the expected positive count k.
template <typename T>
LossGrad<T> epr_loss(const std::vector<T>& f, const AnnotationVector& ann, T k) {
    if (!(k > T(0))) throw std::invalid_argument("epr_loss: k must be > 0");
    const int64_t L = ann.num_classes();
    LossGrad<T> out;
    out.grad.assign(f.size(), T(0));
    const T inv_l = T(1) / static_cast<T>(L);
    T sum = T(0);
    for (int64_t i = 0; i < L; ++i) {
        const T p = detail::clamp_prob(f[static_cast<size_t>(i)]);
        sum += f[static_cast<size_t>(i)];
        if (ann.z[static_cast<size_t>(i)] == Label::Positive) {
            out.value -= inv_l * std::log(p);
            out.grad[static_cast<size_t>(i)] = -inv_l / p;
        }
    }
    const T resid = (sum - k) * inv_l;
    out.value += resid * resid;
    const T dpen = T(2) * resid * inv_l;
    for (auto& g : out.grad) g += dpen;
    return out;
}

/// l2-distance between predictions and their running-average estimate.
/// Unnormalized by element count; gradient defined as 0 at coincidence.
template <typename T>
LossGrad<T> cl_loss(const std::vector<T>& f, const std::vector<T>& s_prev, bool normalized = false) {
    if (f.size() != s_prev.size()) throw std::invalid_argument("cl_loss: size mismatch");
    LossGrad<T> out;
    out.grad.assign(f.size(), T(0));
    T sq = T(0);
    for (size_t i = 0; i < f.size(); ++i) {
        const T d = f[i] - s_prev[i];
        sq += d * d;
    }
    out.value = std::sqrt(sq);
    if (out.value > T(0)) {
        for (size_t i = 0; i < f.size(); ++i) out.grad[i] = (f[i] - s_prev[i]) / out.value;
    }
    if (normalized) {
        const T scale = T(1) / std::sqrt(static_cast<T>(f.size()));
        out.value *= scale;
        for (auto& g : out.grad) g *= scale;
    }
    return out;
}

/// l2-norm between a spatial score map and a detached target map of the same
/// shape. The caller builds the target through the heatmap read path.
template <typename T>
struct SpatialLossGrad {
    T value = T(0);
    Tensor<T> grad;
};

template <typename T>
SpatialLossGrad<T> scl_loss(const Tensor<T>& score_map, const Tensor<T>& target,
                            bool normalized = false) {
    if (!score_map.same_shape(target)) throw std::invalid_argument("scl_loss: shape mismatch");
    SpatialLossGrad<T> out;
    out.grad = Tensor<T>(score_map.shape);
    T sq = T(0);
    for (size_t i = 0; i < score_map.v.size(); ++i) {
        const T d = score_map.v[i] - target.v[i];
        sq += d * d;
    }
    out.value = std::sqrt(sq);
    if (out.value > T(0)) {
        for (size_t i = 0; i < score_map.v.size(); ++i)
            out.grad.v[i] = (score_map.v[i] - target.v[i]) / out.value;
    }
    if (normalized) {
        const T scale = T(1) / std::sqrt(static_cast<T>(score_map.v.size()));
        out.value *= scale;
        for (auto& g : out.grad.v) g *= scale;
    }
    return out;
}

/// gamma ramps linearly from 0 to 1 over the first warmup_epochs epochs.
inline double gamma_schedule(int64_t epoch, int64_t warmup_epochs) {
    if (warmup_epochs < 1) throw std::invalid_argument("gamma_schedule: warmup_epochs must be >= 1");
    return std::min(static_cast<double>(epoch) / static_cast<double>(warmup_epochs), 1.0);
}

/// Everything a combined objective may consume for one sample. Consistency
/// targets are detached supervision: no gradient flows into them.
template <typename T>
struct CombinedLossInputs {
    const std::vector<T>* f = nullptr;              // global probabilities
    const AnnotationVector* ann = nullptr;
    const ExpectedPositiveMask* expected = nullptr;  // EN / EP
    T k = T(0);                                      // EPR
    const std::vector<T>* s_prev = nullptr;          // CL target
    const Tensor<T>* score_map = nullptr;            // SCL input F
    const Tensor<T>* scl_target = nullptr;           // SCL target
    bool normalized_l2 = false;
};

template <typename T>
struct CombinedLossResult {
    T value = T(0);
    T primary_value = T(0);
    T consistency_value = T(0);
    std::vector<T> grad_f;  // d(value)/d(f)
    Tensor<T> grad_map;     // d(value)/d(F); empty unless SCL
};

template <typename T>
CombinedLossResult<T> combined_loss(PrimaryLoss primary, ConsistencyLoss consistency, T gamma,
                                    const CombinedLossInputs<T>& in) {
    if (gamma < T(0)) throw std::invalid_argument("combined_loss: gamma must be >= 0");
    CombinedLossResult<T> out;

    LossGrad<T> p;
    switch (primary) {
        case PrimaryLoss::Bce: p = bce_loss(*in.f, *in.ann); break;
        case PrimaryLoss::An: p = an_loss(*in.f, *in.ann); break;
        case PrimaryLoss::En: p = en_loss(*in.f, *in.ann, *in.expected); break;
        case PrimaryLoss::Ep: p = ep_loss(*in.f, *in.ann, *in.expected); break;
        case PrimaryLoss::Epr: p = epr_loss(*in.f, *in.ann, in.k); break;
    }
    out.primary_value = p.value;
    out.grad_f = std::move(p.grad);

    if (consistency == ConsistencyLoss::Cl) {
        LossGrad<T> c = cl_loss(*in.f, *in.s_prev, in.normalized_l2);
        out.consistency_value = c.value;
        for (size_t i = 0; i < out.grad_f.size(); ++i) out.grad_f[i] += gamma * c.grad[i];
    } else if (consistency == ConsistencyLoss::Scl) {
        SpatialLossGrad<T> c = scl_loss(*in.score_map, *in.scl_target, in.normalized_l2);
        out.consistency_value = c.value;
        out.grad_map = std::move(c.grad);
        for (auto& g : out.grad_map.v) g *= gamma;
    }

    out.value = out.primary_value + gamma * out.consistency_value;
    return out;
}

}  // namespace spcl
