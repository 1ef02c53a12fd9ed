#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spcl/annotation.hpp"
#include "spcl/augment.hpp"
#include "spcl/checkpoint.hpp"
#include "spcl/half.hpp"
#include "spcl/tensor.hpp"

namespace spcl {

/// Exact footprint of a dense heatmap store.
inline int64_t memory_bytes(int64_t n, int64_t l, int64_t w, int64_t bytes_per_value) {
    return n * l * w * w * bytes_per_value;
}

/// Per-sample EMA of global class scores. Initialized to 1 on annotated
/// positives and 0 elsewhere; one update per sample per epoch.
class ScoreEstimateStore {
public:
    ScoreEstimateStore() = default;
    ScoreEstimateStore(int64_t num_samples, int64_t num_classes, float momentum);

    void init_from_annotations(const std::vector<AnnotationVector>& anns);

    /// s_n <- mu * s_n + (1 - mu) * f. Throws if the sample was already
    /// updated in this epoch; that always indicates a scheduling bug.
    void update(int64_t sample, const std::vector<float>& f, int64_t epoch);

    const float* scores(int64_t sample) const { return s_.data() + sample * num_classes_; }
    template <typename T>
    std::vector<T> read(int64_t sample) const {
        const float* p = scores(sample);
        return std::vector<T>(p, p + num_classes_);
    }

    int64_t num_samples() const { return num_samples_; }
    int64_t num_classes() const { return num_classes_; }
    float momentum() const { return momentum_; }

    void to_arrays(ArrayStore& out, const std::string& prefix) const;
    void from_arrays(const ArrayStore& in, const std::string& prefix);

private:
    int64_t num_samples_ = 0;
    int64_t num_classes_ = 0;
    float momentum_ = 0.8f;
    std::vector<float> s_;             // N x L
    std::vector<int64_t> last_epoch_;  // per sample; -1 = never updated
};

enum class StorePrecision { F32, F16 };

inline StorePrecision parse_store_precision(const std::string& name) {
    if (name == "f32") return StorePrecision::F32;
    if (name == "f16") return StorePrecision::F16;
    throw std::invalid_argument("unknown store precision '" + name + "' (expected f32|f16)");
}

/// Per-sample running-average heatmaps in the canonical full-image frame.
/// Only the region visible under the recorded transform is ever written; the
/// rest of the map is untouched. Supports an optional top-k channel subset
/// where pruned channels read back as all-zero.
class HeatmapStore {
public:
    HeatmapStore() = default;
    HeatmapStore(int64_t num_samples, int64_t width, int64_t num_classes, float momentum,
                 StorePrecision precision = StorePrecision::F32);

    void init_from_annotations(const std::vector<AnnotationVector>& anns);

    /// Blend a G x G x L score map (as produced on the transformed input)
    /// into the visible region: unflip, resize to the region's pixel size,
    /// then EMA-blend. Pixels outside the region keep their exact bits.
    void update(int64_t sample, const TensorF& score_map, const AugmentationTransform& t);

    /// Crop the stored map by the transform's region, flip if needed, and
    /// resize to G x G. Pruned channels come back as zeros.
    template <typename T>
    Tensor<T> read_target(int64_t sample, const AugmentationTransform& t, int64_t g) const {
        return read_region(sample, region_on_heatmap(t, width_), g).template cast<T>();
    }

    /// Keep only the k top-scoring channels per sample (annotated positives
    /// always survive). Invoked once, after the warmup stage.
    void retain_topk(int64_t k, const ScoreEstimateStore& scores,
                     const std::vector<AnnotationVector>& anns);

    bool topk_active() const { return topk_active_; }
    bool channel_retained(int64_t sample, int64_t channel) const;
    /// Full map of one channel in the canonical frame (zeros when pruned).
    TensorF read_channel(int64_t sample, int64_t channel) const;

    int64_t num_samples() const { return num_samples_; }
    int64_t width() const { return width_; }
    int64_t num_classes() const { return num_classes_; }
    float momentum() const { return momentum_; }
    StorePrecision precision() const { return precision_; }
    int64_t storage_bytes() const;

    void to_arrays(ArrayStore& out, const std::string& prefix) const;
    void from_arrays(const ArrayStore& in, const std::string& prefix);

private:
    TensorF read_region(int64_t sample, const HeatmapRegion& region, int64_t g) const;
    float load_value(int64_t flat) const;
    void store_value(int64_t flat, float v);
    // slot of a channel in the per-sample storage, -1 when pruned
    int64_t channel_slot(int64_t sample, int64_t channel) const;
    int64_t flat_index(int64_t sample, int64_t y, int64_t x, int64_t slot) const {
        return ((sample * width_ + y) * width_ + x) * slots_ + slot;
    }

    int64_t num_samples_ = 0;
    int64_t width_ = 0;
    int64_t num_classes_ = 0;
    float momentum_ = 0.8f;
    StorePrecision precision_ = StorePrecision::F32;

    bool topk_active_ = false;
    int64_t slots_ = 0;                      // == num_classes_ until pruned
    std::vector<int32_t> retained_;          // N x num_classes_: channel -> slot
    std::vector<float> data_f32_;            // N x W x W x slots_
    std::vector<uint16_t> data_f16_;
};

struct HeatmapExportEntry {
    int64_t sample = 0;
    int64_t channel = 0;
    float min_value = 0.0f;
    float max_value = 0.0f;
    std::string file;
    bool pruned = false;
};

/// Write one 8-bit grayscale PGM per (sample, channel) plus a CSV manifest.
/// Pruned channels are exported as all-zero images and flagged in the result.
/// display_ids, when given, maps store indices to the sample ids used in
/// filenames and the manifest.
std::vector<HeatmapExportEntry> export_heatmaps(const HeatmapStore& store,
                                                const std::vector<int64_t>& samples,
                                                const std::vector<int64_t>& channels,
                                                const std::string& out_dir,
                                                const std::vector<int64_t>* display_ids = nullptr);

}  // namespace spcl
