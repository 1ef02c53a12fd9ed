#include "spcl/stores.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "spcl/image_io.hpp"

namespace spcl {

ScoreEstimateStore::ScoreEstimateStore(int64_t num_samples, int64_t num_classes, float momentum)
    : num_samples_(num_samples), num_classes_(num_classes), momentum_(momentum) {
    if (num_samples < 1 || num_classes < 1)
        throw std::invalid_argument("ScoreEstimateStore: need at least one sample and class");
    if (!(momentum >= 0.0f && momentum <= 1.0f))
        throw std::invalid_argument("ScoreEstimateStore: momentum must be in [0,1]");
    s_.assign(static_cast<size_t>(num_samples * num_classes), 0.0f);
    last_epoch_.assign(static_cast<size_t>(num_samples), -1);
}

void ScoreEstimateStore::init_from_annotations(const std::vector<AnnotationVector>& anns) {
    if (static_cast<int64_t>(anns.size()) != num_samples_)
        throw std::invalid_argument("ScoreEstimateStore: annotation count mismatch");
    for (int64_t n = 0; n < num_samples_; ++n) {
        for (int64_t i = 0; i < num_classes_; ++i)
            s_[static_cast<size_t>(n * num_classes_ + i)] =
                anns[static_cast<size_t>(n)].z[static_cast<size_t>(i)] == Label::Positive ? 1.0f : 0.0f;
    }
    std::fill(last_epoch_.begin(), last_epoch_.end(), -1);
}

void ScoreEstimateStore::update(int64_t sample, const std::vector<float>& f, int64_t epoch) {
    if (static_cast<int64_t>(f.size()) != num_classes_)
        throw std::invalid_argument("ScoreEstimateStore::update: class count mismatch");
    int64_t& last = last_epoch_[static_cast<size_t>(sample)];
    if (last == epoch)
        throw std::logic_error("ScoreEstimateStore::update: sample " + std::to_string(sample) +
                               " updated twice in epoch " + std::to_string(epoch));
    last = epoch;
    float* s = s_.data() + sample * num_classes_;
    for (int64_t i = 0; i < num_classes_; ++i)
        s[i] = momentum_ * s[i] + (1.0f - momentum_) * f[static_cast<size_t>(i)];
}

void ScoreEstimateStore::to_arrays(ArrayStore& out, const std::string& prefix) const {
    out.put_f32(prefix + ".s", {num_samples_, num_classes_}, s_.data());
    out.put_i64(prefix + ".last_epoch", {num_samples_}, last_epoch_.data());
    const double mu = momentum_;
    out.put_f64(prefix + ".momentum", {1}, &mu);
}

void ScoreEstimateStore::from_arrays(const ArrayStore& in, const std::string& prefix) {
    auto shape = in.shape_of(prefix + ".s");
    if (shape.size() != 2) throw std::runtime_error("score store: bad shape on load");
    num_samples_ = shape[0];
    num_classes_ = shape[1];
    s_ = in.get_f32(prefix + ".s");
    last_epoch_ = in.get_i64(prefix + ".last_epoch");
    momentum_ = static_cast<float>(in.get_scalar_f64(prefix + ".momentum"));
}

HeatmapStore::HeatmapStore(int64_t num_samples, int64_t width, int64_t num_classes,
                           float momentum, StorePrecision precision)
    : num_samples_(num_samples),
      width_(width),
      num_classes_(num_classes),
      momentum_(momentum),
      precision_(precision),
      slots_(num_classes) {
    if (num_samples < 1 || width < 1 || num_classes < 1)
        throw std::invalid_argument("HeatmapStore: nonpositive dimensions");
    if (!(momentum >= 0.0f && momentum <= 1.0f))
        throw std::invalid_argument("HeatmapStore: momentum must be in [0,1]");
    const size_t total = static_cast<size_t>(num_samples * width * width * num_classes);
    if (precision_ == StorePrecision::F32)
        data_f32_.assign(total, 0.0f);
    else
        data_f16_.assign(total, 0);
}

float HeatmapStore::load_value(int64_t flat) const {
    return precision_ == StorePrecision::F32 ? data_f32_[static_cast<size_t>(flat)]
                                             : half_to_float(data_f16_[static_cast<size_t>(flat)]);
}

void HeatmapStore::store_value(int64_t flat, float v) {
    if (precision_ == StorePrecision::F32)
        data_f32_[static_cast<size_t>(flat)] = v;
    else
        data_f16_[static_cast<size_t>(flat)] = float_to_half(v);
}

int64_t HeatmapStore::channel_slot(int64_t sample, int64_t channel) const {
    if (!topk_active_) return channel;
    return retained_[static_cast<size_t>(sample * num_classes_ + channel)];
}

bool HeatmapStore::channel_retained(int64_t sample, int64_t channel) const {
    return channel_slot(sample, channel) >= 0;
}

void HeatmapStore::init_from_annotations(const std::vector<AnnotationVector>& anns) {
    if (static_cast<int64_t>(anns.size()) != num_samples_)
        throw std::invalid_argument("HeatmapStore: annotation count mismatch");
    if (topk_active_) throw std::logic_error("HeatmapStore: cannot reinitialize after pruning");
    for (int64_t n = 0; n < num_samples_; ++n) {
        for (int64_t i = 0; i < num_classes_; ++i) {
            if (anns[static_cast<size_t>(n)].z[static_cast<size_t>(i)] != Label::Positive) continue;
            for (int64_t y = 0; y < width_; ++y)
                for (int64_t x = 0; x < width_; ++x) store_value(flat_index(n, y, x, i), 1.0f);
        }
    }
}

void HeatmapStore::update(int64_t sample, const TensorF& score_map, const AugmentationTransform& t) {
    if (score_map.rank() != 3 || score_map.shape[2] != num_classes_)
        throw std::invalid_argument("HeatmapStore::update: score map shape mismatch");
    const HeatmapRegion region = region_on_heatmap(t, width_);
    const int64_t rh = region.rect.height(), rw = region.rect.width();

    TensorF canonical = region.hflip ? hflip(score_map) : score_map;
    TensorF resized = bilinear_resize(canonical, rh, rw);

    const float mu = momentum_;
    for (int64_t y = 0; y < rh; ++y) {
        for (int64_t x = 0; x < rw; ++x) {
            for (int64_t c = 0; c < num_classes_; ++c) {
                const int64_t slot = channel_slot(sample, c);
                if (slot < 0) continue;
                const int64_t flat = flat_index(sample, region.rect.y0 + y, region.rect.x0 + x, slot);
                store_value(flat, mu * load_value(flat) + (1.0f - mu) * resized.at(y, x, c));
            }
        }
    }
}

TensorF HeatmapStore::read_region(int64_t sample, const HeatmapRegion& region, int64_t g) const {
    const int64_t rh = region.rect.height(), rw = region.rect.width();
    if (rh < 1 || rw < 1) throw std::invalid_argument("HeatmapStore: degenerate region");
    TensorF crop({rh, rw, num_classes_});
    for (int64_t y = 0; y < rh; ++y) {
        for (int64_t x = 0; x < rw; ++x) {
            for (int64_t c = 0; c < num_classes_; ++c) {
                const int64_t slot = channel_slot(sample, c);
                crop.at(y, x, c) =
                    slot < 0 ? 0.0f
                             : load_value(flat_index(sample, region.rect.y0 + y, region.rect.x0 + x, slot));
            }
        }
    }
    if (region.hflip) crop = hflip(crop);
    return bilinear_resize(crop, g, g);
}

void HeatmapStore::retain_topk(int64_t k, const ScoreEstimateStore& scores,
                               const std::vector<AnnotationVector>& anns) {
    if (k < 1) throw std::invalid_argument("HeatmapStore::retain_topk: k must be >= 1");
    if (topk_active_) throw std::logic_error("HeatmapStore::retain_topk: already pruned");
    if (scores.num_samples() != num_samples_ || scores.num_classes() != num_classes_)
        throw std::invalid_argument("HeatmapStore::retain_topk: score store shape mismatch");
    k = std::min(k, num_classes_);

    retained_.assign(static_cast<size_t>(num_samples_ * num_classes_), -1);
    std::vector<int64_t> order(static_cast<size_t>(num_classes_));

    // annotated positives are exempt from pruning, so a sample may need more
    // slots than k
    std::vector<int64_t> keep_count(static_cast<size_t>(num_samples_));
    int64_t new_slots = 1;
    for (int64_t n = 0; n < num_samples_; ++n) {
        const int64_t annotated = anns[static_cast<size_t>(n)].count(Label::Positive);
        keep_count[static_cast<size_t>(n)] = std::min(std::max(k, annotated), num_classes_);
        new_slots = std::max(new_slots, keep_count[static_cast<size_t>(n)]);
    }
    std::vector<float> new_f32;
    std::vector<uint16_t> new_f16;
    const size_t total = static_cast<size_t>(num_samples_ * width_ * width_ * new_slots);
    if (precision_ == StorePrecision::F32)
        new_f32.assign(total, 0.0f);
    else
        new_f16.assign(total, 0);

    for (int64_t n = 0; n < num_samples_; ++n) {
        const float* s = scores.scores(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            const bool pa = anns[static_cast<size_t>(n)].z[static_cast<size_t>(a)] == Label::Positive;
            const bool pb = anns[static_cast<size_t>(n)].z[static_cast<size_t>(b)] == Label::Positive;
            if (pa != pb) return pa;  // annotated positives first
            if (s[a] != s[b]) return s[a] > s[b];
            return a < b;
        });

        for (int64_t slot = 0; slot < keep_count[static_cast<size_t>(n)]; ++slot) {
            const int64_t c = order[static_cast<size_t>(slot)];
            retained_[static_cast<size_t>(n * num_classes_ + c)] = static_cast<int32_t>(slot);
            // copy the surviving channel into its new slot
            for (int64_t y = 0; y < width_; ++y) {
                for (int64_t x = 0; x < width_; ++x) {
                    const int64_t src = ((n * width_ + y) * width_ + x) * slots_ + c;
                    const int64_t dst = ((n * width_ + y) * width_ + x) * new_slots + slot;
                    if (precision_ == StorePrecision::F32)
                        new_f32[static_cast<size_t>(dst)] = data_f32_[static_cast<size_t>(src)];
                    else
                        new_f16[static_cast<size_t>(dst)] = data_f16_[static_cast<size_t>(src)];
                }
            }
        }
    }

    slots_ = new_slots;
    data_f32_ = std::move(new_f32);
    data_f16_ = std::move(new_f16);
    topk_active_ = true;
}

TensorF HeatmapStore::read_channel(int64_t sample, int64_t channel) const {
    TensorF out({width_, width_, 1});
    const int64_t slot = channel_slot(sample, channel);
    if (slot < 0) return out;
    for (int64_t y = 0; y < width_; ++y)
        for (int64_t x = 0; x < width_; ++x)
            out.at(y, x, 0) = load_value(flat_index(sample, y, x, slot));
    return out;
}

int64_t HeatmapStore::storage_bytes() const {
    return memory_bytes(num_samples_, slots_, width_,
                        precision_ == StorePrecision::F32 ? 4 : 2);
}

void HeatmapStore::to_arrays(ArrayStore& out, const std::string& prefix) const {
    const std::vector<int64_t> shape{num_samples_, width_, width_, slots_};
    if (precision_ == StorePrecision::F32)
        out.put_f32(prefix + ".h", shape, data_f32_.data());
    else
        out.put_u16(prefix + ".h", shape, data_f16_.data());
    out.put_scalar_i64(prefix + ".num_classes", num_classes_);
    out.put_scalar_i64(prefix + ".topk_active", topk_active_ ? 1 : 0);
    const double mu = momentum_;
    out.put_f64(prefix + ".momentum", {1}, &mu);
    if (topk_active_) {
        std::vector<int64_t> retained(retained_.begin(), retained_.end());
        out.put_i64(prefix + ".retained", {num_samples_, num_classes_}, retained.data());
    }
}

void HeatmapStore::from_arrays(const ArrayStore& in, const std::string& prefix) {
    auto shape = in.shape_of(prefix + ".h");
    if (shape.size() != 4) throw std::runtime_error("heatmap store: bad shape on load");
    num_samples_ = shape[0];
    width_ = shape[1];
    slots_ = shape[3];
    num_classes_ = in.get_scalar_i64(prefix + ".num_classes");
    momentum_ = static_cast<float>(in.get_scalar_f64(prefix + ".momentum"));
    topk_active_ = in.get_scalar_i64(prefix + ".topk_active") != 0;
    const auto& a = in.raw(prefix + ".h");
    if (a.dtype == DType::F32) {
        precision_ = StorePrecision::F32;
        data_f32_ = in.get_f32(prefix + ".h");
        data_f16_.clear();
    } else {
        precision_ = StorePrecision::F16;
        data_f16_ = in.get_u16(prefix + ".h");
        data_f32_.clear();
    }
    if (topk_active_) {
        auto retained = in.get_i64(prefix + ".retained");
        retained_.assign(retained.begin(), retained.end());
    } else {
        retained_.clear();
    }
}

std::vector<HeatmapExportEntry> export_heatmaps(const HeatmapStore& store,
                                                const std::vector<int64_t>& samples,
                                                const std::vector<int64_t>& channels,
                                                const std::string& out_dir,
                                                const std::vector<int64_t>* display_ids) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<HeatmapExportEntry> entries;

    for (size_t si = 0; si < samples.size(); ++si) {
        const int64_t n = samples[si];
        if (n < 0 || n >= store.num_samples())
            throw std::invalid_argument("export_heatmaps: sample " + std::to_string(n) + " out of range");
        for (int64_t c : channels) {
            if (c < 0 || c >= store.num_classes())
                throw std::invalid_argument("export_heatmaps: class " + std::to_string(c) + " out of range");
            HeatmapExportEntry e;
            e.sample = display_ids ? (*display_ids)[si] : n;
            e.channel = c;
            e.pruned = !store.channel_retained(n, c);
            TensorF map = store.read_channel(n, c);
            e.min_value = *std::min_element(map.v.begin(), map.v.end());
            e.max_value = *std::max_element(map.v.begin(), map.v.end());
            e.file = "sample" + std::to_string(e.sample) + "_class" + std::to_string(c) + ".pgm";
            write_pgm((fs::path(out_dir) / e.file).string(), map);
            entries.push_back(std::move(e));
        }
    }

    std::ofstream manifest(fs::path(out_dir) / "manifest.csv");
    manifest << "sample,class,min,max,file\n";
    for (const auto& e : entries) {
        manifest << e.sample << ',' << e.channel << ',' << e.min_value << ',' << e.max_value << ','
                 << e.file << '\n';
    }
    return entries;
}

}  // namespace spcl
