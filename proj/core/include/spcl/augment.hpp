#pragma once

#include <cstdint>
#include <stdexcept>

#include "spcl/rng.hpp"
#include "spcl/tensor.hpp"

namespace spcl {

/// Crop rectangle in normalized [0,1] coordinates of the canonical square
/// frame, plus a horizontal-flip flag. Recorded for every training input so
/// the heatmap store can be written and read through the same geometry.
struct AugmentationTransform {
    double cx = 0.0;
    double cy = 0.0;
    double cw = 1.0;
    double ch = 1.0;
    bool hflip = false;

    static AugmentationTransform identity() { return {}; }
};

/// Integer pixel rectangle; x1/y1 exclusive.
struct PixelRect {
    int64_t x0 = 0;
    int64_t y0 = 0;
    int64_t x1 = 0;
    int64_t y1 = 0;

    int64_t width() const { return x1 - x0; }
    int64_t height() const { return y1 - y0; }
};

/// Pixel rectangle on the W x W heatmap grid plus the flip flag.
struct HeatmapRegion {
    PixelRect rect;
    bool hflip = false;
};

struct AugmentConfig {
    double area_min = 0.25;
    double area_max = 1.0;
    bool square = true;        // aspect-ratio jitter off by default
    double hflip_prob = 0.5;
    double aspect_min = 0.75;  // used only when square == false
    double aspect_max = 4.0 / 3.0;
};

/// Round a normalized crop rectangle onto an integer grid, half-up at the
/// corners, clamped to at least one pixel each way. Single source of truth
/// for the image crop, the heatmap write and the heatmap read.
PixelRect discretize_rect(const AugmentationTransform& t, int64_t grid_w, int64_t grid_h);

/// Draw a crop with area fraction uniform in [area_min, area_max], position
/// uniform among valid placements, and a fair flip.
AugmentationTransform sample_transform(Rng& rng, const AugmentConfig& cfg);

/// Discretize a transform's crop rectangle onto the W x W heatmap grid.
HeatmapRegion region_on_heatmap(const AugmentationTransform& t, int64_t w);

/// Crop, flip and resize the canonical frame the way the data pipeline feeds
/// the model.
template <typename T>
Tensor<T> apply_to_image(const Tensor<T>& image, const AugmentationTransform& t,
                         int64_t out_h, int64_t out_w) {
    if (image.rank() != 3) throw std::invalid_argument("apply_to_image: rank-3 image required");
    const int64_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
    const PixelRect r = discretize_rect(t, w, h);

    Tensor<T> cropped({r.height(), r.width(), c});
    for (int64_t y = r.y0; y < r.y1; ++y)
        for (int64_t x = r.x0; x < r.x1; ++x)
            for (int64_t k = 0; k < c; ++k) cropped.at(y - r.y0, x - r.x0, k) = image.at(y, x, k);

    if (t.hflip) cropped = hflip(cropped);
    return bilinear_resize(cropped, out_h, out_w);
}

}  // namespace spcl
