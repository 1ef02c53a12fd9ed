#include "spcl/augment.hpp"

#include <algorithm>
#include <cmath>

namespace spcl {

PixelRect discretize_rect(const AugmentationTransform& t, int64_t grid_w, int64_t grid_h) {
    auto round_half_up = [](double v) { return static_cast<int64_t>(std::floor(v + 0.5)); };
    PixelRect r;
    r.x0 = round_half_up(t.cx * static_cast<double>(grid_w));
    r.y0 = round_half_up(t.cy * static_cast<double>(grid_h));
    r.x1 = round_half_up((t.cx + t.cw) * static_cast<double>(grid_w));
    r.y1 = round_half_up((t.cy + t.ch) * static_cast<double>(grid_h));
    r.x0 = std::clamp<int64_t>(r.x0, 0, grid_w - 1);
    r.y0 = std::clamp<int64_t>(r.y0, 0, grid_h - 1);
    r.x1 = std::clamp<int64_t>(r.x1, r.x0 + 1, grid_w);
    r.y1 = std::clamp<int64_t>(r.y1, r.y0 + 1, grid_h);
    return r;
}

AugmentationTransform sample_transform(Rng& rng, const AugmentConfig& cfg) {
    if (!(cfg.area_min > 0.0) || cfg.area_min > cfg.area_max || cfg.area_max > 1.0)
        throw std::invalid_argument("sample_transform: need 0 < area_min <= area_max <= 1");

    const double area = rng.uniform(cfg.area_min, cfg.area_max);
    double cw, ch;
    if (cfg.square) {
        cw = ch = std::sqrt(area);
    } else {
        // aspect = width / height, resampled until the crop fits the frame
        for (int attempt = 0;; ++attempt) {
            const double aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
            cw = std::sqrt(area * aspect);
            ch = std::sqrt(area / aspect);
            if ((cw <= 1.0 && ch <= 1.0) || attempt >= 16) break;
        }
        cw = std::min(cw, 1.0);
        ch = std::min(ch, 1.0);
    }

    AugmentationTransform t;
    t.cw = cw;
    t.ch = ch;
    t.cx = rng.uniform(0.0, 1.0 - cw);
    t.cy = rng.uniform(0.0, 1.0 - ch);
    t.hflip = rng.bernoulli(cfg.hflip_prob);
    return t;
}

HeatmapRegion region_on_heatmap(const AugmentationTransform& t, int64_t w) {
    if (w < 1) throw std::invalid_argument("region_on_heatmap: W must be >= 1");
    return HeatmapRegion{discretize_rect(t, w, w), t.hflip};
}

}  // namespace spcl
