#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "spcl/half.hpp"
#include "spcl/image_io.hpp"
#include "spcl/rng.hpp"
#include "spcl/stores.hpp"

using namespace spcl;

namespace {

std::vector<AnnotationVector> single_positive_anns(int64_t n, int64_t l, Rng& rng) {
    std::vector<AnnotationVector> anns(static_cast<size_t>(n));
    for (auto& a : anns) {
        a.z.assign(static_cast<size_t>(l), Label::Unknown);
        a.z[static_cast<size_t>(rng.uniform_int(0, l - 1))] = Label::Positive;
    }
    return anns;
}

TensorF smooth_map(Rng& rng, int64_t g, int64_t l) {
    TensorF coarse({3, 3, l});
    for (auto& v : coarse.v) v = static_cast<float>(rng.uniform01());
    return bilinear_resize(coarse, g, g);
}

}  // namespace

TEST_CASE("score store initialization and frozen EMA") {
    Rng rng(1);
    auto anns = single_positive_anns(10, 4, rng);
    ScoreEstimateStore store(10, 4, 1.0f);  // mu = 1: frozen
    store.init_from_annotations(anns);
    for (int64_t n = 0; n < 10; ++n)
        for (int64_t i = 0; i < 4; ++i)
            CHECK(store.scores(n)[i] == (anns[static_cast<size_t>(n)].z[static_cast<size_t>(i)] ==
                                                 Label::Positive
                                             ? 1.0f
                                             : 0.0f));

    std::vector<float> f{0.3f, 0.3f, 0.3f, 0.3f};
    const std::vector<float> before(store.scores(0), store.scores(0) + 4);
    store.update(0, f, 0);
    for (int64_t i = 0; i < 4; ++i) CHECK(store.scores(0)[i] == before[static_cast<size_t>(i)]);
}

TEST_CASE("score EMA single step") {
    Rng rng(2);
    auto anns = single_positive_anns(1, 2, rng);
    anns[0].z = {Label::Positive, Label::Unknown};
    ScoreEstimateStore store(1, 2, 0.8f);
    store.init_from_annotations(anns);
    store.update(0, {0.5f, 0.5f}, 0);
    CHECK(store.scores(0)[0] == doctest::Approx(0.9).epsilon(1e-6));   // 0.8*1 + 0.2*0.5
    CHECK(store.scores(0)[1] == doctest::Approx(0.1).epsilon(1e-6));   // 0.8*0 + 0.2*0.5
}

TEST_CASE("score EMA closed form after T identical updates") {
    Rng rng(3);
    const float mu = 0.8f;
    auto anns = single_positive_anns(1, 3, rng);
    anns[0].z = {Label::Positive, Label::Unknown, Label::Unknown};
    ScoreEstimateStore store(1, 3, mu);
    store.init_from_annotations(anns);
    const std::vector<float> c{0.25f, 0.6f, 0.9f};
    const int64_t T = 37;
    for (int64_t t = 0; t < T; ++t) store.update(0, c, t);
    const double mu_t = std::pow(static_cast<double>(mu), static_cast<double>(T));
    for (int64_t i = 0; i < 3; ++i) {
        const double s0 = i == 0 ? 1.0 : 0.0;
        const double expected = mu_t * s0 + (1.0 - mu_t) * static_cast<double>(c[static_cast<size_t>(i)]);
        CHECK(std::abs(store.scores(0)[i] - expected) < 1e-6);
    }
}

TEST_CASE("double update within an epoch is rejected") {
    Rng rng(4);
    auto anns = single_positive_anns(2, 2, rng);
    ScoreEstimateStore store(2, 2, 0.8f);
    store.init_from_annotations(anns);
    store.update(0, {0.1f, 0.2f}, 3);
    CHECK_THROWS_AS(store.update(0, {0.1f, 0.2f}, 3), std::logic_error);
    store.update(0, {0.1f, 0.2f}, 4);  // next epoch is fine
    store.update(1, {0.1f, 0.2f}, 3);  // other samples too
}

TEST_CASE("scores stay in [0,1] under random update sequences") {
    Rng rng(5);
    auto anns = single_positive_anns(4, 5, rng);
    ScoreEstimateStore store(4, 5, 0.8f);
    store.init_from_annotations(anns);
    for (int64_t epoch = 0; epoch < 50; ++epoch) {
        for (int64_t n = 0; n < 4; ++n) {
            std::vector<float> f(5);
            for (auto& v : f) v = static_cast<float>(rng.uniform01());
            store.update(n, f, epoch);
            for (int64_t i = 0; i < 5; ++i) {
                CHECK(store.scores(n)[i] >= 0.0f);
                CHECK(store.scores(n)[i] <= 1.0f);
            }
        }
    }
}

TEST_CASE("heatmap store initialization matches the annotated channel") {
    Rng rng(6);
    const int64_t w = 8, l = 3;
    auto anns = single_positive_anns(2, l, rng);
    HeatmapStore store(2, w, l, 0.8f);
    store.init_from_annotations(anns);
    for (int64_t n = 0; n < 2; ++n) {
        for (int64_t c = 0; c < l; ++c) {
            const auto channel = store.read_channel(n, c);
            const float expected =
                anns[static_cast<size_t>(n)].z[static_cast<size_t>(c)] == Label::Positive ? 1.0f : 0.0f;
            for (float v : channel.v) CHECK(v == expected);
        }
    }
}

TEST_CASE("identity update blends the whole map") {
    Rng rng(7);
    const int64_t w = 8, g = 4, l = 2;
    auto anns = single_positive_anns(1, l, rng);
    anns[0].z = {Label::Positive, Label::Unknown};
    HeatmapStore store(1, w, l, 0.8f);
    store.init_from_annotations(anns);

    TensorF f({g, g, l});
    for (int64_t i = 0; i < g * g; ++i) {
        f.v[static_cast<size_t>(i * l)] = 0.5f;
        f.v[static_cast<size_t>(i * l + 1)] = 0.25f;
    }
    store.update(0, f, AugmentationTransform::identity());
    const auto c0 = store.read_channel(0, 0);
    const auto c1 = store.read_channel(0, 1);
    for (float v : c0.v) CHECK(v == doctest::Approx(0.8 * 1.0 + 0.2 * 0.5).epsilon(1e-6));
    for (float v : c1.v) CHECK(v == doctest::Approx(0.8 * 0.0 + 0.2 * 0.25).epsilon(1e-6));
}

TEST_CASE("pixels outside the crop region keep their exact bits") {
    Rng rng(8);
    const int64_t w = 16, g = 8, l = 3;
    auto anns = single_positive_anns(1, l, rng);
    HeatmapStore store(1, w, l, 0.8f);
    store.init_from_annotations(anns);

    AugmentConfig aug;
    for (int trial = 0; trial < 200; ++trial) {
        // snapshot
        std::vector<TensorF> before;
        for (int64_t c = 0; c < l; ++c) before.push_back(store.read_channel(0, c));

        const auto t = sample_transform(rng, aug);
        TensorF f({g, g, l});
        for (auto& v : f.v) v = static_cast<float>(rng.uniform01());
        store.update(0, f, t);

        const auto region = region_on_heatmap(t, w);
        for (int64_t c = 0; c < l; ++c) {
            const auto after = store.read_channel(0, c);
            for (int64_t y = 0; y < w; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    const bool inside = y >= region.rect.y0 && y < region.rect.y1 &&
                                        x >= region.rect.x0 && x < region.rect.x1;
                    if (!inside)
                        CHECK(after.at(y, x, 0) == before[static_cast<size_t>(c)].at(y, x, 0));
                }
            }
        }
    }
}

TEST_CASE("flip update matches an independent two-path computation") {
    Rng rng(9);
    const int64_t w = 16, g = 8, l = 2;
    auto anns = single_positive_anns(1, l, rng);
    HeatmapStore store(1, w, l, 0.8f);
    store.init_from_annotations(anns);

    AugmentationTransform t;
    t.cx = 0.25;
    t.cy = 0.125;
    t.cw = 0.5;
    t.ch = 0.5;
    t.hflip = true;

    TensorF f({g, g, l});
    for (auto& v : f.v) v = static_cast<float>(rng.uniform01());

    std::vector<TensorF> before;
    for (int64_t c = 0; c < l; ++c) before.push_back(store.read_channel(0, c));

    store.update(0, f, t);

    const auto region = region_on_heatmap(t, w);
    const TensorF resized = bilinear_resize(hflip(f), region.rect.height(), region.rect.width());
    for (int64_t c = 0; c < l; ++c) {
        const auto after = store.read_channel(0, c);
        for (int64_t y = 0; y < region.rect.height(); ++y) {
            for (int64_t x = 0; x < region.rect.width(); ++x) {
                const float expected = 0.8f * before[static_cast<size_t>(c)].at(region.rect.y0 + y,
                                                                                region.rect.x0 + x, 0) +
                                       0.2f * resized.at(y, x, c);
                CHECK(after.at(region.rect.y0 + y, region.rect.x0 + x, 0) ==
                      doctest::Approx(expected).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("fresh store reads all-ones on the annotated channel for any transform") {
    Rng rng(10);
    const int64_t w = 16, g = 8, l = 4;
    auto anns = single_positive_anns(1, l, rng);
    anns[0].z.assign(static_cast<size_t>(l), Label::Unknown);
    anns[0].z[2] = Label::Positive;
    HeatmapStore store(1, w, l, 0.8f);
    store.init_from_annotations(anns);

    AugmentConfig aug;
    for (int trial = 0; trial < 50; ++trial) {
        const auto t = sample_transform(rng, aug);
        const auto target = store.read_target<float>(0, t, g);
        for (int64_t p = 0; p < g * g; ++p)
            for (int64_t c = 0; c < l; ++c)
                CHECK(target.v[static_cast<size_t>(p * l + c)] == (c == 2 ? 1.0f : 0.0f));
    }
}

TEST_CASE("identity read equals a plain resize of the stored map") {
    Rng rng(11);
    const int64_t w = 16, g = 8, l = 2;
    auto anns = single_positive_anns(1, l, rng);
    HeatmapStore store(1, w, l, 0.0f);  // mu = 0: store holds the last write
    store.init_from_annotations(anns);
    TensorF f({g, g, l});
    for (auto& v : f.v) v = static_cast<float>(rng.uniform01());
    store.update(0, f, AugmentationTransform::identity());

    TensorF stored({w, w, l});
    for (int64_t c = 0; c < l; ++c) {
        const auto channel = store.read_channel(0, c);
        for (int64_t y = 0; y < w; ++y)
            for (int64_t x = 0; x < w; ++x) stored.at(y, x, c) = channel.at(y, x, 0);
    }
    const auto expected = bilinear_resize(stored, g, g);
    const auto target = store.read_target<float>(0, AugmentationTransform::identity(), g);
    for (size_t i = 0; i < expected.v.size(); ++i)
        CHECK(target.v[i] == doctest::Approx(expected.v[i]).epsilon(1e-6));
}

TEST_CASE("write then read with the same transform round-trips within 0.05 MAE") {
    Rng rng(12);
    const int64_t w = 16, g = 8, l = 3;  // W = 2G
    AugmentConfig aug;
    for (int trial = 0; trial < 30; ++trial) {
        auto anns = single_positive_anns(1, l, rng);
        HeatmapStore store(1, w, l, 0.0f);  // mu = 0: target should reproduce F
        store.init_from_annotations(anns);
        const auto t = sample_transform(rng, aug);
        const TensorF f = smooth_map(rng, g, l);  // score maps are smooth in practice
        store.update(0, f, t);
        const auto target = store.read_target<float>(0, t, g);
        double mae = 0.0;
        for (size_t i = 0; i < f.v.size(); ++i) mae += std::abs(target.v[i] - f.v[i]);
        mae /= static_cast<double>(f.v.size());
        CHECK(mae <= 0.05);
    }
}

TEST_CASE("topk retention") {
    Rng rng(13);
    const int64_t n = 6, w = 8, g = 4, l = 5;
    auto anns = single_positive_anns(n, l, rng);
    ScoreEstimateStore scores(n, l, 0.5f);
    scores.init_from_annotations(anns);
    for (int64_t s = 0; s < n; ++s) {
        std::vector<float> f(static_cast<size_t>(l));
        for (auto& v : f) v = static_cast<float>(rng.uniform01());
        scores.update(s, f, 0);
    }

    SUBCASE("k = L keeps reads identical") {
        HeatmapStore dense(n, w, l, 0.8f);
        dense.init_from_annotations(anns);
        HeatmapStore pruned = dense;
        pruned.retain_topk(l, scores, anns);
        AugmentConfig aug;
        for (int trial = 0; trial < 20; ++trial) {
            const auto t = sample_transform(rng, aug);
            const int64_t s = rng.uniform_int(0, n - 1);
            const auto a = dense.read_target<float>(s, t, g);
            const auto b = pruned.read_target<float>(s, t, g);
            for (size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]);
        }
    }

    SUBCASE("k = 1 keeps only the top channel, annotated always survives") {
        HeatmapStore store(n, w, l, 0.8f);
        store.init_from_annotations(anns);
        store.retain_topk(1, scores, anns);
        for (int64_t s = 0; s < n; ++s) {
            int64_t kept = 0;
            for (int64_t c = 0; c < l; ++c) kept += store.channel_retained(s, c);
            CHECK(kept == 1);
            for (int64_t c = 0; c < l; ++c)
                if (anns[static_cast<size_t>(s)].z[static_cast<size_t>(c)] == Label::Positive)
                    CHECK(store.channel_retained(s, c));
        }
    }

    SUBCASE("pruned reads equal a dense store holding explicit zeros") {
        HeatmapStore dense(n, w, l, 0.8f);
        dense.init_from_annotations(anns);
        HeatmapStore pruned = dense;
        const int64_t k = 2;
        pruned.retain_topk(k, scores, anns);
        // zero out the dropped channels in the dense copy
        AugmentConfig aug;
        for (int64_t s = 0; s < n; ++s) {
            TensorF zero_map({g, g, l}, 0.0f);
            (void)zero_map;
            for (int trial = 0; trial < 5; ++trial) {
                const auto t = sample_transform(rng, aug);
                const auto sparse_read = pruned.read_target<float>(s, t, g);
                auto dense_read = dense.read_target<float>(s, t, g);
                for (int64_t p = 0; p < g * g; ++p)
                    for (int64_t c = 0; c < l; ++c)
                        if (!pruned.channel_retained(s, c))
                            dense_read.v[static_cast<size_t>(p * l + c)] = 0.0f;
                for (size_t i = 0; i < sparse_read.v.size(); ++i)
                    CHECK(sparse_read.v[i] == doctest::Approx(dense_read.v[i]).epsilon(1e-7));
            }
        }
        CHECK(pruned.storage_bytes() < dense.storage_bytes());
    }

    SUBCASE("k above L clamps") {
        HeatmapStore store(n, w, l, 0.8f);
        store.init_from_annotations(anns);
        store.retain_topk(l + 10, scores, anns);
        for (int64_t c = 0; c < l; ++c) CHECK(store.channel_retained(0, c));
    }
}

TEST_CASE("memory accounting") {
    CHECK(memory_bytes(112000, 81, 28, 2) == 14224896000LL);
    CHECK(memory_bytes(1300000, 1000, 14, 2) == 509600000000LL);
    CHECK(memory_bytes(1300000, 1000 / 100, 14, 2) == 509600000000LL / 100);
    CHECK(memory_bytes(0, 81, 28, 2) == 0);
    CHECK(memory_bytes(112000, 0, 28, 2) == 0);
}

TEST_CASE("half precision storage") {
    Rng rng(14);
    SUBCASE("round trip error bound on [0,1]") {
        for (int i = 0; i < 10000; ++i) {
            const float v = static_cast<float>(rng.uniform01());
            const float back = half_to_float(float_to_half(v));
            CHECK(std::abs(back - v) <= std::pow(2.0f, -10.0f));
        }
        CHECK(half_to_float(float_to_half(0.0f)) == 0.0f);
        CHECK(half_to_float(float_to_half(1.0f)) == 1.0f);
    }

    SUBCASE("f16 store stays within [0,1] and tracks the f32 store") {
        const int64_t w = 8, g = 4, l = 2;
        auto anns = single_positive_anns(1, l, rng);
        HeatmapStore f32(1, w, l, 0.8f, StorePrecision::F32);
        HeatmapStore f16(1, w, l, 0.8f, StorePrecision::F16);
        f32.init_from_annotations(anns);
        f16.init_from_annotations(anns);
        AugmentConfig aug;
        for (int step = 0; step < 30; ++step) {
            const auto t = sample_transform(rng, aug);
            TensorF f({g, g, l});
            for (auto& v : f.v) v = static_cast<float>(rng.uniform01());
            f32.update(0, f, t);
            f16.update(0, f, t);
        }
        for (int64_t c = 0; c < l; ++c) {
            const auto a = f32.read_channel(0, c);
            const auto b = f16.read_channel(0, c);
            for (size_t i = 0; i < a.v.size(); ++i) {
                CHECK(b.v[i] >= 0.0f);
                CHECK(b.v[i] <= 1.0f);
                CHECK(std::abs(a.v[i] - b.v[i]) < 0.01f);  // accumulated rounding stays small
            }
        }
        CHECK(f16.storage_bytes() == f32.storage_bytes() / 2);
    }
}

TEST_CASE("store serialization round trip is exact") {
    Rng rng(15);
    const int64_t n = 3, w = 8, g = 4, l = 4;
    auto anns = single_positive_anns(n, l, rng);
    ScoreEstimateStore scores(n, l, 0.8f);
    scores.init_from_annotations(anns);
    HeatmapStore heat(n, w, l, 0.8f, StorePrecision::F16);
    heat.init_from_annotations(anns);
    AugmentConfig aug;
    for (int64_t s = 0; s < n; ++s) {
        std::vector<float> f(static_cast<size_t>(l));
        for (auto& v : f) v = static_cast<float>(rng.uniform01());
        scores.update(s, f, 0);
        TensorF map({g, g, l});
        for (auto& v : map.v) v = static_cast<float>(rng.uniform01());
        heat.update(s, map, sample_transform(rng, aug));
    }
    heat.retain_topk(2, scores, anns);

    ArrayStore out;
    scores.to_arrays(out, "scores");
    heat.to_arrays(out, "heat");
    const std::string path = (std::filesystem::temp_directory_path() / "spcl_store_test.ckpt").string();
    out.save(path);
    const ArrayStore in = ArrayStore::load(path);

    ScoreEstimateStore scores2;
    scores2.from_arrays(in, "scores");
    HeatmapStore heat2;
    heat2.from_arrays(in, "heat");
    for (int64_t s = 0; s < n; ++s)
        for (int64_t i = 0; i < l; ++i) CHECK(scores2.scores(s)[i] == scores.scores(s)[i]);
    for (int64_t s = 0; s < n; ++s)
        for (int64_t c = 0; c < l; ++c) {
            CHECK(heat2.channel_retained(s, c) == heat.channel_retained(s, c));
            const auto a = heat.read_channel(s, c);
            const auto b = heat2.read_channel(s, c);
            for (size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]);
        }
    std::filesystem::remove(path);
}

TEST_CASE("heatmap export writes round(255 h) grayscale images") {
    Rng rng(16);
    const int64_t w = 8, l = 2;
    auto anns = single_positive_anns(1, l, rng);
    HeatmapStore store(1, w, l, 0.0f);
    store.init_from_annotations(anns);
    TensorF f({4, 4, l});
    for (auto& v : f.v) v = static_cast<float>(rng.uniform01());
    store.update(0, f, AugmentationTransform::identity());

    const auto dir = (std::filesystem::temp_directory_path() / "spcl_heat_export").string();
    std::filesystem::remove_all(dir);
    const auto entries = export_heatmaps(store, {0}, {0, 1}, dir);
    REQUIRE(entries.size() == 2);
    for (const auto& e : entries) {
        const auto img = read_pgm(dir + "/" + e.file);
        const auto channel = store.read_channel(0, e.channel);
        for (size_t i = 0; i < img.v.size(); ++i) {
            const float expected =
                static_cast<float>(std::lround(255.0f * channel.v[i])) / 255.0f;
            CHECK(img.v[i] == doctest::Approx(expected).epsilon(1e-7));
        }
        CHECK(e.min_value <= e.max_value);
    }
    CHECK(std::filesystem::exists(dir + "/manifest.csv"));
    std::filesystem::remove_all(dir);
}
