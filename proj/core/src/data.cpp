#include "spcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "spcl/image_io.hpp"
#include "spcl/rng.hpp"

namespace spcl {

namespace fs = std::filesystem;

namespace {

struct PlacedObject {
    int64_t class_id;
    double cx, cy;    // center, normalized
    double side;      // normalized
    double intensity;
};

// eight shape/texture archetypes; class c uses archetype c % 8, classes >= 8
// render inverted (dark on a bright pad)
float archetype_mask(int64_t archetype, double u, double v) {
    // u, v in [-1, 1] relative to the object box
    const double r = std::sqrt(u * u + v * v);
    switch (archetype) {
        case 0: return r <= 1.0 ? 1.0f : 0.0f;                          // disk
        case 1: return (std::abs(u) <= 0.9 && std::abs(v) <= 0.9) ? 1.0f : 0.0f;  // square
        case 2: return (v >= -0.85 && std::abs(u) <= (v + 1.0) * 0.5) ? 1.0f : 0.0f;  // triangle
        case 3: return (r <= 1.0 && r >= 0.55) ? 1.0f : 0.0f;           // ring
        case 4: return (std::abs(u) <= 0.3 || std::abs(v) <= 0.3) ? 1.0f : 0.0f;  // cross
        case 5: return std::fmod(std::abs(v) * 3.0, 1.0) < 0.5 ? 1.0f : 0.0f;     // h-stripes
        case 6: return std::fmod(std::abs(u) * 3.0, 1.0) < 0.5 ? 1.0f : 0.0f;     // v-stripes
        default: {
            const bool a = std::fmod(std::abs(u) * 2.0 + 2.0, 1.0) < 0.5;
            const bool b = std::fmod(std::abs(v) * 2.0 + 2.0, 1.0) < 0.5;
            return a == b ? 1.0f : 0.0f;  // checkerboard
        }
    }
}

bool overlaps(const std::vector<PlacedObject>& placed, double cx, double cy, double side) {
    for (const auto& o : placed) {
        const double gap = (o.side + side) * 0.5;
        if (std::abs(o.cx - cx) < gap && std::abs(o.cy - cy) < gap) return true;
    }
    return false;
}

std::vector<PlacedObject> place_objects(const GenConfig& cfg, Rng& rng) {
    const int64_t count =
        1 + std::min(rng.poisson(cfg.objects_extra_mean), cfg.max_objects - 1);

    // distinct classes per image, uniform without replacement
    std::vector<int64_t> classes(static_cast<size_t>(cfg.num_classes));
    std::iota(classes.begin(), classes.end(), 0);
    for (int64_t i = 0; i < count; ++i) {
        const int64_t j = rng.uniform_int(i, cfg.num_classes - 1);
        std::swap(classes[static_cast<size_t>(i)], classes[static_cast<size_t>(j)]);
    }

    const double min_px_side = 6.0 / static_cast<double>(cfg.image_size);
    std::vector<PlacedObject> placed;
    for (int64_t i = 0; i < count; ++i) {
        double side = rng.uniform(cfg.object_min_side, cfg.object_max_side);
        bool ok = false;
        while (!ok) {
            const double half = side * 0.5;
            for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
                double cx, cy;
                if (cfg.placement == "corner") {
                    // centers live in the four corner regions
                    const double reach = 0.30;
                    const int64_t corner = rng.uniform_int(0, 3);
                    const double lo = half, hi = std::max(half, reach);
                    cx = rng.uniform(lo, hi);
                    cy = rng.uniform(lo, hi);
                    if (corner & 1) cx = 1.0 - cx;
                    if (corner & 2) cy = 1.0 - cy;
                } else {
                    cx = rng.uniform(half, 1.0 - half);
                    cy = rng.uniform(half, 1.0 - half);
                }
                if (!overlaps(placed, cx, cy, side)) {
                    placed.push_back({classes[static_cast<size_t>(i)], cx, cy, side,
                                      rng.uniform(0.55, 0.95)});
                    ok = true;
                }
            }
            if (!ok) {
                // crowded frame: shrink and retry before giving up
                side *= 0.8;
                if (side < min_px_side)
                    throw std::runtime_error("generate_synthetic: cannot place " +
                                             std::to_string(count) + " objects in a " +
                                             std::to_string(cfg.image_size) +
                                             "px frame without overlap");
            }
        }
    }
    return placed;
}

void render(TensorF& image, const std::vector<PlacedObject>& objects, int64_t num_classes, Rng& rng) {
    const int64_t s = image.shape[0];
    // dim noisy background
    const float base = static_cast<float>(rng.uniform(0.05, 0.15));
    for (auto& v : image.v)
        v = std::clamp(base + static_cast<float>(rng.uniform(-0.03, 0.03)), 0.0f, 1.0f);

    for (const auto& o : objects) {
        const int64_t archetype = o.class_id % 8;
        const bool inverted = o.class_id >= 8 && num_classes > 8;
        const double half = o.side * 0.5;
        const int64_t px0 = std::max<int64_t>(0, static_cast<int64_t>((o.cx - half) * static_cast<double>(s)));
        const int64_t px1 = std::min<int64_t>(s, static_cast<int64_t>((o.cx + half) * static_cast<double>(s)) + 1);
        const int64_t py0 = std::max<int64_t>(0, static_cast<int64_t>((o.cy - half) * static_cast<double>(s)));
        const int64_t py1 = std::min<int64_t>(s, static_cast<int64_t>((o.cy + half) * static_cast<double>(s)) + 1);
        for (int64_t y = py0; y < py1; ++y) {
            for (int64_t x = px0; x < px1; ++x) {
                const double u = ((static_cast<double>(x) + 0.5) / static_cast<double>(s) - o.cx) / half;
                const double v = ((static_cast<double>(y) + 0.5) / static_cast<double>(s) - o.cy) / half;
                if (u < -1.0 || u > 1.0 || v < -1.0 || v > 1.0) continue;
                float m = archetype_mask(archetype, u, v);
                if (inverted) {
                    // bright pad with a dark shape carved out
                    image.at(y, x, 0) = m > 0.0f ? 0.08f : static_cast<float>(o.intensity);
                } else if (m > 0.0f) {
                    image.at(y, x, 0) = static_cast<float>(o.intensity);
                }
            }
        }
    }

    // quantize to 8-bit levels so the PGM round trip is lossless
    for (auto& v : image.v)
        v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

}  // namespace

std::vector<ObjectBox> synthetic_object_boxes(const GenConfig& cfg, int64_t image_index) {
    Rng rng(seed_hash({cfg.seed, static_cast<uint64_t>(image_index)}));
    const auto placed = place_objects(cfg, rng);
    std::vector<ObjectBox> boxes;
    for (const auto& o : placed) {
        const double half = o.side * 0.5;
        boxes.push_back({o.class_id, o.cx - half, o.cy - half, o.cx + half, o.cy + half});
    }
    return boxes;
}

Dataset generate_synthetic(const GenConfig& cfg) {
    if (cfg.num_classes < 2) throw std::invalid_argument("generate_synthetic: need num_classes >= 2");
    if (cfg.max_objects < 1 || cfg.max_objects > cfg.num_classes)
        throw std::invalid_argument("generate_synthetic: max_objects must be in [1, num_classes]");
    if (static_cast<double>(cfg.image_size) * cfg.object_min_side < 4.0)
        throw std::invalid_argument("generate_synthetic: image too small for the requested objects");

    Dataset data;
    data.num_classes = cfg.num_classes;
    data.image_size = cfg.image_size;
    data.records.resize(static_cast<size_t>(cfg.num_images));

    for (int64_t n = 0; n < cfg.num_images; ++n) {
        Rng rng(seed_hash({cfg.seed, static_cast<uint64_t>(n)}));
        const auto placed = place_objects(cfg, rng);

        DatasetRecord& rec = data.records[static_cast<size_t>(n)];
        rec.id = n;
        rec.image = TensorF({cfg.image_size, cfg.image_size, 1});
        render(rec.image, placed, cfg.num_classes, rng);

        rec.ann.y.assign(static_cast<size_t>(cfg.num_classes), 0);
        for (const auto& o : placed) rec.ann.y[static_cast<size_t>(o.class_id)] = 1;
        rec.ann.z.assign(static_cast<size_t>(cfg.num_classes), Label::Negative);
        for (const auto& o : placed) rec.ann.z[static_cast<size_t>(o.class_id)] = Label::Positive;
    }
    return data;
}

void to_single_positive(Dataset& data, uint64_t seed) {
    for (size_t n = 0; n < data.records.size(); ++n) {
        auto& ann = data.records[n].ann;
        std::vector<int64_t> positives;
        for (size_t i = 0; i < ann.y.size(); ++i)
            if (ann.y[i] != 0) positives.push_back(static_cast<int64_t>(i));
        if (positives.empty())
            throw std::runtime_error("to_single_positive: record " +
                                     std::to_string(data.records[n].id) + " has no positive label");
        Rng rng(seed_hash({seed, 0x51f0u, static_cast<uint64_t>(n)}));
        const int64_t pick = positives[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(positives.size()) - 1))];
        ann.z.assign(ann.y.size(), Label::Unknown);
        ann.z[static_cast<size_t>(pick)] = Label::Positive;
    }
}

SplitIndices split(const Dataset& data, const SplitSpec& spec) {
    return split_count(static_cast<int64_t>(data.records.size()), spec);
}

SplitIndices split_count(int64_t num_records, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0) || !(spec.val_fraction > 0.0) ||
        spec.train_fraction + spec.val_fraction > 1.0 + 1e-12)
        throw std::invalid_argument("split: fractions must be positive and sum to at most 1");
    const int64_t n = num_records;
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed_hash({spec.seed, 0x5911u}));
    for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = rng.uniform_int(0, i);
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    int64_t n_train = static_cast<int64_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
    int64_t n_val;
    if (spec.train_fraction + spec.val_fraction >= 1.0 - 1e-12) {
        n_val = n - n_train;  // exhaustive partition
    } else {
        n_val = static_cast<int64_t>(std::llround(spec.val_fraction * static_cast<double>(n)));
    }
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    if (n_train < 1 || n_val < 1) throw std::invalid_argument("split: a split came out empty");

    SplitIndices out;
    out.train.assign(order.begin(), order.begin() + n_train);
    out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

int64_t parse_int(const std::string& s, const std::string& context) {
    try {
        size_t used = 0;
        const int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("malformed integer '" + s + "' in " + context);
    }
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& dir, uint64_t seed) {
    fs::create_directories(fs::path(dir) / "images");

    {
        std::ofstream meta(fs::path(dir) / "dataset.meta");
        meta << "format_version=1\n";
        meta << "num_images=" << data.records.size() << "\n";
        meta << "num_classes=" << data.num_classes << "\n";
        meta << "image_size=" << data.image_size << "\n";
        meta << "seed=" << seed << "\n";
    }

    std::ofstream manifest(fs::path(dir) / "manifest.csv");
    manifest << "id,image\n";
    std::ofstream labels(fs::path(dir) / "labels.csv");
    labels << "id,class,value\n";
    std::ofstream annotations(fs::path(dir) / "annotations.csv");
    annotations << "id,class,value\n";

    for (const auto& rec : data.records) {
        const std::string file = "images/" + std::to_string(rec.id) + ".pgm";
        manifest << rec.id << ',' << file << '\n';
        write_pgm((fs::path(dir) / file).string(), rec.image);
        for (size_t i = 0; i < rec.ann.y.size(); ++i)
            labels << rec.id << ',' << i << ',' << static_cast<int>(rec.ann.y[i]) << '\n';
        for (size_t i = 0; i < rec.ann.z.size(); ++i) {
            if (rec.ann.z[i] == Label::Unknown) continue;
            annotations << rec.id << ',' << i << ','
                        << (rec.ann.z[i] == Label::Positive ? 1 : 0) << '\n';
        }
    }
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream meta(root / "dataset.meta");
    if (!meta) throw std::runtime_error("load_dataset: missing " + (root / "dataset.meta").string());

    Dataset data;
    int64_t num_images = -1;
    std::string line;
    while (std::getline(meta, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "num_images") num_images = parse_int(value, "dataset.meta");
        else if (key == "num_classes") data.num_classes = parse_int(value, "dataset.meta");
        else if (key == "image_size") data.image_size = parse_int(value, "dataset.meta");
    }
    if (num_images < 0 || data.num_classes < 2 || data.image_size < 1)
        throw std::runtime_error("load_dataset: incomplete dataset.meta in '" + dir + "'");

    std::ifstream manifest(root / "manifest.csv");
    if (!manifest) throw std::runtime_error("load_dataset: missing " + (root / "manifest.csv").string());
    std::getline(manifest, line);  // header
    std::vector<std::pair<int64_t, std::string>> entries;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 2) throw std::runtime_error("load_dataset: malformed manifest row '" + line + "'");
        entries.emplace_back(parse_int(fields[0], "manifest.csv"), fields[1]);
    }
    if (static_cast<int64_t>(entries.size()) != num_images)
        throw std::runtime_error("load_dataset: manifest row count does not match dataset.meta");

    std::sort(entries.begin(), entries.end());
    std::map<int64_t, size_t> index_of;
    data.records.resize(entries.size());
    for (size_t n = 0; n < entries.size(); ++n) {
        auto& rec = data.records[n];
        rec.id = entries[n].first;
        index_of[rec.id] = n;
        const fs::path img = root / entries[n].second;
        if (!fs::exists(img))
            throw std::runtime_error("load_dataset: manifest references missing image file '" +
                                     img.string() + "'");
        rec.image = read_pgm(img.string());
        if (rec.image.shape[0] != data.image_size || rec.image.shape[1] != data.image_size)
            throw std::runtime_error("load_dataset: image '" + img.string() +
                                     "' does not match image_size in dataset.meta");
        rec.ann.y.assign(static_cast<size_t>(data.num_classes), 0);
        rec.ann.z.assign(static_cast<size_t>(data.num_classes), Label::Unknown);
    }

    auto read_pairs = [&](const std::string& name, auto&& apply) {
        std::ifstream in(root / name);
        if (!in) throw std::runtime_error("load_dataset: missing " + (root / name).string());
        std::string row;
        std::getline(in, row);  // header
        while (std::getline(in, row)) {
            if (row.empty()) continue;
            const auto fields = split_csv_line(row);
            if (fields.size() != 3)
                throw std::runtime_error("load_dataset: malformed row '" + row + "' in " + name);
            const int64_t id = parse_int(fields[0], name);
            const int64_t cls = parse_int(fields[1], name);
            const int64_t value = parse_int(fields[2], name);
            auto it = index_of.find(id);
            if (it == index_of.end())
                throw std::runtime_error("load_dataset: unknown image id " + std::to_string(id) +
                                         " in " + name);
            if (cls < 0 || cls >= data.num_classes)
                throw std::runtime_error("load_dataset: class id " + std::to_string(cls) +
                                         " out of range in " + name);
            if (value != 0 && value != 1)
                throw std::runtime_error("load_dataset: label value must be 0 or 1 in " + name);
            apply(data.records[it->second], cls, value);
        }
    };

    read_pairs("labels.csv", [](DatasetRecord& rec, int64_t cls, int64_t value) {
        rec.ann.y[static_cast<size_t>(cls)] = static_cast<uint8_t>(value);
    });
    read_pairs("annotations.csv", [](DatasetRecord& rec, int64_t cls, int64_t value) {
        rec.ann.z[static_cast<size_t>(cls)] = value == 1 ? Label::Positive : Label::Negative;
    });

    return data;
}

}  // namespace spcl
