#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spcl/annotation.hpp"
#include "spcl/tensor.hpp"

namespace spcl {

struct DatasetRecord {
    int64_t id = 0;
    TensorF image;  // stored square frame, single channel, values k/255
    AnnotationVector ann;
};

struct Dataset {
    int64_t num_classes = 0;
    int64_t image_size = 0;
    std::vector<DatasetRecord> records;
};

struct GenConfig {
    int64_t num_images = 2000;
    int64_t num_classes = 8;
    int64_t image_size = 64;
    uint64_t seed = 1;
    /// objects per image: 1 + Poisson(objects_extra_mean), truncated to
    /// [1, max_objects]; each object gets a distinct class
    double objects_extra_mean = 1.5;
    int64_t max_objects = 5;
    /// "uniform": anywhere the object fits. "corner": centers confined to the
    /// four corner regions so random crops frequently exclude the object.
    std::string placement = "uniform";
    double object_min_side = 0.20;  // fraction of the frame
    double object_max_side = 0.32;
};

/// Draw multi-object images of distinguishable shape archetypes, one class
/// per archetype, with full labels y and fully-annotated z. Deterministic in
/// the seed.
Dataset generate_synthetic(const GenConfig& cfg);

/// Rewrite every record's z to a single uniformly chosen positive; all other
/// entries become unknown. Full labels y are kept for evaluation.
void to_single_positive(Dataset& data, uint64_t seed);

struct SplitSpec {
    double train_fraction = 0.8;
    double val_fraction = 0.2;
    uint64_t seed = 1;
};

struct SplitIndices {
    std::vector<int64_t> train;
    std::vector<int64_t> val;
};

/// Deterministic disjoint split by record position.
SplitIndices split(const Dataset& data, const SplitSpec& spec);

/// Same split computed from the record count alone; split(data, spec) is a
/// thin wrapper over this.
SplitIndices split_count(int64_t num_records, const SplitSpec& spec);

/// Directory layout:
///   dataset.meta    key=value header (format version, sizes, seed)
///   manifest.csv    id,image
///   labels.csv      id,class,value   (full labels, every pair)
///   annotations.csv id,class,value   (training z; absent row = unknown)
///   images/<id>.pgm
void save_dataset(const Dataset& data, const std::string& dir, uint64_t seed = 0);
Dataset load_dataset(const std::string& dir);

/// Axis-aligned object footprint in normalized frame coordinates; exposed so
/// tests can reason about which crops keep an object visible.
struct ObjectBox {
    int64_t class_id = 0;
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};
/// The boxes generate_synthetic would draw for one image, without rendering.
std::vector<ObjectBox> synthetic_object_boxes(const GenConfig& cfg, int64_t image_index);

}  // namespace spcl
