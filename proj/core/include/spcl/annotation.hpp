#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace spcl {

/// Training supervision state of one label.
enum class Label : uint8_t { Negative = 0, Positive = 1, Unknown = 2 };

/// Per-image partial labels z; full labels y ride along for evaluation only.
struct AnnotationVector {
    std::vector<Label> z;
    std::vector<uint8_t> y;  // empty when ground truth is unavailable

    int64_t num_classes() const { return static_cast<int64_t>(z.size()); }

    int64_t count(Label l) const {
        int64_t n = 0;
        for (Label e : z) n += (e == l);
        return n;
    }

    bool single_positive() const { return count(Label::Positive) == 1 && count(Label::Negative) == 0; }

    /// pos entries of z must be 1 in y, neg entries 0.
    bool consistent_with_truth() const {
        if (y.empty()) return true;
        if (y.size() != z.size()) return false;
        for (size_t i = 0; i < z.size(); ++i) {
            if (z[i] == Label::Positive && y[i] != 1) return false;
            if (z[i] == Label::Negative && y[i] != 0) return false;
        }
        return true;
    }
};

/// Per-image, per-epoch expected-positive indicators produced by the miner.
using ExpectedPositiveMask = std::vector<uint8_t>;

}  // namespace spcl
