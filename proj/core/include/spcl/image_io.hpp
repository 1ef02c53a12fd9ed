#pragma once

#include <string>

#include "spcl/tensor.hpp"

namespace spcl {

/// Write a single-channel H x W x 1 tensor with values in [0,1] as a binary
/// PGM (P5, maxval 255). Values are mapped by round(255 * v).
void write_pgm(const std::string& path, const TensorF& image);

/// Read a binary PGM back into an H x W x 1 tensor with values k/255.
TensorF read_pgm(const std::string& path);

}  // namespace spcl
