#pragma once

#include <string>

#include "scenedec/tensor.hpp"

namespace scenedec::img {

// 8-bit PNG out of a (C,H,W) tensor with C 1 (gray) or 3 (RGB); values are
// clamped to [0,1] and rounded to bytes. Output bytes are reproducible:
// fixed compression settings, no ancillary chunks that vary.
void write_png(const std::string& path, const ad::Tensor& image);

// Reads an 8-bit PNG into (3,H,W) for color input or (1,H,W) for grayscale,
// values v/255. Palette and 16-bit inputs are expanded; alpha is dropped.
ad::Tensor read_png(const std::string& path);

// Writes a (H,W) map stretched to its own [min,max] as a gray PNG, and a
// "<path>.range.txt" sidecar recording min and max so values stay readable.
void write_png_scaled(const std::string& path, const ad::Tensor& map);

}  // namespace scenedec::img
