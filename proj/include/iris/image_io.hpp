#pragma once

#include <filesystem>

#include "iris/tensor.hpp"

namespace iris {

// Decodes PNG, JPEG, BMP, or binary PGM/PPM into [C,H,W] with values in [0,255], C in {1,3}.
// Alpha channels are dropped; palette images are expanded.
Tensor read_image(const std::filesystem::path& path);

// 8-bit grey (C=1) or RGB (C=3) PNG. Values are rounded and clamped to [0,255].
void write_png(const std::filesystem::path& path, const Tensor& image);

// 1-bit binary PBM (P4). Any non-zero cell of the [H,W] mask is written as set.
void write_pbm(const std::filesystem::path& path, const Tensor& mask);
Tensor read_pbm(const std::filesystem::path& path);

// NumPy .npy (float32, little endian, C order).
void write_npy(const std::filesystem::path& path, const Tensor& t);
Tensor read_npy(const std::filesystem::path& path);

}  // namespace iris
