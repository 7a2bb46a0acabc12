#pragma once

#include <string>

#include "pm/core/tensor.hpp"

namespace pm {

// (3,H,W) float image in [0,1] <-> 8-bit RGB png
void write_rgb_png(const std::string& path, const Tensor<float>& chw);
Tensor<float> read_rgb_png(const std::string& path);

// (1,H,W) depth in meters <-> 16-bit grayscale png quantized to millimeters
void write_depth_png16(const std::string& path, const Tensor<float>& depth_m);
Tensor<float> read_depth_png16(const std::string& path);

// row-major little-endian float32, no header; callers carry the shape
void write_float_bin(const std::string& path, const Tensor<float>& t);
Tensor<float> read_float_bin(const std::string& path, const Shape& shape);

}  // namespace pm
