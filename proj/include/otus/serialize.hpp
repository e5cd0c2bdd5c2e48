#pragma once

#include <string>
#include <vector>

#include "otus/tensor.hpp"

namespace otus {

// TNSR v1: one text header line "TNSR v1 <rank> <d0> <d1> ...\n" followed by
// the values as raw little-endian 32-bit floats. Used for checkpoints,
// dataset images and golden files; round-trips are bit-exact.
void save_tnsr(const std::string& path, const Shape& shape, const float* data);
void save_tnsr(const std::string& path, const Tensor<float>& t);
Tensor<float> load_tnsr(const std::string& path);

}  // namespace otus
