#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

namespace hupe {

/// Images and feature maps are N x C x H x W tensors. Image tensors hold
/// intensities in [0,1]; intermediate features are unrestricted.
using ImageTensor = torch::Tensor;

enum class Direction { Forward, Inverse };

inline Direction opposite(Direction d) { return d == Direction::Forward ? Direction::Inverse : Direction::Forward; }

constexpr bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

/// Throws unless `x` is 4-D with finite values.
void require_image_tensor(const torch::Tensor& x, const std::string& what);
/// Throws unless H and W of `x` are powers of two.
void require_pow2_spatial(const torch::Tensor& x, const std::string& what);

std::string shape_string(const torch::Tensor& x);

}  // namespace hupe
