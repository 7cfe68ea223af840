#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace fsiad {

// 8-bit RGB PNG <-> uint8 tensor of shape 3 x H x W.
torch::Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const torch::Tensor& rgb8);

// [0, 255] -> [-1, 1] linearly, and back with rounding. quantize() clamps first.
torch::Tensor to_signed_unit(const torch::Tensor& rgb8);
torch::Tensor quantize(const torch::Tensor& image);

}  // namespace fsiad
