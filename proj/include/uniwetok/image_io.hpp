#pragma once

// PNG read/write with the fixed pixel mapping v = x / 127.5 - 1.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace uniwetok {

// Returns [H, W, 3] float32 in [-1, 1]. Gray and alpha inputs are expanded or
// stripped; 16-bit inputs are reduced to 8 bits. Throws DataError.
torch::Tensor read_png(const std::filesystem::path& path);

// Quantizes [H, W, 3] values in [-1, 1] to 8 bits: round((v + 1) * 127.5),
// clamped to [0, 255].
std::vector<uint8_t> to_pixels(const torch::Tensor& image);
torch::Tensor from_pixels(const std::vector<uint8_t>& rgb, int64_t height, int64_t width);

// Throws IoError.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

}  // namespace uniwetok
