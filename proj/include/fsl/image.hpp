#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>

#include "fsl/archive.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

// Bilinear resize of a [c x h x w] tensor with half-pixel centres and edge
// clamping (the usual align_corners=false convention).
Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w);

// Decodes PNG/JPEG/BMP/... bytes into [3 x size x size] values in [0, 1].
// Grayscale is replicated over the three channels, alpha is dropped.
// DecodeError mentions `source` (usually the file path).
Tensor preprocess_bytes(std::span<const std::uint8_t> bytes, std::size_t size, std::string_view source);
Tensor preprocess_file(const std::filesystem::path& path, std::size_t size);

// In place on [n x 3 x h x w]: (x - mean[c]) / std[c].
void normalize_channels(Tensor& batch, const Normalization& norm);

// Writes an 8-bit grayscale PNG from row-major values in [0, 1].
void write_gray_png(const std::filesystem::path& path, std::span<const float> values, std::size_t height,
                    std::size_t width);

}  // namespace fsl
