#pragma once

#include "akhcr/image.hpp"
#include "akhcr/tensor.hpp"

namespace akhcr {

inline constexpr int kInputSize = 32;

// 3-channel inputs reduce by ITU-R 601 luminance (0.299 R + 0.587 G + 0.114 B),
// rounded half up; 1-channel inputs pass through.
RawImage to_grayscale(const RawImage& img);

// 1-channel image as a real [h, w] grid of 0..255 values.
TensorD gray_grid(const RawImage& img);

// Align-corners bilinear resize: output (i, j) samples input coordinate
// (i*(H-1)/(out_h-1), j*(W-1)/(out_w-1)); a unit output extent samples the
// input center. X interpolation first, then Y.
TensorD bilinear_resize(const TensorD& grid, int out_h, int out_w);

// Divides 0..255 values by 255 into a [h, w, 1] float tensor.
Tensor normalize(const TensorD& grid);

// to_grayscale -> bilinear_resize(32, 32) -> normalize.
Tensor preprocess_pipeline(const RawImage& img);

}  // namespace akhcr
