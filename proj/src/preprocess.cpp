#include "akhcr/preprocess.hpp"

#include <cmath>

#include "akhcr/errors.hpp"

namespace akhcr {

RawImage to_grayscale(const RawImage& img) {
  if (img.width < 1 || img.height < 1)
    throw FormatError("to_grayscale: empty image");
  if (img.channels == 1) return img;
  if (img.channels != 3)
    throw FormatError("to_grayscale: unsupported channel count " +
                      std::to_string(img.channels));
  RawImage out;
  out.width = img.width;
  out.height = img.height;
  out.channels = 1;
  out.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const std::uint8_t* px = img.pixels.data() + i * 3;
    const double y = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    const double rounded = std::floor(y + 0.5);
    out.pixels[i] = static_cast<std::uint8_t>(rounded > 255.0 ? 255.0 : rounded);
  }
  return out;
}

TensorD gray_grid(const RawImage& img) {
  if (img.channels != 1)
    throw FormatError("gray_grid expects a 1-channel image, got " +
                      std::to_string(img.channels) + " channels");
  if (img.width < 1 || img.height < 1) throw FormatError("gray_grid: empty image");
  TensorD grid(Shape{img.height, img.width});
  for (std::int64_t i = 0; i < grid.size(); ++i)
    grid[i] = static_cast<double>(img.pixels[static_cast<std::size_t>(i)]);
  return grid;
}

TensorD bilinear_resize(const TensorD& grid, int out_h, int out_w) {
  if (grid.rank() != 2)
    throw FormatError("bilinear_resize expects an [h, w] grid, got " + grid.shape.str());
  if (out_h < 1 || out_w < 1)
    throw RangeError("bilinear_resize: output extents must be >= 1");
  const std::int64_t h = grid.shape[0], w = grid.shape[1];

  TensorD out(Shape{out_h, out_w});
  const double sy_step = out_h == 1 ? 0.0 : static_cast<double>(h - 1) / (out_h - 1);
  const double sx_step = out_w == 1 ? 0.0 : static_cast<double>(w - 1) / (out_w - 1);
  const double sy_base = out_h == 1 ? static_cast<double>(h - 1) / 2.0 : 0.0;
  const double sx_base = out_w == 1 ? static_cast<double>(w - 1) / 2.0 : 0.0;

  for (int oy = 0; oy < out_h; ++oy) {
    const double sy = sy_base + sy_step * oy;
    std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    if (y0 > h - 2) y0 = h - 2;
    if (y0 < 0) y0 = 0;
    const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (int ox = 0; ox < out_w; ++ox) {
      const double sx = sx_base + sx_step * ox;
      std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
      if (x0 > w - 2) x0 = w - 2;
      if (x0 < 0) x0 = 0;
      const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      // x direction on both rows, then y direction
      const double top = (1.0 - fx) * grid[y0 * w + x0] + fx * grid[y0 * w + x1];
      const double bottom = (1.0 - fx) * grid[y1 * w + x0] + fx * grid[y1 * w + x1];
      out[static_cast<std::int64_t>(oy) * out_w + ox] = (1.0 - fy) * top + fy * bottom;
    }
  }
  return out;
}

Tensor normalize(const TensorD& grid) {
  if (grid.rank() != 2)
    throw FormatError("normalize expects an [h, w] grid, got " + grid.shape.str());
  Tensor out(Shape{grid.shape[0], grid.shape[1], 1});
  for (std::int64_t i = 0; i < grid.size(); ++i) {
    const double v = grid[i];
    if (!(v >= 0.0 && v <= 255.0))
      throw FormatError("normalize: value " + std::to_string(v) + " outside [0, 255]");
    out[i] = static_cast<float>(v / 255.0);
  }
  return out;
}

Tensor preprocess_pipeline(const RawImage& img) {
  const RawImage gray = to_grayscale(img);
  const TensorD resized = bilinear_resize(gray_grid(gray), kInputSize, kInputSize);
  return normalize(resized);
}

}  // namespace akhcr
