#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace akhcr {

// Decoded 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

RawImage decode_png(const std::string& path);
RawImage decode_bmp(const std::string& path);

// Dispatches on the file signature; failures raise FormatError with the path.
RawImage decode_image(const std::string& path);

void encode_png_gray(const std::string& path, int width, int height,
                     const std::uint8_t* pixels);

}  // namespace akhcr
