#include "akhcr/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "akhcr/errors.hpp"

namespace akhcr {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  // control returns to the setjmp site in the caller
  longjmp(png_jmpbuf(png), 1);
  (void)msg;
}

void png_warning_fn(png_structp, png_const_charp) {}

std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::int32_t read_i32le(const std::uint8_t* p) {
  return static_cast<std::int32_t>(read_u32le(p));
}

std::uint16_t read_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

RawImage decode_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open image file: " + path);

  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("not a PNG file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw IoError("libpng allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng allocation failure");
  }

  RawImage img;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG file: " + path);
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // normalize to 8-bit gray or RGB
  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) {
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
  }

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = static_cast<int>(png_get_channels(png, info));
  if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unsupported PNG layout (" + std::to_string(img.channels) +
                      " channels): " + path);
  }

  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  row_ptrs.resize(static_cast<std::size_t>(img.height));
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    row_ptrs[static_cast<std::size_t>(y)] = img.pixels.data() + y * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

RawImage decode_bmp(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open image file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 54 || bytes[0] != 'B' || bytes[1] != 'M')
    throw FormatError("not a BMP file: " + path);

  const std::uint32_t data_offset = read_u32le(&bytes[10]);
  const std::uint32_t dib_size = read_u32le(&bytes[14]);
  if (dib_size < 40) throw FormatError("unsupported BMP header: " + path);
  const std::int32_t width = read_i32le(&bytes[18]);
  const std::int32_t raw_height = read_i32le(&bytes[22]);
  const std::uint16_t bpp = read_u16le(&bytes[28]);
  const std::uint32_t compression = read_u32le(&bytes[30]);
  if (width < 1 || raw_height == 0) throw FormatError("bad BMP dimensions: " + path);
  if (compression != 0 || (bpp != 8 && bpp != 24 && bpp != 32))
    throw FormatError("unsupported BMP variant (" + std::to_string(bpp) + " bpp): " + path);

  const bool bottom_up = raw_height > 0;
  const std::int32_t height = bottom_up ? raw_height : -raw_height;

  // palette (8 bpp): BGRA quads right after the DIB header
  std::vector<std::uint8_t> palette;
  if (bpp == 8) {
    std::uint32_t colors = read_u32le(&bytes[46]);
    if (colors == 0) colors = 256;
    const std::size_t pal_off = 14 + dib_size;
    if (pal_off + colors * 4 > bytes.size())
      throw FormatError("truncated BMP palette: " + path);
    palette.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pal_off),
                   bytes.begin() + static_cast<std::ptrdiff_t>(pal_off + colors * 4));
  }

  const std::size_t row_stride = (static_cast<std::size_t>(width) * bpp / 8 + 3) & ~std::size_t{3};
  if (data_offset + row_stride * static_cast<std::size_t>(height) > bytes.size())
    throw FormatError("truncated BMP pixel data: " + path);

  RawImage img;
  img.width = width;
  img.height = height;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::int32_t y = 0; y < height; ++y) {
    const std::int32_t src_y = bottom_up ? height - 1 - y : y;
    const std::uint8_t* src = bytes.data() + data_offset + row_stride * static_cast<std::size_t>(src_y);
    std::uint8_t* dst = img.pixels.data() + static_cast<std::size_t>(y) * width * 3;
    for (std::int32_t x = 0; x < width; ++x) {
      std::uint8_t r, g, b;
      if (bpp == 8) {
        const std::size_t pi = static_cast<std::size_t>(src[x]) * 4;
        if (pi + 2 >= palette.size()) throw FormatError("BMP palette index out of range: " + path);
        b = palette[pi];
        g = palette[pi + 1];
        r = palette[pi + 2];
      } else {
        const std::uint8_t* px = src + static_cast<std::size_t>(x) * (bpp / 8);
        b = px[0];
        g = px[1];
        r = px[2];
      }
      dst[x * 3 + 0] = r;
      dst[x * 3 + 1] = g;
      dst[x * 3 + 2] = b;
    }
  }
  return img;
}

RawImage decode_image(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open image file: " + path);
  std::uint8_t sig[8] = {};
  file.read(reinterpret_cast<char*>(sig), 8);
  if (file.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) return decode_png(path);
  if (file.gcount() >= 2 && sig[0] == 'B' && sig[1] == 'M') return decode_bmp(path);
  throw FormatError("unrecognized image format: " + path);
}

void encode_png_gray(const std::string& path, int width, int height,
                     const std::uint8_t* pixels) {
  if (width < 1 || height < 1) throw RangeError("encode_png_gray: empty image");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write image file: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw IoError("libpng allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failure: " + path);
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace akhcr
