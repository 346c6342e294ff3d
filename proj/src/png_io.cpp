#include "shmt/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "shmt/error.hpp"

namespace shmt::png {
namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

void read_callback(png_structp png_ptr, png_bytep out, png_size_t count) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png_ptr));
  if (cursor->offset + count > cursor->bytes->size()) png_error(png_ptr, "truncated PNG data");
  std::memcpy(out, cursor->bytes->data() + cursor->offset, count);
  cursor->offset += count;
}

void write_callback(png_structp png_ptr, png_bytep data, png_size_t count) {
  auto* sink = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png_ptr));
  sink->insert(sink->end(), data, data + count);
}

void flush_callback(png_structp) {}

}  // namespace

Image decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    fail(ErrorKind::kValidation, "not a PNG image");
  }
  png_structp png_ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png_ptr);
  ReadCursor cursor{&bytes, 0};
  std::vector<std::uint8_t> raw;
  png_uint_32 width = 0, height = 0;
  int out_channels = 0;
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_read_struct(&png_ptr, &info, nullptr);
    fail(ErrorKind::kValidation, "corrupt PNG image");
  }
  png_set_read_fn(png_ptr, &cursor, read_callback);
  png_read_info(png_ptr, info);
  width = png_get_image_width(png_ptr, info);
  height = png_get_image_height(png_ptr, info);
  const int color = png_get_color_type(png_ptr, info);
  if (png_get_bit_depth(png_ptr, info) == 16) png_set_strip_16(png_ptr);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png_ptr, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png_ptr);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png_ptr);
  if (png_get_valid(png_ptr, info, PNG_INFO_tRNS)) png_set_strip_alpha(png_ptr);
  png_read_update_info(png_ptr, info);
  out_channels = png_get_channels(png_ptr, info);
  const std::size_t stride = png_get_rowbytes(png_ptr, info);
  raw.resize(stride * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png_ptr, rows.data());
  png_destroy_read_struct(&png_ptr, &info, nullptr);

  const int channels = out_channels >= 3 ? 3 : 1;
  Image image(channels, static_cast<int>(height), static_cast<int>(width));
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        image.at(c, static_cast<int>(y), static_cast<int>(x)) =
            raw[y * stride + x * out_channels + c] / 255.0f;
      }
    }
  }
  return image;
}

Image read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kNotFound, "cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode(const Image& image) {
  require(image.channels() == 1 || image.channels() == 3, "PNG export needs 1 or 3 channels");
  const int channels = image.channels();
  const int h = image.height();
  const int w = image.width();
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * w * channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        raw[(static_cast<std::size_t>(y) * w + x) * channels + c] = to_byte(image.at(c, y, x));
      }
    }
  }
  std::vector<std::uint8_t> out;
  png_structp png_ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png_ptr);
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_write_struct(&png_ptr, &info);
    fail(ErrorKind::kIo, "PNG encoding failed");
  }
  png_set_write_fn(png_ptr, &out, write_callback, flush_callback);
  png_set_IHDR(png_ptr, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png_ptr, info);
  for (int y = 0; y < h; ++y) {
    png_write_row(png_ptr, raw.data() + static_cast<std::size_t>(y) * w * channels);
  }
  png_write_end(png_ptr, nullptr);
  png_destroy_write_struct(&png_ptr, &info);
  return out;
}

void write(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

Image quantize(const Image& image) {
  Image out = image;
  for (float& v : out.pixels()) v = to_byte(v) / 255.0f;
  return out;
}

}  // namespace shmt::png
