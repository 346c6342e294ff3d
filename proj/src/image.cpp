#include "shmt/image.hpp"

#include <algorithm>
#include <cmath>

#include "shmt/error.hpp"

namespace shmt {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kUntrained: return "untrained";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

Image::Image(int channels, int height, int width, float fill)
    : channels_(channels), height_(height), width_(width) {
  require(channels > 0 && height > 0 && width > 0, "image dimensions must be positive");
  pixels_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Image::Image(int channels, int height, int width, std::vector<float> pixels)
    : channels_(channels), height_(height), width_(width), pixels_(std::move(pixels)) {
  require(channels > 0 && height > 0 && width > 0, "image dimensions must be positive");
  require(pixels_.size() == static_cast<std::size_t>(channels) * height * width,
          "pixel buffer size does not match image dimensions");
}

Image Image::channel(int c) const {
  require(c >= 0 && c < channels_, "channel index out of range");
  auto p = plane(c);
  return Image(1, height_, width_, std::vector<float>(p.begin(), p.end()));
}

void require_finite(const Image& image, const std::string& what) {
  for (float v : image.pixels()) {
    if (!std::isfinite(v)) fail(ErrorKind::kValidation, what + " contains non-finite values");
  }
}

void require_channels(const Image& image, int channels, const std::string& what) {
  if (image.channels() != channels) {
    fail(ErrorKind::kValidation, what + " must have " + std::to_string(channels) +
                                     " channel(s), got " + std::to_string(image.channels()));
  }
}

float max_abs_difference(const Image& a, const Image& b) {
  require(a.same_shape(b), "max_abs_difference: shape mismatch");
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.pixels()[i] - b.pixels()[i]));
  }
  return worst;
}

Image axpby(float a, const Image& x, float b, const Image& y) {
  require(x.same_shape(y), "axpby: shape mismatch");
  Image out = x;
  auto dst = out.pixels();
  auto ys = y.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * dst[i] + b * ys[i];
  return out;
}

Image multiply(const Image& image, const Image& mask) {
  require_channels(mask, 1, "mask");
  require(image.height() == mask.height() && image.width() == mask.width(),
          "mask spatial shape does not match image");
  Image out = image;
  for (int c = 0; c < image.channels(); ++c) {
    auto p = out.plane(c);
    auto m = mask.plane(0);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] *= m[i];
  }
  return out;
}

Image invert_mask(const Image& mask) {
  require_channels(mask, 1, "mask");
  Image out = mask;
  for (float& v : out.pixels()) v = 1.0f - v;
  return out;
}

Image concat_channels(const Image& a, const Image& b) {
  require(a.height() == b.height() && a.width() == b.width(),
          "concat_channels: spatial shape mismatch");
  std::vector<float> pixels(a.vector());
  pixels.insert(pixels.end(), b.vector().begin(), b.vector().end());
  return Image(a.channels() + b.channels(), a.height(), a.width(), std::move(pixels));
}

}  // namespace shmt
