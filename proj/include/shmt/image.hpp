#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace shmt {

// Planar (channel-major) float image. Colour images have 3 channels, grey
// images and masks have 1. Pixel values are nominally in [0,1]; Laplacian
// detail bands may be negative.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, float fill = 0.0f);
  Image(int channels, int height, int width, std::vector<float> pixels);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }
  bool same_shape(const Image& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  float& at(int c, int y, int x) { return pixels_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return pixels_[index(c, y, x)]; }
  float& at(int y, int x) { return pixels_[index(0, y, x)]; }
  float at(int y, int x) const { return pixels_[index(0, y, x)]; }

  std::span<float> plane(int c) { return {pixels_.data() + c * plane_size(), plane_size()}; }
  std::span<const float> plane(int c) const {
    return {pixels_.data() + c * plane_size(), plane_size()};
  }
  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }
  const std::vector<float>& vector() const { return pixels_; }

  Image channel(int c) const;

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

// Throws a validation error naming `what` if any pixel is NaN or infinite.
void require_finite(const Image& image, const std::string& what);
void require_channels(const Image& image, int channels, const std::string& what);

float max_abs_difference(const Image& a, const Image& b);

// Elementwise a*x + b*y on same-shaped images.
Image axpby(float a, const Image& x, float b, const Image& y);

Image multiply(const Image& image, const Image& mask);
Image invert_mask(const Image& mask);
Image concat_channels(const Image& a, const Image& b);

}  // namespace shmt
