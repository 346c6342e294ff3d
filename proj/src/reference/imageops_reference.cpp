#include <cmath>

#include "shmt/error.hpp"
#include "shmt/reference.hpp"

namespace shmt::reference {

Image to_gray(const Image& rgb) {
  require_channels(rgb, 3, "to_gray input");
  Image gray(1, rgb.height(), rgb.width());
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      gray.at(y, x) = imageops::kLumaWeights[0] * rgb.at(0, y, x) +
                      imageops::kLumaWeights[1] * rgb.at(1, y, x) +
                      imageops::kLumaWeights[2] * rgb.at(2, y, x);
    }
  }
  return gray;
}

Image gaussian_down(const Image& image) {
  require(image.height() % 2 == 0 && image.width() % 2 == 0, "odd dimensions");
  Image out(image.channels(), image.height() / 2, image.width() / 2);
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        double acc = 0.0;
        for (int a = 0; a < 5; ++a) {
          for (int b = 0; b < 5; ++b) {
            const int sy = imageops::reflect_index(2 * y + a - 2, image.height());
            const int sx = imageops::reflect_index(2 * x + b - 2, image.width());
            acc += static_cast<double>(imageops::kBinomialKernel[a]) *
                   imageops::kBinomialKernel[b] * image.at(c, sy, sx);
          }
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Image upsample2x(const Image& image) {
  const int h = image.height();
  const int w = image.width();
  Image out(image.channels(), 2 * h, 2 * w);
  auto coord = [](int d, int n, int& lo, int& hi, double& frac) {
    double s = (d + 0.5) / 2.0 - 0.5;
    if (s < 0) s = 0;
    lo = static_cast<int>(std::floor(s));
    if (lo > n - 1) lo = n - 1;
    hi = lo + 1 < n ? lo + 1 : n - 1;
    frac = s - lo;
  };
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < 2 * h; ++y) {
      for (int x = 0; x < 2 * w; ++x) {
        int y0, y1, x0, x1;
        double fy, fx;
        coord(y, h, y0, y1, fy);
        coord(x, w, x0, x1, fx);
        const double v = (1 - fy) * ((1 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1)) +
                         fy * ((1 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1));
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

imageops::PyramidStack build_pyramid(const Image& gray, int levels) {
  imageops::PyramidStack stack;
  Image current = gray;
  for (int i = 0; i < levels; ++i) {
    Image low = gaussian_down(current);
    Image up = upsample2x(low);
    Image detail(1, current.height(), current.width());
    for (int y = 0; y < current.height(); ++y) {
      for (int x = 0; x < current.width(); ++x) detail.at(y, x) = current.at(y, x) - up.at(y, x);
    }
    stack.details.push_back(detail);
    current = low;
  }
  stack.residual = current;
  return stack;
}

Image reconstruct(const imageops::PyramidStack& stack) {
  Image current = stack.residual;
  for (int i = stack.level_count() - 1; i >= 0; --i) {
    Image up = upsample2x(current);
    Image next = stack.details[i];
    for (int y = 0; y < next.height(); ++y) {
      for (int x = 0; x < next.width(); ++x) next.at(y, x) += up.at(y, x);
    }
    current = next;
  }
  return current;
}

Image pixel_unshuffle(const Image& image, int r) {
  require(image.height() % r == 0 && image.width() % r == 0, "indivisible dims");
  Image out(image.channels() * r * r, image.height() / r, image.width() / r);
  // Walk the input and scatter, the opposite traversal of the parallel gather.
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        const int ch = c * r * r + (y % r) * r + (x % r);
        out.at(ch, y / r, x / r) = image.at(c, y, x);
      }
    }
  }
  return out;
}

std::vector<float> gaussian_smooth(const std::vector<float>& field, int height, int width,
                                   double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (double& v : k) v /= total;
  std::vector<float> out(field.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int a = -radius; a <= radius; ++a) {
        for (int b = -radius; b <= radius; ++b) {
          const int sy = imageops::reflect_index(y + a, height);
          const int sx = imageops::reflect_index(x + b, width);
          acc += k[a + radius] * k[b + radius] * field[static_cast<std::size_t>(sy) * width + sx];
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace shmt::reference
