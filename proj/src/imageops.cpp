#include "shmt/imageops.hpp"

#include <algorithm>
#include <cmath>

#include "shmt/error.hpp"

namespace shmt::imageops {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

Image to_gray(const Image& rgb) {
  require_channels(rgb, 3, "to_gray input");
  require_finite(rgb, "to_gray input");
  Image gray(1, rgb.height(), rgb.width());
  auto r = rgb.plane(0);
  auto g = rgb.plane(1);
  auto b = rgb.plane(2);
  auto out = gray.plane(0);
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[i] = kLumaWeights[0] * r[i] + kLumaWeights[1] * g[i] + kLumaWeights[2] * b[i];
  }
  return gray;
}

Image gaussian_down(const Image& image) {
  const int h = image.height();
  const int w = image.width();
  if (h % 2 != 0 || w % 2 != 0) {
    fail(ErrorKind::kValidation, "gaussian_down requires even dimensions, got " +
                                     std::to_string(h) + "x" + std::to_string(w));
  }
  const int oh = h / 2;
  const int ow = w / 2;
  Image out(image.channels(), oh, ow);
  for (int c = 0; c < image.channels(); ++c) {
    auto src = image.plane(c);
    auto dst = out.plane(c);
#pragma omp parallel
    {
      std::vector<float> row(static_cast<std::size_t>(w));
#pragma omp for schedule(static)
      for (int oy = 0; oy < oh; ++oy) {
        // Vertical pass on the even source row 2*oy, then horizontal on even columns.
        std::fill(row.begin(), row.end(), 0.0f);
        for (int a = 0; a < 5; ++a) {
          const int sy = reflect_index(2 * oy + a - 2, h);
          const float k = kBinomialKernel[a];
          const float* line = src.data() + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) row[x] += k * line[x];
        }
        float* out_line = dst.data() + static_cast<std::size_t>(oy) * ow;
        for (int ox = 0; ox < ow; ++ox) {
          float acc = 0.0f;
          for (int b = 0; b < 5; ++b) acc += kBinomialKernel[b] * row[reflect_index(2 * ox + b - 2, w)];
          out_line[ox] = acc;
        }
      }
    }
  }
  return out;
}

namespace {

struct Tap {
  int lo;
  int hi;
  float frac;
};

// Align-corners-false source taps for every destination coordinate.
std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::max(s, 0.0);
    int lo = static_cast<int>(std::floor(s));
    lo = std::min(lo, in - 1);
    const int hi = std::min(lo + 1, in - 1);
    taps[d] = {lo, hi, static_cast<float>(s - lo)};
  }
  return taps;
}

}  // namespace

Image resize_bilinear(const Image& image, int height, int width) {
  require(height > 0 && width > 0, "resize target must be positive");
  const auto ty = bilinear_taps(image.height(), height);
  const auto tx = bilinear_taps(image.width(), width);
  Image out(image.channels(), height, width);
  const int iw = image.width();
  for (int c = 0; c < image.channels(); ++c) {
    auto src = image.plane(c);
    auto dst = out.plane(c);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) {
      const Tap& vy = ty[y];
      const float* r0 = src.data() + static_cast<std::size_t>(vy.lo) * iw;
      const float* r1 = src.data() + static_cast<std::size_t>(vy.hi) * iw;
      for (int x = 0; x < width; ++x) {
        const Tap& vx = tx[x];
        const float top = r0[vx.lo] + vx.frac * (r0[vx.hi] - r0[vx.lo]);
        const float bot = r1[vx.lo] + vx.frac * (r1[vx.hi] - r1[vx.lo]);
        dst[static_cast<std::size_t>(y) * width + x] = top + vy.frac * (bot - top);
      }
    }
  }
  return out;
}

Image upsample2x(const Image& image) {
  return resize_bilinear(image, image.height() * 2, image.width() * 2);
}

int max_pyramid_levels(int height, int width) {
  int levels = 0;
  while (height % 2 == 0 && width % 2 == 0 && height > 1 && width > 1) {
    height /= 2;
    width /= 2;
    ++levels;
  }
  return levels;
}

PyramidStack build_pyramid(const Image& gray, int levels) {
  require_channels(gray, 1, "build_pyramid input");
  require(levels >= 1, "pyramid needs at least one level");
  const int available = max_pyramid_levels(gray.height(), gray.width());
  if (levels > available) {
    fail(ErrorKind::kValidation, "pyramid level count " + std::to_string(levels) +
                                     " too large for " + std::to_string(gray.height()) + "x" +
                                     std::to_string(gray.width()) + " (max " +
                                     std::to_string(available) + ")");
  }
  PyramidStack stack;
  Image current = gray;
  for (int i = 0; i < levels; ++i) {
    Image low = gaussian_down(current);
    stack.details.push_back(axpby(1.0f, current, -1.0f, upsample2x(low)));
    current = std::move(low);
  }
  stack.residual = std::move(current);
  return stack;
}

Image reconstruct(const PyramidStack& stack) {
  require(!stack.residual.empty(), "pyramid residual is empty");
  Image current = stack.residual;
  for (int i = stack.level_count() - 1; i >= 0; --i) {
    const Image& detail = stack.details[i];
    if (detail.height() != current.height() * 2 || detail.width() != current.width() * 2 ||
        detail.channels() != current.channels()) {
      fail(ErrorKind::kValidation, "pyramid level " + std::to_string(i) +
                                       " shape does not match the next coarser level");
    }
    current = axpby(1.0f, detail, 1.0f, upsample2x(current));
  }
  return current;
}

Image pixel_unshuffle(const Image& image, int factor) {
  require(factor >= 1, "unshuffle factor must be positive");
  const int h = image.height();
  const int w = image.width();
  if (h % factor != 0 || w % factor != 0) {
    fail(ErrorKind::kValidation, "pixel_unshuffle: " + std::to_string(h) + "x" +
                                     std::to_string(w) + " not divisible by " +
                                     std::to_string(factor));
  }
  const int oh = h / factor;
  const int ow = w / factor;
  const int oc = image.channels() * factor * factor;
  Image out(oc, oh, ow);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < oc; ++ch) {
    const int c = ch / (factor * factor);
    const int dy = (ch / factor) % factor;
    const int dx = ch % factor;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) out.at(ch, y, x) = image.at(c, y * factor + dy, x * factor + dx);
    }
  }
  return out;
}

Image pixel_shuffle(const Image& image, int factor) {
  require(factor >= 1, "shuffle factor must be positive");
  const int block = factor * factor;
  if (image.channels() % block != 0) {
    fail(ErrorKind::kValidation, "pixel_shuffle: channel count not divisible by factor^2");
  }
  const int c_out = image.channels() / block;
  Image out(c_out, image.height() * factor, image.width() * factor);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < image.channels(); ++ch) {
    const int c = ch / block;
    const int dy = (ch / factor) % factor;
    const int dx = ch % factor;
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) out.at(c, y * factor + dy, x * factor + dx) = image.at(ch, y, x);
    }
  }
  return out;
}

Image match_resolution(const Image& band, int height, int width) {
  if (band.height() == height && band.width() == width) return band;
  if (band.height() > height) {
    require(band.height() % height == 0 && band.width() % width == 0 &&
                band.height() / height == band.width() / width,
            "detail band not an integer multiple of the target resolution");
    return pixel_unshuffle(band, band.height() / height);
  }
  return resize_bilinear(band, height, width);
}

float sample_bilinear(const Image& image, int channel, double y, double x, float fill) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const int y0 = static_cast<int>(fy);
  const int x0 = static_cast<int>(fx);
  const double wy = y - fy;
  const double wx = x - fx;
  auto value = [&](int yy, int xx) -> double {
    if (yy < 0 || xx < 0 || yy >= image.height() || xx >= image.width()) return fill;
    return image.at(channel, yy, xx);
  };
  const double top = value(y0, x0) * (1.0 - wx) + value(y0, x0 + 1) * wx;
  const double bot = value(y0 + 1, x0) * (1.0 - wx) + value(y0 + 1, x0 + 1) * wx;
  return static_cast<float>(top * (1.0 - wy) + bot * wy);
}

std::vector<int> downsample_labels(const std::vector<int>& labels, int height, int width,
                                   int factor, int label_count) {
  require(labels.size() == static_cast<std::size_t>(height) * width, "label map size mismatch");
  require(factor >= 1 && height % factor == 0 && width % factor == 0,
          "label map not divisible by factor");
  const int oh = height / factor;
  const int ow = width / factor;
  std::vector<int> out(static_cast<std::size_t>(oh) * ow, 0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < oh; ++y) {
    std::vector<int> votes(static_cast<std::size_t>(label_count));
    for (int x = 0; x < ow; ++x) {
      std::fill(votes.begin(), votes.end(), 0);
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          const int l = labels[static_cast<std::size_t>(y * factor + dy) * width + x * factor + dx];
          ++votes[l];
        }
      }
      out[static_cast<std::size_t>(y) * ow + x] =
          static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

double detail_energy(const Image& gray, const Image& mask, int border) {
  const Image low = gaussian_down(gray);
  const Image h0 = axpby(1.0f, gray, -1.0f, upsample2x(low));
  const int h = mask.height();
  const int w = mask.width();
  auto inside = [&](int y, int x) {
    for (int dy = -border; dy <= border; ++dy) {
      for (int dx = -border; dx <= border; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || xx < 0 || yy >= h || xx >= w || mask.at(yy, xx) < 0.5f) return false;
      }
    }
    return true;
  };
  double sum = 0.0;
  double count = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!inside(y, x)) continue;
      const double d = h0.at(y, x);
      sum += d * d;
      count += 1.0;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace shmt::imageops
