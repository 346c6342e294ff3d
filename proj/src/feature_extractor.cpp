#include <algorithm>
#include <cmath>

#include "shmt/error.hpp"
#include "shmt/feature_extractor.hpp"
#include "shmt/rng.hpp"

namespace shmt::metrics {

namespace {

ConvLayer he_layer(int in, int out, Rng& rng) {
  ConvLayer layer;
  layer.in = in;
  layer.out = out;
  layer.weights.resize(static_cast<std::size_t>(out) * in * 9);
  layer.bias.assign(out, 0.0f);
  const double scale = std::sqrt(2.0 / (in * 9));
  for (float& w : layer.weights) w = static_cast<float>(rng.normal() * scale);
  return layer;
}

void require_grid(const Image& rgb, int grid, const std::string& who) {
  require_channels(rgb, 3, who + " input");
  require(rgb.height() % grid == 0 && rgb.width() % grid == 0 && rgb.height() > 0,
          who + " needs sides divisible by " + std::to_string(grid) + ", got " +
              std::to_string(rgb.height()) + "x" + std::to_string(rgb.width()));
  require_finite(rgb, who + " input");
}

// Mean of each channel over kGrid x kGrid cells, cell-major with 3 values each.
std::vector<float> cell_means(const Image& rgb, int grid) {
  const int ch = rgb.height() / grid;
  const int cw = rgb.width() / grid;
  std::vector<float> out(static_cast<std::size_t>(grid) * grid * 3, 0.0f);
  const double inv = 1.0 / (ch * cw);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int y = gy * ch; y < (gy + 1) * ch; ++y)
          for (int x = gx * cw; x < (gx + 1) * cw; ++x) acc += rgb.at(c, y, x);
        out[(gy * grid + gx) * 3 + c] = static_cast<float>(acc * inv);
      }
    }
  }
  return out;
}

}  // namespace

namespace kernels {

Activation from_image(const Image& rgb) {
  Activation a{rgb.channels(), rgb.height(), rgb.width(), {}};
  a.values.resize(rgb.size());
  // centre around zero so the ReLUs see both signs
  for (std::size_t i = 0; i < rgb.size(); ++i) a.values[i] = rgb.pixels()[i] * 2.0f - 1.0f;
  return a;
}

Activation conv3x3_s2(const Activation& input, const ConvLayer& layer, bool relu) {
  require(input.channels == layer.in, "conv input has " + std::to_string(input.channels) +
                                          " channels, layer expects " + std::to_string(layer.in));
  const int h = input.height, w = input.width;
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Activation out{layer.out, oh, ow, {}};
  out.values.assign(static_cast<std::size_t>(layer.out) * oh * ow, 0.0f);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

#pragma omp parallel for schedule(static)
  for (int o = 0; o < layer.out; ++o) {
    float* dst = out.values.data() + static_cast<std::size_t>(o) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) dst[i] = layer.bias[o];
    for (int c = 0; c < layer.in; ++c) {
      const float* src = input.values.data() + c * plane;
      const float* k = layer.weights.data() + (static_cast<std::size_t>(o) * layer.in + c) * 9;
      for (int y = 0; y < oh; ++y) {
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = 2 * y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const float* row = src + static_cast<std::size_t>(sy) * w;
          float* drow = dst + static_cast<std::size_t>(y) * ow;
          for (int x = 0; x < ow; ++x) {
            const int sx = 2 * x - 1;
            float acc = 0.0f;
            if (sx >= 0) acc += k[ky * 3] * row[sx];
            acc += k[ky * 3 + 1] * row[sx + 1];
            if (sx + 2 < w) acc += k[ky * 3 + 2] * row[sx + 2];
            drow[x] += acc;
          }
        }
      }
    }
    if (relu)
      for (int i = 0; i < oh * ow; ++i) dst[i] = std::max(dst[i], 0.0f);
  }
  return out;
}

}  // namespace kernels

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed) : seed_(seed) {
  Rng rng(derive_seed(seed, 0x6665));
  layers_.push_back(he_layer(3, 32, rng));
  layers_.push_back(he_layer(32, 64, rng));
  layers_.push_back(he_layer(64, kDim, rng));
}

std::string RandomConvExtractor::id() const {
  return seed_ == kDefaultSeed ? "random-conv" : "random-conv@" + std::to_string(seed_);
}

Features RandomConvExtractor::extract(const Image& rgb) const {
  require_grid(rgb, 8, "random-conv");
  Activation a = kernels::from_image(rgb);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    a = kernels::conv3x3_s2(a, layers_[i], i + 1 < layers_.size());

  Features f;
  f.patches = a.height * a.width;
  f.key_dim = a.channels;
  f.keys.resize(static_cast<std::size_t>(f.patches) * f.key_dim);
  f.cls.assign(f.key_dim, 0.0f);
  for (int c = 0; c < a.channels; ++c) {
    double acc = 0.0;
    for (int p = 0; p < f.patches; ++p) {
      const float v = a.values[static_cast<std::size_t>(c) * f.patches + p];
      f.keys[static_cast<std::size_t>(p) * f.key_dim + c] = v;
      acc += v;
    }
    f.cls[c] = static_cast<float>(acc / f.patches);
  }
  return f;
}

LinearExtractor::LinearExtractor(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6c696e));
  const int in = 3 * kGrid * kGrid;
  projection_.resize(static_cast<std::size_t>(kDim) * in);
  for (float& w : projection_) w = static_cast<float>(rng.normal() / std::sqrt(in));
}

Features LinearExtractor::extract(const Image& rgb) const {
  require_grid(rgb, kGrid, "linear");
  const std::vector<float> cells = cell_means(rgb, kGrid);
  Features f;
  f.patches = kGrid * kGrid;
  f.key_dim = 3;
  f.keys = cells;
  f.cls.assign(kDim, 0.0f);
  const int in = static_cast<int>(cells.size());
  for (int d = 0; d < kDim; ++d) {
    double acc = 0.0;
    for (int i = 0; i < in; ++i) acc += projection_[static_cast<std::size_t>(d) * in + i] * cells[i];
    f.cls[d] = static_cast<float>(acc);
  }
  return f;
}

Features GradientExtractor::extract(const Image& rgb) const {
  require_grid(rgb, kGrid, "gradient");
  const int h = rgb.height(), w = rgb.width();
  Image m(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = (rgb.at(0, y, x) + rgb.at(1, y, x) + rgb.at(2, y, x)) / 3.0f;

  Features f;
  f.patches = kGrid * kGrid;
  f.key_dim = 4;
  f.keys.assign(static_cast<std::size_t>(f.patches) * 4, 0.0f);
  const int ch = h / kGrid, cw = w / kGrid;
  for (int gy = 0; gy < kGrid; ++gy) {
    for (int gx = 0; gx < kGrid; ++gx) {
      double acc[4] = {0, 0, 0, 0};
      for (int y = gy * ch; y < (gy + 1) * ch; ++y) {
        for (int x = gx * cw; x < (gx + 1) * cw; ++x) {
          const double dx = m.at(y, std::min(x + 1, w - 1)) - m.at(y, x);
          const double dy = m.at(std::min(y + 1, h - 1), x) - m.at(y, x);
          acc[0] += dx;
          acc[1] += dy;
          acc[2] += std::abs(dx);
          acc[3] += std::abs(dy);
        }
      }
      float* key = f.keys.data() + (gy * kGrid + gx) * 4;
      for (int k = 0; k < 4; ++k) key[k] = static_cast<float>(acc[k] / (ch * cw));
    }
  }
  f.cls.assign(4, 0.0f);
  for (int p = 0; p < f.patches; ++p)
    for (int k = 0; k < 4; ++k) f.cls[k] += f.keys[p * 4 + k] / f.patches;
  return f;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& id) {
  if (id == "random-conv") return std::make_unique<RandomConvExtractor>();
  if (id == "linear") return std::make_unique<LinearExtractor>();
  if (id == "gradient") return std::make_unique<GradientExtractor>();
  fail(ErrorKind::kValidation, "unknown extractor: " + id);
}

std::vector<std::string> extractor_ids() { return {"random-conv", "linear", "gradient"}; }

}  // namespace shmt::metrics
