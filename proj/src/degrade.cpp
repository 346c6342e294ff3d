#include "shmt/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "shmt/error.hpp"
#include "shmt/imageops.hpp"
#include "shmt/rng.hpp"

namespace shmt::degrade {

void DegradeParams::validate() const {
  auto ordered = [](const Range& r, const char* name) {
    if (!(r.lo <= r.hi)) fail(ErrorKind::kValidation, std::string("degrade.") + name + " range is empty");
  };
  ordered(crop_scale, "crop_scale");
  ordered(rotation_deg, "rotation_deg");
  ordered(alpha, "alpha");
  ordered(sigma, "sigma");
  require(crop_scale.lo > 0.0 && crop_scale.hi <= 1.0, "degrade.crop_scale must lie in (0, 1]");
  require(alpha.lo >= 0.0, "degrade.alpha must be non-negative");
  require(sigma.lo > 0.0, "degrade.sigma must be positive");
}

DegradeParams DegradeParams::identity() {
  DegradeParams p;
  p.crop_scale = {1.0, 1.0};
  p.rotation_deg = {0.0, 0.0};
  p.alpha = {0.0, 0.0};
  p.sigma = {1.0, 1.0};
  return p;
}

void to_json(nlohmann::json& j, const DegradeParams& p) {
  j = {{"crop_scale", {p.crop_scale.lo, p.crop_scale.hi}},
       {"rotation_deg", {p.rotation_deg.lo, p.rotation_deg.hi}},
       {"alpha", {p.alpha.lo, p.alpha.hi}},
       {"sigma", {p.sigma.lo, p.sigma.hi}},
       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, DegradeParams& p) {
  auto range = [&](const char* key, Range& r) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (v.is_number()) {
      r.lo = r.hi = v.get<double>();
    } else {
      r.lo = v.at(0).get<double>();
      r.hi = v.at(1).get<double>();
    }
  };
  range("crop_scale", p.crop_scale);
  range("rotation_deg", p.rotation_deg);
  range("alpha", p.alpha);
  range("sigma", p.sigma);
  if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
}

std::vector<float> elastic_noise(int height, int width, std::uint64_t seed, int component) {
  Rng rng(derive_seed(seed, 0xe1a5, static_cast<std::uint64_t>(component)));
  std::vector<float> noise(static_cast<std::size_t>(height) * width);
  for (float& v : noise) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return noise;
}

std::vector<float> smooth(const std::vector<float>& field, int height, int width, double sigma) {
  require(sigma > 0.0, "smoothing sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  std::vector<double> rows(field.size());
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int b = -radius; b <= radius; ++b) {
        acc += kernel[b + radius] *
               field[static_cast<std::size_t>(y) * width + imageops::reflect_index(x + b, width)];
      }
      rows[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  std::vector<float> out(field.size());
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int a = -radius; a <= radius; ++a) {
        acc += kernel[a + radius] *
               rows[static_cast<std::size_t>(imageops::reflect_index(y + a, height)) * width + x];
      }
      out[static_cast<std::size_t>(y) * width + x] = static_cast<float>(acc);
    }
  }
  return out;
}

DisplacementField elastic_field(int height, int width, double alpha, double sigma,
                                std::uint64_t seed) {
  require(alpha >= 0.0, "elastic alpha must be non-negative");
  require(sigma > 0.0, "elastic sigma must be positive");
  DisplacementField field{height, width, {}, {}};
  const auto n = static_cast<std::size_t>(height) * width;
  if (alpha == 0.0) {
    field.dy.assign(n, 0.0f);
    field.dx.assign(n, 0.0f);
    return field;
  }
  field.dy = smooth(elastic_noise(height, width, seed, 0), height, width, sigma);
  field.dx = smooth(elastic_noise(height, width, seed, 1), height, width, sigma);
  for (std::size_t i = 0; i < n; ++i) {
    field.dy[i] = static_cast<float>(field.dy[i] * alpha);
    field.dx[i] = static_cast<float>(field.dx[i] * alpha);
  }
  return field;
}

TransformRecord sample_transform(int height, int width, const DegradeParams& params) {
  params.validate();
  Rng rng(derive_seed(params.seed, 0xde9a));
  TransformRecord r;
  const double scale = std::sqrt(rng.uniform(params.crop_scale.lo, params.crop_scale.hi));
  r.crop_h = std::clamp(static_cast<int>(std::lround(height * scale)), 1, height);
  r.crop_w = std::clamp(static_cast<int>(std::lround(width * scale)), 1, width);
  r.crop_y = rng.uniform_int(0, height - r.crop_h);
  r.crop_x = rng.uniform_int(0, width - r.crop_w);
  r.angle_deg = rng.uniform(params.rotation_deg.lo, params.rotation_deg.hi);
  r.alpha = rng.uniform(params.alpha.lo, params.alpha.hi);
  r.sigma = rng.uniform(params.sigma.lo, params.sigma.hi);
  r.field_seed = rng.next();
  return r;
}

namespace {

// Exact values at multiples of 90 degrees so quarter turns permute pixels.
void exact_sincos(double degrees, double& s, double& c) {
  const double quarters = degrees / 90.0;
  if (quarters == std::round(quarters)) {
    static constexpr double kSin[4] = {0.0, 1.0, 0.0, -1.0};
    static constexpr double kCos[4] = {1.0, 0.0, -1.0, 0.0};
    const int q = ((static_cast<int>(std::round(quarters)) % 4) + 4) % 4;
    s = kSin[q];
    c = kCos[q];
    return;
  }
  const double rad = degrees * std::numbers::pi / 180.0;
  s = std::sin(rad);
  c = std::cos(rad);
}

}  // namespace

MakeupRep apply_transform(const Image& foreground, const Image& mask,
                          const TransformRecord& record) {
  require_channels(mask, 1, "degrade mask");
  require(foreground.height() == mask.height() && foreground.width() == mask.width(),
          "degrade: mask shape does not match foreground");
  const int h = foreground.height();
  const int w = foreground.width();
  const DisplacementField field = elastic_field(h, w, record.alpha, record.sigma, record.field_seed);

  double sin_a = 0.0;
  double cos_a = 1.0;
  exact_sincos(record.angle_deg, sin_a, cos_a);
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  const double sy = static_cast<double>(record.crop_h) / h;
  const double sx = static_cast<double>(record.crop_w) / w;

  MakeupRep rep{Image(foreground.channels(), h, w), Image(1, h, w), record};
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      // Elastic: location in the rotated frame.
      const double ey = y + field.dy[i];
      const double ex = x + field.dx[i];
      // Rotation about the centre: location in the resized crop.
      const double ry = cos_a * (ey - cy) + sin_a * (ex - cx) + cy;
      const double rx = -sin_a * (ey - cy) + cos_a * (ex - cx) + cx;
      if (ry < -0.5 || rx < -0.5 || ry > h - 0.5 || rx > w - 0.5) continue;
      // Resize-back of the crop box: location in the source image.
      const double py = std::clamp(record.crop_y + (ry + 0.5) * sy - 0.5,
                                   static_cast<double>(record.crop_y),
                                   static_cast<double>(record.crop_y + record.crop_h - 1));
      const double px = std::clamp(record.crop_x + (rx + 0.5) * sx - 0.5,
                                   static_cast<double>(record.crop_x),
                                   static_cast<double>(record.crop_x + record.crop_w - 1));
      for (int c = 0; c < foreground.channels(); ++c) {
        rep.image.at(c, y, x) = imageops::sample_bilinear(foreground, c, py, px, 0.0f);
      }
      rep.mask.at(y, x) = imageops::sample_bilinear(mask, 0, py, px, 0.0f) >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return rep;
}

MakeupRep degrade(const Image& foreground, const Image& mask, const DegradeParams& params) {
  require_finite(foreground, "degrade input");
  require_channels(mask, 1, "degrade mask");
  bool any = false;
  for (float v : mask.pixels()) {
    if (v != 0.0f && v != 1.0f) fail(ErrorKind::kValidation, "degrade mask must be binary");
    any = any || v == 1.0f;
  }
  if (!any) fail(ErrorKind::kValidation, "degrade mask has no foreground pixels");
  return apply_transform(foreground, mask, sample_transform(foreground.height(), foreground.width(), params));
}

}  // namespace shmt::degrade
