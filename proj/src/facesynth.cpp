#include "shmt/facesynth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "shmt/error.hpp"
#include "shmt/imageops.hpp"
#include "shmt/rng.hpp"

namespace shmt::facesynth {

std::string_view to_string(Complexity c) {
  return c == Complexity::kSimple ? "simple" : "complex";
}

Complexity complexity_from_string(std::string_view s) {
  if (s == "simple") return Complexity::kSimple;
  if (s == "complex") return Complexity::kComplex;
  fail(ErrorKind::kValidation, "unknown complexity tier '" + std::string(s) + "'");
}

Region region_from_string(std::string_view s) {
  if (s == "lip") return Region::kLip;
  if (s == "eye") return Region::kEye;
  if (s == "face") return Region::kFace;
  fail(ErrorKind::kValidation, "unknown area '" + std::string(s) + "' (expected lip, eye or face)");
}

double Ellipse::radius2(double y, double x) const {
  const double dy = y - cy;
  const double dx = x - cx;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return (u * u) / (rx * rx) + (v * v) / (ry * ry);
}

namespace {

constexpr double kPi = std::numbers::pi;

// Face-local coordinates: u across, v down, both in [-1,1] inside the face.
struct FaceFrame {
  double u, v;
};

FaceFrame face_frame(const Ellipse& face, double y, double x) {
  const double dy = y - face.cy;
  const double dx = x - face.cx;
  const double c = std::cos(face.angle);
  const double s = std::sin(face.angle);
  return {(c * dx + s * dy) / face.rx, (-s * dx + c * dy) / face.ry};
}

// Point in face-local coordinates back to pixels.
void from_frame(const Ellipse& face, double u, double v, double& y, double& x) {
  const double c = std::cos(face.angle);
  const double s = std::sin(face.angle);
  const double du = u * face.rx;
  const double dv = v * face.ry;
  x = face.cx + c * du - s * dv;
  y = face.cy + s * du + c * dv;
}

Ellipse feature_ellipse(const Ellipse& face, double u, double v, double ru, double rv) {
  Ellipse e;
  from_frame(face, u, v, e.cy, e.cx);
  e.rx = ru * face.rx;
  e.ry = rv * face.ry;
  e.angle = face.angle;
  return e;
}

std::array<float, 3> color(Rng& rng, double lo, double hi) {
  return {static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi)),
          static_cast<float>(rng.uniform(lo, hi))};
}

double gauss2(double u, double v, double cu, double cv, double s) {
  return std::exp(-((u - cu) * (u - cu) + (v - cv) * (v - cv)) / (2 * s * s));
}

// Height field of the face: an ellipsoid cap with nose, eye sockets and lips.
double depth(double u, double v, double eye_v, double lip_v) {
  const double r2 = u * u + v * v;
  const double base = std::sqrt(std::max(0.0, 1.0 - r2));
  return base + 0.22 * gauss2(u, v, 0.0, 0.05, 0.12) - 0.10 * gauss2(u, v, -0.38, eye_v, 0.13) -
         0.10 * gauss2(u, v, 0.38, eye_v, 0.13) + 0.06 * gauss2(u, v, 0.0, lip_v, 0.10);
}

void blend(std::array<float, 3>& px, const std::array<float, 3>& c, double a) {
  for (int i = 0; i < 3; ++i) px[i] = static_cast<float>((1.0 - a) * px[i] + a * c[i]);
}

}  // namespace

FaceGeometry sample_geometry(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9e0));
  const double n = kImageSize;
  FaceGeometry g;
  g.face.cy = 0.54 * n + rng.uniform(-2.0, 2.0);
  g.face.cx = 0.5 * n + rng.uniform(-3.0, 3.0);
  g.face.ry = n * rng.uniform(0.36, 0.41);
  g.face.rx = n * rng.uniform(0.28, 0.32);
  g.face.angle = rng.uniform(-0.15, 0.15);
  const double eye_v = rng.uniform(-0.28, -0.16);
  const double eye_u = rng.uniform(0.34, 0.42);
  const double eye_ru = rng.uniform(0.20, 0.25);
  const double eye_rv = rng.uniform(0.11, 0.15);
  g.left_eye = feature_ellipse(g.face, -eye_u, eye_v, eye_ru, eye_rv);
  g.right_eye = feature_ellipse(g.face, eye_u, eye_v, eye_ru, eye_rv);
  g.lips = feature_ellipse(g.face, 0.0, rng.uniform(0.45, 0.56), rng.uniform(0.28, 0.36),
                           rng.uniform(0.10, 0.14));
  const double azimuth = rng.uniform(0.0, 2.0 * kPi);
  const double elevation = rng.uniform(0.2, 0.6);
  g.light = {std::sin(elevation) * std::cos(azimuth), std::sin(elevation) * std::sin(azimuth),
             std::cos(elevation)};
  return g;
}

FaceStyle sample_style(std::uint64_t seed, Complexity tier) {
  Rng rng(derive_seed(seed, 0x57e));
  FaceStyle s;
  s.tier = tier;
  const double tone = rng.uniform(0.45, 0.92);
  s.skin = {static_cast<float>(tone), static_cast<float>(tone * rng.uniform(0.72, 0.86)),
            static_cast<float>(tone * rng.uniform(0.58, 0.76))};
  s.lip = {static_cast<float>(rng.uniform(0.45, 0.95)), static_cast<float>(rng.uniform(0.05, 0.35)),
           static_cast<float>(rng.uniform(0.10, 0.45))};
  s.eye_shadow = color(rng, 0.05, 0.85);
  // Painted decals contrast with the skin in luminance so they read as
  // high-frequency makeup rather than a tint.
  const bool dark_decal = tone > 0.62;
  s.decal = dark_decal ? color(rng, 0.0, 0.25) : color(rng, 0.75, 1.0);
  s.decal[rng.uniform_int(0, 2)] = static_cast<float>(rng.uniform(0.0, 1.0));
  s.background_a = color(rng, 0.1, 0.9);
  s.background_b = color(rng, 0.1, 0.9);
  const double hair = rng.uniform(0.05, 0.45);
  s.hair = {static_cast<float>(hair), static_cast<float>(hair * 0.8), static_cast<float>(hair * 0.6)};
  s.background_angle = rng.uniform(0.0, 2.0 * kPi);
  s.decal_pattern = rng.uniform_int(0, 3);
  s.detail_seed = rng.next();
  return s;
}

std::vector<int> rasterize_labels(const FaceGeometry& g, int size) {
  std::vector<int> labels(static_cast<std::size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int label = static_cast<int>(Region::kBackground);
      if (g.face.contains(y, x)) {
        label = static_cast<int>(Region::kFace);
        if (g.lips.contains(y, x)) {
          label = static_cast<int>(Region::kLip);
        } else if (g.left_eye.contains(y, x) || g.right_eye.contains(y, x)) {
          label = static_cast<int>(Region::kEye);
        }
      }
      labels[static_cast<std::size_t>(y) * size + x] = label;
    }
  }
  return labels;
}

Image render_shape_map(const FaceGeometry& g, int size) {
  Image shape(1, size, size);
  const auto& c_left = g.left_eye;
  const FaceFrame eye = face_frame(g.face, c_left.cy, c_left.cx);
  const FaceFrame lip = face_frame(g.face, g.lips.cy, g.lips.cx);
  constexpr double h = 1e-3;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!g.face.contains(y, x)) continue;
      const FaceFrame f = face_frame(g.face, y, x);
      const double dzdu = (depth(f.u + h, f.v, eye.v, lip.v) - depth(f.u - h, f.v, eye.v, lip.v)) / (2 * h);
      const double dzdv = (depth(f.u, f.v + h, eye.v, lip.v) - depth(f.u, f.v - h, eye.v, lip.v)) / (2 * h);
      // Normal of z(u,v) in (x, y, z) image axes; clamp the rim slope.
      double nx = -std::clamp(dzdu, -6.0, 6.0);
      double ny = -std::clamp(dzdv, -6.0, 6.0);
      double nz = 1.0;
      const double len = std::sqrt(nx * nx + ny * ny + nz * nz);
      nx /= len;
      ny /= len;
      nz /= len;
      const double lambert = nx * g.light[0] + ny * g.light[1] + nz * g.light[2];
      shape.at(y, x) = static_cast<float>(std::clamp(0.1 + 0.9 * lambert, 0.0, 1.0));
    }
  }
  return shape;
}

namespace {

// Makeup-like painted patterns, bound to face coordinates.
double decal_alpha(int pattern, double y, double x, const FaceFrame& f) {
  // Painted band across forehead and cheeks, avoiding the features' centres.
  const bool band = f.v < -0.45 || (std::abs(f.u) > 0.22 && f.v > -0.05 && f.v < 0.42);
  if (!band) return 0.0;
  const int iy = static_cast<int>(std::floor(y));
  const int ix = static_cast<int>(std::floor(x));
  switch (pattern) {
    case 0:  // diagonal stripes, period 4
      return ((ix + iy) % 4 < 2) ? 1.0 : 0.0;
    case 1:  // checker with 2 px cells
      return ((ix / 2 + iy / 2) % 2 == 0) ? 0.9 : 0.0;
    case 2:  // 2x2 dots on a 4 px lattice
      return (ix % 4 < 2 && iy % 4 < 2) ? 1.0 : 0.0;
    default:  // zigzag
      return ((ix + std::abs((iy % 6) - 3)) % 4 < 2) ? 1.0 : 0.0;
  }
}

}  // namespace

namespace {

// Separable Gaussian, radius 2, reflect-101 borders.
Image lens_blur(const Image& image, double sigma) {
  std::array<float, 5> k{};
  double sum = 0.0;
  for (int i = -2; i <= 2; ++i) sum += k[i + 2] = static_cast<float>(std::exp(-i * i / (2 * sigma * sigma)));
  for (auto& v : k) v = static_cast<float>(v / sum);
  const int h = image.height();
  const int w = image.width();
  Image tmp(image.channels(), h, w);
  Image out(image.channels(), h, w);
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int i = -2; i <= 2; ++i) acc += k[i + 2] * image.at(c, y, imageops::reflect_index(x + i, w));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(c, imageops::reflect_index(y + i, h), x);
        out.at(c, y, x) = std::clamp(acc, 0.0f, 1.0f);
      }
  }
  return out;
}

}  // namespace

FaceSample render(const FaceGeometry& g, const FaceStyle& s, std::uint64_t seed) {
  const int n = kImageSize;
  FaceSample out;
  out.seed = seed;
  out.geometry = g;
  out.style = s;
  out.labels = rasterize_labels(g, n);
  out.shape_map = render_shape_map(g, n);
  out.image = Image(3, n, n);
  out.mask = Image(1, n, n);

  // Content-like fine detail for the simple tier: freckles and fine lines.
  std::vector<float> fine(static_cast<std::size_t>(n) * n, 0.0f);
  if (s.tier == Complexity::kSimple) {
    Rng rng(derive_seed(s.detail_seed, 0xf7e));
    const int freckles = rng.uniform_int(10, 22);
    for (int k = 0; k < freckles; ++k) {
      double y, x;
      from_frame(g.face, rng.uniform(-0.6, 0.6), rng.uniform(-0.05, 0.35), y, x);
      const int iy = static_cast<int>(y), ix = static_cast<int>(x);
      if (iy >= 0 && ix >= 0 && iy < n && ix < n) fine[static_cast<std::size_t>(iy) * n + ix] = -0.14f;
    }
    // Two forehead lines.
    for (int line = 0; line < 2; ++line) {
      const double v = -0.62 + 0.1 * line + rng.uniform(-0.03, 0.03);
      for (double u = -0.4; u <= 0.4; u += 0.02) {
        double y, x;
        from_frame(g.face, u, v + 0.03 * std::sin(6 * u), y, x);
        const int iy = static_cast<int>(y), ix = static_cast<int>(x);
        if (iy >= 0 && ix >= 0 && iy < n && ix < n) fine[static_cast<std::size_t>(iy) * n + ix] = -0.09f;
      }
    }
  }

  const double ca = std::cos(s.background_angle);
  const double sa = std::sin(s.background_angle);
  Ellipse hair = g.face;
  hair.ry += 6.0;
  hair.rx += 5.0;
  hair.cy -= 3.0;

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      std::array<float, 3> px{};
      const bool inside = g.face.contains(y, x);
      if (!inside) {
        const double t = std::clamp(0.5 + ((x - n / 2.0) * ca + (y - n / 2.0) * sa) / n, 0.0, 1.0);
        px = s.background_a;
        blend(px, s.background_b, t);
        if (hair.contains(y, x) && y < g.face.cy) px = s.hair;
      } else {
        out.mask.at(y, x) = 1.0f;
        const FaceFrame f = face_frame(g.face, y, x);
        px = s.skin;
        const int label = out.labels[static_cast<std::size_t>(y) * n + x];
        if (label == static_cast<int>(Region::kEye)) {
          const Ellipse& eye_area = g.left_eye.contains(y, x) ? g.left_eye : g.right_eye;
          const double r2 = eye_area.radius2(y, x);
          blend(px, s.eye_shadow, 0.8);
          // The eye itself: sclera with a dark iris, part of the content.
          if (r2 < 0.28) {
            px = {0.84f, 0.83f, 0.8f};
            Ellipse iris = eye_area;
            iris.rx *= 0.22;
            iris.ry *= 0.45;
            if (iris.contains(y, x)) px = {0.28f, 0.2f, 0.15f};
          }
        } else if (label == static_cast<int>(Region::kLip)) {
          px = s.lip;
          // Mouth line through the lip centre.
          if (std::abs(f.v - face_frame(g.face, g.lips.cy, g.lips.cx).v) * g.face.ry < 0.5) {
            blend(px, {0.2f, 0.05f, 0.05f}, 0.6);
          }
        } else {
          // Brows sit just above the eye-shadow areas.
          const FaceFrame le = face_frame(g.face, g.left_eye.cy, g.left_eye.cx);
          const double brow_v = le.v - 0.2;
          if (std::abs(f.v - brow_v - 0.08 * (std::abs(f.u) - 0.38) * (std::abs(f.u) - 0.38) * 4) < 0.035 &&
              std::abs(std::abs(f.u) - 0.38) < 0.2) {
            blend(px, {0.18f, 0.12f, 0.08f}, 0.7);
          }
          if (s.tier == Complexity::kComplex) {
            const double a = decal_alpha(s.decal_pattern, y, x, f);
            if (a > 0.0) blend(px, s.decal, a);
          }
        }
        const double shade = 0.55 + 0.45 * out.shape_map.at(y, x);
        const float detail = fine[static_cast<std::size_t>(y) * n + x];
        for (int c = 0; c < 3; ++c) {
          px[c] = static_cast<float>(std::clamp(px[c] * shade + detail, 0.0, 1.0));
        }
      }
      for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = px[c];
    }
  }
  out.image = lens_blur(out.image, kLensSigma);
  out.foreground = multiply(out.image, out.mask);
  out.background = multiply(out.image, invert_mask(out.mask));
  return out;
}

FaceSample generate(std::uint64_t seed, Complexity tier) {
  return render(sample_geometry(seed), sample_style(seed, tier), seed);
}

Image region_mask(const std::vector<int>& labels, int height, int width, Region area) {
  require(labels.size() == static_cast<std::size_t>(height) * width, "label map size mismatch");
  Image mask(1, height, width);
  const int want = static_cast<int>(area);
  for (std::size_t i = 0; i < labels.size(); ++i) mask.pixels()[i] = labels[i] == want ? 1.0f : 0.0f;
  return mask;
}

Image region_mask(const FaceSample& sample, std::string_view area) {
  if (sample.labels.empty()) fail(ErrorKind::kValidation, "sample has no region metadata");
  return region_mask(sample.labels, sample.image.height(), sample.image.width(), region_from_string(area));
}

namespace {

nlohmann::json ellipse_json(const Ellipse& e) {
  return {{"cy", e.cy}, {"cx", e.cx}, {"ry", e.ry}, {"rx", e.rx}, {"angle", e.angle}};
}

Ellipse ellipse_from(const nlohmann::json& j) {
  Ellipse e;
  e.cy = j.at("cy").get<double>();
  e.cx = j.at("cx").get<double>();
  e.ry = j.at("ry").get<double>();
  e.rx = j.at("rx").get<double>();
  e.angle = j.value("angle", 0.0);
  return e;
}

}  // namespace

nlohmann::json geometry_to_json(const FaceGeometry& g) {
  return {{"face", ellipse_json(g.face)},
          {"left_eye", ellipse_json(g.left_eye)},
          {"right_eye", ellipse_json(g.right_eye)},
          {"lips", ellipse_json(g.lips)},
          {"light", g.light}};
}

FaceGeometry geometry_from_json(const nlohmann::json& j) {
  FaceGeometry g;
  g.face = ellipse_from(j.at("face"));
  g.left_eye = ellipse_from(j.at("left_eye"));
  g.right_eye = ellipse_from(j.at("right_eye"));
  g.lips = ellipse_from(j.at("lips"));
  if (j.contains("light")) g.light = j.at("light").get<std::array<double, 3>>();
  return g;
}

nlohmann::json style_to_json(const FaceStyle& s) {
  return {{"tier", to_string(s.tier)},         {"skin", s.skin},
          {"lip", s.lip},                      {"eye_shadow", s.eye_shadow},
          {"decal", s.decal},                  {"decal_pattern", s.decal_pattern},
          {"background_a", s.background_a},    {"background_b", s.background_b},
          {"hair", s.hair}};
}

}  // namespace shmt::facesynth
