#pragma once

// Procedural faces with exact parsing masks, shape maps and region labels.
// They stand in for a real makeup dataset plus pretrained parsing and 3-D
// reconstruction models; everything downstream only sees the provider
// interfaces in shmt/dataset.hpp.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "shmt/image.hpp"

namespace shmt::facesynth {

inline constexpr int kImageSize = 64;
inline constexpr std::string_view kGeneratorVersion = "shmt-facesynth/2";
// Std of the Gaussian point-spread blur applied to every rendered image.
inline constexpr double kLensSigma = 0.75;

enum class Complexity { kSimple, kComplex };
std::string_view to_string(Complexity c);
Complexity complexity_from_string(std::string_view s);

// Region labels used by label maps. Order matters for tie-breaking when
// label maps are downsampled (lowest label wins).
enum class Region : int { kBackground = 0, kFace = 1, kLip = 2, kEye = 3 };
inline constexpr int kRegionCount = 4;
Region region_from_string(std::string_view s);

struct Ellipse {
  double cy = 0, cx = 0;  // centre, pixels
  double ry = 1, rx = 1;  // semi-axes, pixels
  double angle = 0;       // radians, rotation of the x axis
  // Normalised elliptic radius squared; < 1 inside.
  double radius2(double y, double x) const;
  bool contains(double y, double x) const { return radius2(y, x) < 1.0; }
};

struct FaceGeometry {
  Ellipse face;
  Ellipse left_eye;   // eye-shadow area, contains the eye
  Ellipse right_eye;
  Ellipse lips;
  std::array<double, 3> light{0, 0, 1};
};

struct FaceStyle {
  Complexity tier = Complexity::kSimple;
  std::array<float, 3> skin{};
  std::array<float, 3> lip{};
  std::array<float, 3> eye_shadow{};
  std::array<float, 3> decal{};
  std::array<float, 3> background_a{};
  std::array<float, 3> background_b{};
  std::array<float, 3> hair{};
  double background_angle = 0;
  int decal_pattern = 0;  // 0..3
  std::uint64_t detail_seed = 0;
};

struct FaceSample {
  std::uint64_t seed = 0;
  Image image;       // I, 3 x 64 x 64
  Image mask;        // foreground, 1 x 64 x 64, binary
  Image foreground;  // I * mask
  Image background;  // I * (1 - mask)
  Image shape_map;   // Lambertian shading of the face geometry, 1 channel
  std::vector<int> labels;  // Region per pixel
  FaceGeometry geometry;
  FaceStyle style;
};

FaceGeometry sample_geometry(std::uint64_t seed);
FaceStyle sample_style(std::uint64_t seed, Complexity tier);

// Region label map rasterised from geometry alone.
std::vector<int> rasterize_labels(const FaceGeometry& geometry, int size = kImageSize);
Image render_shape_map(const FaceGeometry& geometry, int size = kImageSize);
FaceSample render(const FaceGeometry& geometry, const FaceStyle& style, std::uint64_t seed);

FaceSample generate(std::uint64_t seed, Complexity tier);

// Binary mask for one region; "face" excludes lips and eyes.
Image region_mask(const std::vector<int>& labels, int height, int width, Region area);
Image region_mask(const FaceSample& sample, std::string_view area);

nlohmann::json geometry_to_json(const FaceGeometry& g);
FaceGeometry geometry_from_json(const nlohmann::json& j);
nlohmann::json style_to_json(const FaceStyle& s);

}  // namespace shmt::facesynth
