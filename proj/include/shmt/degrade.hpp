#pragma once

// Makeup representation: the foreground with its geometry destroyed by a
// seeded random crop, rotation and elastic warp, keeping colour and texture
// statistics.

#include <cstdint>
#include <vector>

#include "json.hpp"

#include "shmt/image.hpp"

namespace shmt::degrade {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct DegradeParams {
  Range crop_scale{0.7, 1.0};     // fraction of image area kept by the crop
  Range rotation_deg{-30.0, 30.0};
  Range alpha{4.0, 12.0};         // elastic amplitude, pixels
  Range sigma{3.0, 6.0};          // elastic smoothness, pixels
  std::uint64_t seed = 0;

  void validate() const;
  static DegradeParams identity();
};

void to_json(nlohmann::json& j, const DegradeParams& p);
void from_json(const nlohmann::json& j, DegradeParams& p);

struct TransformRecord {
  int crop_y = 0;
  int crop_x = 0;
  int crop_h = 0;
  int crop_w = 0;
  double angle_deg = 0.0;
  double alpha = 0.0;
  double sigma = 1.0;
  std::uint64_t field_seed = 0;
};

struct MakeupRep {
  Image image;  // same shape as the input foreground
  Image mask;   // input mask pushed through the same warp, re-binarised
  TransformRecord record;
};

struct DisplacementField {
  int height = 0;
  int width = 0;
  std::vector<float> dy;
  std::vector<float> dx;
};

// Uniform [-1,1] noise for one displacement component (0 = dy, 1 = dx).
std::vector<float> elastic_noise(int height, int width, std::uint64_t seed, int component);

// Separable Gaussian smoothing (radius ceil(3 sigma), reflect padding).
std::vector<float> smooth(const std::vector<float>& field, int height, int width, double sigma);

DisplacementField elastic_field(int height, int width, double alpha, double sigma,
                                std::uint64_t seed);

// Samples the transform parameters from `params` (deterministic per seed).
TransformRecord sample_transform(int height, int width, const DegradeParams& params);

// Applies a fixed transform. Crop -> resize back -> rotate about the image
// centre -> elastic, evaluated as one composed coordinate map so the image is
// resampled only once. Samples outside the rotated frame read 0.
MakeupRep apply_transform(const Image& foreground, const Image& mask,
                          const TransformRecord& record);

MakeupRep degrade(const Image& foreground, const Image& mask, const DegradeParams& params);

}  // namespace shmt::degrade
