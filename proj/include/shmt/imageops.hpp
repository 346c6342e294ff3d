#pragma once

// Deterministic image math shared by the data pipeline and the evaluation
// harness. Every function is pure; the OpenMP kernels here have serial
// counterparts in shmt/reference.hpp that the tests hold them to.

#include <array>
#include <vector>

#include "shmt/image.hpp"

namespace shmt::imageops {

// BT.601 luma weights.
inline constexpr std::array<float, 3> kLumaWeights{0.299f, 0.587f, 0.114f};

// 5-tap binomial low-pass, normalised.
inline constexpr std::array<float, 5> kBinomialKernel{1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16,
                                                      1.f / 16};

// Reflect-101 index into [0, n): -1 -> 1, n -> n-2.
int reflect_index(int i, int n);

Image to_gray(const Image& rgb);

// Binomial blur then keep even rows/columns. Requires even height and width.
Image gaussian_down(const Image& image);

// Bilinear 2x upsampling, align-corners-false (half-pixel centres, edge clamp).
Image upsample2x(const Image& image);

// Bilinear resize to an arbitrary size, same convention as upsample2x.
Image resize_bilinear(const Image& image, int height, int width);

struct PyramidStack {
  std::vector<Image> details;  // h_0 .. h_{L-1}, halving per level
  Image residual;              // l_L
  int level_count() const { return static_cast<int>(details.size()); }
};

// Largest L such that both dimensions are divisible by 2^L.
int max_pyramid_levels(int height, int width);

PyramidStack build_pyramid(const Image& gray, int levels);
Image reconstruct(const PyramidStack& stack);

// Space-to-depth. Output channel c*r*r + dy*r + dx holds input channel c at
// offset (dy, dx) inside every r x r block. This ordering is persisted in
// checkpoints and must not change.
Image pixel_unshuffle(const Image& image, int factor);
Image pixel_shuffle(const Image& image, int factor);

// Bring a detail band of any power-of-two size to the target resolution:
// pixel unshuffle when larger, identity when equal, bilinear when smaller.
Image match_resolution(const Image& band, int height, int width);

// Bilinear sample at continuous pixel coordinates (pixel centres at integers).
// Samples falling outside the image return `fill`.
float sample_bilinear(const Image& image, int channel, double y, double x, float fill);

// Per-cell plurality vote over an integer label map of size (h, w), reduced by
// `factor`. Ties resolve to the lowest label.
std::vector<int> downsample_labels(const std::vector<int>& labels, int height, int width,
                                   int factor, int label_count);

// Mean-square h_0 energy over the mask interior; pixels within `border` of
// the mask edge are skipped so the silhouette itself does not count.
double detail_energy(const Image& gray, const Image& mask, int border = 2);

}  // namespace shmt::imageops
