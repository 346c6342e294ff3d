#pragma once

// Straight-line serial versions of the parallel kernels. They favour the most
// literal formulation (direct 2-D convolution, explicit gather indices) over
// speed and exist to check the optimised paths and to benchmark against.

#include "shmt/image.hpp"
#include "shmt/imageops.hpp"

namespace shmt::reference {

Image to_gray(const Image& rgb);
Image gaussian_down(const Image& image);
Image upsample2x(const Image& image);
imageops::PyramidStack build_pyramid(const Image& gray, int levels);
Image reconstruct(const imageops::PyramidStack& stack);
Image pixel_unshuffle(const Image& image, int factor);

// Direct (non-separable) Gaussian smoothing with reflect padding.
std::vector<float> gaussian_smooth(const std::vector<float>& field, int height, int width,
                                   double sigma);

}  // namespace shmt::reference
