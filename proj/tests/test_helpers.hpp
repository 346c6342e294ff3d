#pragma once

#include <cstdint>

#include "shmt/image.hpp"
#include "shmt/rng.hpp"

namespace shmt::testing {

inline Image random_image(int channels, int height, int width, std::uint64_t seed,
                          float lo = 0.0f, float hi = 1.0f) {
  Rng rng(seed);
  Image img(channels, height, width);
  for (float& v : img.pixels()) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

}  // namespace shmt::testing
