#include <cmath>
#include <numbers>

#include "doctest.h"
#include "shmt/error.hpp"
#include "shmt/imageops.hpp"
#include "shmt/reference.hpp"
#include "test_helpers.hpp"

using namespace shmt;
using shmt::testing::random_image;

TEST_CASE("to_gray: equal channels give the shared value") {
  Image rgb(3, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = 0.1f * (y * 4 + x) / 1.6f;
  const Image gray = imageops::to_gray(rgb);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(gray.at(y, x) == doctest::Approx(rgb.at(0, y, x)).epsilon(1e-6));
}

TEST_CASE("to_gray: black stays black") {
  const Image gray = imageops::to_gray(Image(3, 8, 8, 0.0f));
  for (float v : gray.pixels()) CHECK(v == 0.0f);
}

TEST_CASE("to_gray: matches per-pixel weighted sum") {
  const Image rgb = random_image(3, 8, 8, 11);
  const Image gray = imageops::to_gray(rgb);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const float expected = 0.299f * rgb.at(0, y, x) + 0.587f * rgb.at(1, y, x) + 0.114f * rgb.at(2, y, x);
      CHECK(gray.at(y, x) == expected);
    }
  }
}

TEST_CASE("to_gray: rejects non-finite input") {
  Image rgb(3, 2, 2, 0.5f);
  rgb.at(1, 1, 1) = std::nanf("");
  CHECK_THROWS_AS(imageops::to_gray(rgb), Error);
}

TEST_CASE("gaussian_down: constant image stays constant") {
  const Image out = imageops::gaussian_down(Image(1, 16, 16, 0.5f));
  CHECK(out.height() == 8);
  for (float v : out.pixels()) CHECK(v == 0.5f);
}

TEST_CASE("gaussian_down: impulse matches hand convolution with reflect padding") {
  Image impulse(1, 4, 4);
  impulse.at(0, 0) = 1.0f;
  const Image out = imageops::gaussian_down(impulse);
  // Per axis, output 0 weights index 0 by 6/16 and output 1 by 1/16.
  CHECK(out.at(0, 0) == doctest::Approx(36.0 / 256));
  CHECK(out.at(0, 1) == doctest::Approx(6.0 / 256));
  CHECK(out.at(1, 0) == doctest::Approx(6.0 / 256));
  CHECK(out.at(1, 1) == doctest::Approx(1.0 / 256));
}

TEST_CASE("gaussian_down: horizontal ramp stays a ramp away from the borders") {
  Image ramp(1, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp.at(y, x) = static_cast<float>(x);
  const Image out = imageops::gaussian_down(ramp);
  const double expected[4] = {0.75, 2.0, 4.0, 5.875};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(out.at(y, x) == doctest::Approx(expected[x]));
}

TEST_CASE("gaussian_down: odd dimensions are rejected") {
  CHECK_THROWS_AS(imageops::gaussian_down(Image(1, 5, 4)), Error);
}

TEST_CASE("upsample2x: constant and align-corners-false weights") {
  const Image constant = imageops::upsample2x(Image(1, 3, 5, 0.25f));
  CHECK(constant.height() == 6);
  CHECK(constant.width() == 10);
  for (float v : constant.pixels()) CHECK(v == 0.25f);

  Image pair(1, 1, 2);
  pair.at(0, 1) = 1.0f;
  const Image up = imageops::upsample2x(pair);
  const float expected[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) CHECK(up.at(y, x) == doctest::Approx(expected[x]));
}

TEST_CASE("upsample2x: down-then-up of a band-limited sinusoid stays close") {
  Image s(1, 64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      s.at(y, x) = static_cast<float>(0.5 + 0.4 * std::sin(2 * std::numbers::pi * x / 32.0) *
                                                std::cos(2 * std::numbers::pi * y / 64.0));
  const Image round = imageops::upsample2x(imageops::gaussian_down(s));
  CHECK(max_abs_difference(round, s) < 0.1f);
}

TEST_CASE("build_pyramid: constant image has zero details") {
  const auto stack = imageops::build_pyramid(Image(1, 32, 32, 0.5f), 3);
  for (const auto& d : stack.details)
    for (float v : d.pixels()) CHECK(v == 0.0f);
  for (float v : stack.residual.pixels()) CHECK(v == 0.5f);
}

TEST_CASE("build_pyramid: detail shapes halve per level") {
  const auto stack = imageops::build_pyramid(random_image(1, 64, 64, 3), 4);
  REQUIRE(stack.level_count() == 4);
  int size = 64;
  for (const auto& d : stack.details) {
    CHECK(d.height() == size);
    CHECK(d.width() == size);
    size /= 2;
  }
  CHECK(stack.residual.height() == 4);
  CHECK(stack.residual.width() == 4);
}

TEST_CASE("build_pyramid: too many levels is an error") {
  CHECK_THROWS_AS(imageops::build_pyramid(Image(1, 8, 8), 4), Error);
  CHECK_NOTHROW(imageops::build_pyramid(Image(1, 8, 8), 3));
  CHECK_THROWS_AS(imageops::build_pyramid(Image(1, 8, 8), 0), Error);
}

TEST_CASE("reconstruct: inverse of build_pyramid") {
  const Image x = random_image(1, 32, 32, 5);
  CHECK(max_abs_difference(imageops::reconstruct(imageops::build_pyramid(x, 2)), x) <= 1e-6f);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int levels = 1 + static_cast<int>(seed % 4);
    const Image img = random_image(1, 64, 32, 100 + seed);
    CHECK(max_abs_difference(imageops::reconstruct(imageops::build_pyramid(img, levels)), img) <= 1e-5f);
  }
}

TEST_CASE("reconstruct: zero details give the upsampled residual") {
  imageops::PyramidStack stack;
  stack.details = {Image(1, 16, 16), Image(1, 8, 8)};
  stack.residual = Image(1, 4, 4, 0.75f);
  const Image out = imageops::reconstruct(stack);
  CHECK(out.height() == 16);
  for (float v : out.pixels()) CHECK(v == 0.75f);
}

TEST_CASE("reconstruct: a detail perturbation passes straight through") {
  auto stack = imageops::build_pyramid(random_image(1, 16, 16, 9), 2);
  const Image base = imageops::reconstruct(stack);
  stack.details[0].at(5, 7) += 0.125f;
  const Image bumped = imageops::reconstruct(stack);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      if (y == 5 && x == 7) {
        CHECK(bumped.at(y, x) - base.at(y, x) == doctest::Approx(0.125).epsilon(1e-6));
      } else {
        CHECK(bumped.at(y, x) == base.at(y, x));
      }
    }
  }
}

TEST_CASE("reconstruct: mismatched shapes are rejected") {
  imageops::PyramidStack stack;
  stack.details = {Image(1, 16, 16)};
  stack.residual = Image(1, 4, 4);
  CHECK_THROWS_AS(imageops::reconstruct(stack), Error);
}

TEST_CASE("build_pyramid: linear in its input") {
  const Image a = random_image(1, 32, 32, 21);
  const Image b = random_image(1, 32, 32, 22);
  const float ca = 0.7f, cb = -1.3f;
  const auto pa = imageops::build_pyramid(a, 3);
  const auto pb = imageops::build_pyramid(b, 3);
  const auto pm = imageops::build_pyramid(axpby(ca, a, cb, b), 3);
  for (int i = 0; i < 3; ++i) {
    const Image expected = axpby(ca, pa.details[i], cb, pb.details[i]);
    CHECK(max_abs_difference(pm.details[i], expected) < 1e-5f);
  }
}

TEST_CASE("pixel_unshuffle: 2x2 block ordering") {
  Image m(1, 2, 2, std::vector<float>{0, 1, 2, 3});
  const Image u = imageops::pixel_unshuffle(m, 2);
  REQUIRE(u.channels() == 4);
  CHECK(u.height() == 1);
  for (int c = 0; c < 4; ++c) CHECK(u.at(c, 0, 0) == static_cast<float>(c));
}

TEST_CASE("pixel_unshuffle: constant map and index-arithmetic oracle") {
  const Image u = imageops::pixel_unshuffle(Image(1, 8, 8, 0.3f), 4);
  for (float v : u.pixels()) CHECK(v == 0.3f);

  Image ramp(1, 4, 4);
  for (int i = 0; i < 16; ++i) ramp.pixels()[i] = static_cast<float>(i);
  const Image out = imageops::pixel_unshuffle(ramp, 2);
  // Channel k = dy*2+dx gathers ramp[(2i+dy)*4 + 2j+dx].
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          CHECK(out.at(dy * 2 + dx, i, j) == static_cast<float>((2 * i + dy) * 4 + 2 * j + dx));
}

TEST_CASE("pixel_unshuffle: indivisible dims are rejected; shuffle inverts exactly") {
  CHECK_THROWS_AS(imageops::pixel_unshuffle(Image(1, 6, 6), 4), Error);
  for (int r : {1, 2, 4}) {
    const Image x = random_image(3, 16, 16, 40 + r, -2.0f, 2.0f);
    const Image u = imageops::pixel_unshuffle(x, r);
    CHECK(u.size() == x.size());
    CHECK(imageops::pixel_shuffle(u, r) == x);
  }
}

TEST_CASE("match_resolution: unshuffle down, identity, bilinear up") {
  CHECK(imageops::match_resolution(Image(1, 64, 64), 16, 16).channels() == 16);
  CHECK(imageops::match_resolution(Image(1, 32, 32), 16, 16).channels() == 4);
  CHECK(imageops::match_resolution(Image(1, 16, 16), 16, 16).channels() == 1);
  const Image up = imageops::match_resolution(Image(1, 4, 4, 0.5f), 16, 16);
  CHECK(up.channels() == 1);
  CHECK(up.height() == 16);
}

TEST_CASE("downsample_labels: plurality vote with low-label tie break") {
  // 4x4 map reduced by 2: blocks of labels.
  std::vector<int> labels = {0, 0, 1, 1,  //
                             0, 2, 1, 2,  //
                             3, 3, 2, 2,  //
                             3, 1, 1, 2};
  const auto out = imageops::downsample_labels(labels, 4, 4, 2, 4);
  CHECK(out == std::vector<int>{0, 1, 3, 2});
  std::vector<int> tie = {1, 2, 2, 1};
  CHECK(imageops::downsample_labels(tie, 2, 2, 2, 3) == std::vector<int>{1});
}

TEST_CASE("parallel kernels agree with the serial reference") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image rgb = random_image(3, 64, 64, 500 + seed);
    const Image gray = imageops::to_gray(rgb);
    CHECK(max_abs_difference(gray, reference::to_gray(rgb)) <= 1e-7f);
    CHECK(max_abs_difference(imageops::gaussian_down(gray), reference::gaussian_down(gray)) <= 1e-6f);
    CHECK(max_abs_difference(imageops::upsample2x(gray), reference::upsample2x(gray)) <= 1e-6f);
    CHECK(imageops::pixel_unshuffle(rgb, 4) == reference::pixel_unshuffle(rgb, 4));
    const auto fast = imageops::build_pyramid(gray, 4);
    const auto slow = reference::build_pyramid(gray, 4);
    for (int i = 0; i < 4; ++i) CHECK(max_abs_difference(fast.details[i], slow.details[i]) <= 1e-5f);
    CHECK(max_abs_difference(imageops::reconstruct(fast), reference::reconstruct(slow)) <= 1e-5f);
  }
}
