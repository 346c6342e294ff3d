#include <filesystem>
#include <fstream>
#include <queue>

#include "doctest.h"
#include "shmt/dataset.hpp"
#include "shmt/error.hpp"
#include "shmt/facesynth.hpp"
#include "shmt/imageops.hpp"
#include "shmt/png_io.hpp"

using namespace shmt;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("shmt_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int connected_components(const Image& mask) {
  const int h = mask.height(), w = mask.width();
  std::vector<int> seen(mask.plane_size(), 0);
  int components = 0;
  for (int start = 0; start < h * w; ++start) {
    if (mask.pixels()[start] < 0.5f || seen[start]) continue;
    ++components;
    std::queue<int> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const int p = q.front();
      q.pop();
      const int y = p / w, x = p % w;
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || nx[k] < 0 || ny[k] >= h || nx[k] >= w) continue;
        const int n = ny[k] * w + nx[k];
        if (!seen[n] && mask.pixels()[n] > 0.5f) {
          seen[n] = 1;
          q.push(n);
        }
      }
    }
  }
  return components;
}

}  // namespace

TEST_CASE("generate: bit-identical per seed") {
  const auto a = facesynth::generate(42, facesynth::Complexity::kComplex);
  const auto b = facesynth::generate(42, facesynth::Complexity::kComplex);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  CHECK(a.shape_map == b.shape_map);
  CHECK(a.labels == b.labels);
}

TEST_CASE("generate: foreground plus background is the image exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = facesynth::generate(seed, dataset::default_tier(seed));
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      CHECK(s.foreground.pixels()[i] + s.background.pixels()[i] == s.image.pixels()[i]);
    }
    CHECK(connected_components(s.mask) == 1);
    for (float v : s.mask.pixels()) CHECK((v == 0.0f || v == 1.0f));
  }
}

TEST_CASE("shape map depends on geometry only") {
  const auto geometry = facesynth::sample_geometry(5);
  const auto a = facesynth::render(geometry, facesynth::sample_style(6, facesynth::Complexity::kSimple), 5);
  const auto b = facesynth::render(geometry, facesynth::sample_style(7, facesynth::Complexity::kComplex), 5);
  CHECK(a.shape_map == b.shape_map);
  CHECK(a.mask == b.mask);
  CHECK_FALSE(a.image == b.image);
}

TEST_CASE("region masks partition the foreground") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = facesynth::generate(seed, dataset::default_tier(seed));
    const Image lip = facesynth::region_mask(s, "lip");
    const Image eye = facesynth::region_mask(s, "eye");
    const Image face = facesynth::region_mask(s, "face");
    double eye_area = 0;
    for (std::size_t i = 0; i < lip.size(); ++i) {
      const float sum = lip.pixels()[i] + eye.pixels()[i] + face.pixels()[i];
      CHECK(sum == s.mask.pixels()[i]);
      eye_area += eye.pixels()[i];
    }
    CHECK(eye_area > 0);
  }
  const auto s = facesynth::generate(1, facesynth::Complexity::kSimple);
  CHECK_THROWS_AS(facesynth::region_mask(s, "nose"), Error);
}

TEST_CASE("lip centroid lies below the eye centroid") {
  auto centroid_y = [](const Image& m) {
    double sy = 0, n = 0;
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x)
        if (m.at(y, x) > 0.5f) {
          sy += y;
          n += 1;
        }
    return sy / n;
  };
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = facesynth::generate(seed, dataset::default_tier(seed));
    CHECK(centroid_y(facesynth::region_mask(s, "lip")) > centroid_y(facesynth::region_mask(s, "eye")));
  }
}

TEST_CASE("complex tier carries at least twice the fine-detail energy") {
  double simple = 0, complex = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = facesynth::generate(seed, facesynth::Complexity::kSimple);
    const auto c = facesynth::generate(seed, facesynth::Complexity::kComplex);
    simple += imageops::detail_energy(imageops::to_gray(s.foreground), s.mask);
    complex += imageops::detail_energy(imageops::to_gray(c.foreground), c.mask);
  }
  MESSAGE("h0 energy simple=" << simple / 200 << " complex=" << complex / 200);
  CHECK(complex >= 2.0 * simple);
}

TEST_CASE("materialize: byte-identical output and faithful reload") {
  const std::vector<std::uint64_t> seeds = {3, 4, 5, 6};
  const fs::path a = scratch_dir("ds_a");
  const fs::path b = scratch_dir("ds_b");
  dataset::materialize(a, seeds);
  dataset::materialize(b, seeds);
  for (const auto& entry : fs::directory_iterator(a)) {
    CHECK(read_bytes(entry.path()) == read_bytes(b / entry.path().filename()));
  }
  const auto loaded = dataset::Dataset::load(a);
  REQUIRE(loaded.size() == 4);
  const auto fresh = facesynth::generate(5, dataset::default_tier(5));
  const auto& r = loaded.get("5");
  CHECK(r.mask == fresh.mask);
  CHECK(r.labels == fresh.labels);
  CHECK(r.tier == facesynth::Complexity::kComplex);
  CHECK(r.image == png::quantize(fresh.image));
}

TEST_CASE("ground-truth providers: stored masks for synthetic samples") {
  const std::vector<std::uint64_t> seeds = {10, 11};
  const auto ds = dataset::Dataset::synthesize(seeds);
  const auto [parsing, shape] = dataset::ground_truth_providers(ds);
  for (const auto& r : ds.records()) {
    CHECK(parsing->parse(r.face()) == r.mask);
    CHECK(shape->shape(r.face()) == r.shape_map);
  }
}

TEST_CASE("ground-truth providers: imported images need valid side-cars") {
  const fs::path dir = scratch_dir("import");
  const auto s = facesynth::generate(8, facesynth::Complexity::kSimple);
  png::write(dir / "portrait.png", s.image);
  const auto ds = dataset::Dataset::synthesize(std::vector<std::uint64_t>{});
  const auto [parsing, shape] = dataset::ground_truth_providers(ds);
  const dataset::FaceImage face{"portrait", png::read(dir / "portrait.png"), dir / "portrait.png"};

  try {
    parsing->parse(face);
    FAIL("expected a missing side-car error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNotFound);
    CHECK(std::string(e.what()).find("portrait.mask.png") != std::string::npos);
  }
  CHECK_THROWS_AS(dataset::Dataset::import_image(dir / "portrait.png"), Error);

  png::write(dir / "portrait.mask.png", Image(1, 32, 32, 1.0f));
  try {
    parsing->parse(face);
    FAIL("expected a shape validation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kValidation);
  }

  png::write(dir / "portrait.mask.png", s.mask);
  png::write(dir / "portrait.shape.png", s.shape_map);
  CHECK(parsing->parse(face) == s.mask);
  const auto imported = dataset::Dataset::import_image(dir / "portrait.png");
  CHECK(imported.labels.empty());
  CHECK(imported.mask == s.mask);
}
