#include "shmt/dataset.hpp"

#include <fstream>

#include "json.hpp"
#include "shmt/error.hpp"
#include "shmt/png_io.hpp"

namespace shmt::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

facesynth::Complexity default_tier(std::uint64_t seed) {
  return seed % 2 == 0 ? facesynth::Complexity::kSimple : facesynth::Complexity::kComplex;
}

std::vector<std::uint64_t> train_seeds(int count) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) seeds[i] = static_cast<std::uint64_t>(i);
  return seeds;
}

std::vector<std::uint64_t> eval_seeds(int count) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) seeds[i] = kEvalSeedBase + static_cast<std::uint64_t>(i);
  return seeds;
}

FaceRecord record_from_sample(const facesynth::FaceSample& sample) {
  FaceRecord r;
  r.id = std::to_string(sample.seed);
  r.seed = sample.seed;
  r.tier = sample.style.tier;
  r.image = sample.image;
  r.mask = sample.mask;
  r.shape_map = sample.shape_map;
  r.labels = sample.labels;
  return r;
}

fs::path sidecar_path(const fs::path& png, const std::string& suffix) {
  return png.parent_path() / (png.stem().string() + suffix);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kNotFound, "missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, path.string() + ": " + e.what());
  }
}

Image read_single_channel(const fs::path& path, const Image& like, const std::string& what) {
  if (!fs::exists(path)) fail(ErrorKind::kNotFound, "missing " + what + " side-car " + path.string());
  Image img = png::read(path);
  if (img.channels() == 3) img = img.channel(0);
  if (img.height() != like.height() || img.width() != like.width()) {
    fail(ErrorKind::kValidation, what + " side-car " + path.string() + " is " +
                                     std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                     ", image is " + std::to_string(like.height()) + "x" +
                                     std::to_string(like.width()));
  }
  return img;
}

Image binarize(Image mask) {
  for (float& v : mask.pixels()) v = v >= 0.5f ? 1.0f : 0.0f;
  return mask;
}

FaceRecord read_record(const fs::path& png) {
  FaceRecord r;
  r.path = png;
  r.id = png.stem().string();
  r.image = png::read(png);
  require_channels(r.image, 3, "face image " + png.string());
  r.mask = binarize(read_single_channel(sidecar_path(png, ".mask.png"), r.image, "mask"));
  r.shape_map = read_single_channel(sidecar_path(png, ".shape.png"), r.image, "shape");
  const fs::path regions = sidecar_path(png, ".regions.json");
  if (fs::exists(regions)) {
    const json j = read_json(regions);
    if (j.contains("seed")) r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("tier")) r.tier = facesynth::complexity_from_string(j.at("tier").get<std::string>());
    if (j.contains("geometry")) {
      require(r.image.height() == r.image.width(), "region geometry needs a square image");
      r.labels = facesynth::rasterize_labels(facesynth::geometry_from_json(j.at("geometry")),
                                             r.image.height());
      // Regions never extend past the parsed foreground.
      for (std::size_t i = 0; i < r.labels.size(); ++i) {
        if (r.mask.pixels()[i] == 0.0f) {
          r.labels[i] = 0;
        } else if (r.labels[i] == 0) {
          r.labels[i] = static_cast<int>(facesynth::Region::kFace);
        }
      }
    }
  }
  return r;
}

}  // namespace

void materialize(const fs::path& root, std::span<const std::uint64_t> seeds) {
  fs::create_directories(root);
  const auto n = static_cast<std::ptrdiff_t>(seeds.size());
  std::vector<std::string> errors(seeds.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const std::uint64_t seed = seeds[i];
      const auto sample = facesynth::generate(seed, default_tier(seed));
      const std::string id = std::to_string(seed);
      png::write(root / (id + ".png"), sample.image);
      png::write(root / (id + ".mask.png"), sample.mask);
      png::write(root / (id + ".shape.png"), sample.shape_map);
      const json regions = {{"id", id},
                            {"seed", seed},
                            {"tier", facesynth::to_string(sample.style.tier)},
                            {"generator", facesynth::kGeneratorVersion},
                            {"geometry", facesynth::geometry_to_json(sample.geometry)},
                            {"style", facesynth::style_to_json(sample.style)}};
      write_text(root / (id + ".regions.json"), regions.dump(2) + "\n");
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) fail(ErrorKind::kIo, "dataset materialisation failed: " + e);
  }
  json manifest = {{"generator", facesynth::kGeneratorVersion}, {"seeds", json::array()},
                   {"tiers", json::array()}};
  for (auto seed : seeds) {
    manifest["seeds"].push_back(seed);
    manifest["tiers"].push_back(facesynth::to_string(default_tier(seed)));
  }
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
}

Dataset Dataset::synthesize(std::span<const std::uint64_t> seeds) {
  std::vector<FaceRecord> records(seeds.size());
  const auto n = static_cast<std::ptrdiff_t>(seeds.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    records[i] = record_from_sample(facesynth::generate(seeds[i], default_tier(seeds[i])));
  }
  Dataset d;
  for (auto& r : records) d.add(std::move(r));
  return d;
}

Dataset Dataset::load(const fs::path& root) {
  const json manifest = read_json(root / "manifest.json");
  Dataset d;
  for (const auto& seed : manifest.at("seeds")) {
    const std::string id = seed.is_string() ? seed.get<std::string>() : std::to_string(seed.get<std::uint64_t>());
    FaceRecord r = read_record(root / (id + ".png"));
    if (seed.is_number()) r.seed = seed.get<std::uint64_t>();
    d.add(std::move(r));
  }
  return d;
}

FaceRecord Dataset::import_image(const fs::path& png) {
  if (!fs::exists(png)) fail(ErrorKind::kNotFound, "missing image " + png.string());
  return read_record(png);
}

const FaceRecord* Dataset::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

const FaceRecord& Dataset::get(const std::string& id) const {
  const FaceRecord* r = find(id);
  if (r == nullptr) fail(ErrorKind::kNotFound, "unknown sample id '" + id + "'");
  return *r;
}

void Dataset::add(FaceRecord record) {
  require(!index_.contains(record.id), "duplicate sample id '" + record.id + "'");
  index_[record.id] = records_.size();
  records_.push_back(std::move(record));
}

namespace {

// Stored ground truth for known ids; side-car files for anything else.
class GroundTruthParsing final : public ParsingProvider {
 public:
  explicit GroundTruthParsing(std::map<std::string, Image> masks) : masks_(std::move(masks)) {}

  Image parse(const FaceImage& face) const override {
    if (auto it = masks_.find(face.id); it != masks_.end() && face.path.empty()) return it->second;
    if (face.path.empty()) fail(ErrorKind::kNotFound, "no stored mask for sample '" + face.id + "'");
    return binarize(read_single_channel(sidecar_path(face.path, ".mask.png"), face.rgb, "mask"));
  }

 private:
  std::map<std::string, Image> masks_;
};

class GroundTruthShape final : public ShapeProvider {
 public:
  explicit GroundTruthShape(std::map<std::string, Image> shapes) : shapes_(std::move(shapes)) {}

  Image shape(const FaceImage& face) const override {
    if (auto it = shapes_.find(face.id); it != shapes_.end() && face.path.empty()) return it->second;
    if (face.path.empty()) fail(ErrorKind::kNotFound, "no stored shape map for sample '" + face.id + "'");
    return read_single_channel(sidecar_path(face.path, ".shape.png"), face.rgb, "shape");
  }

 private:
  std::map<std::string, Image> shapes_;
};

}  // namespace

std::pair<std::shared_ptr<const ParsingProvider>, std::shared_ptr<const ShapeProvider>>
ground_truth_providers(const Dataset& dataset) {
  std::map<std::string, Image> masks;
  std::map<std::string, Image> shapes;
  for (const auto& r : dataset.records()) {
    if (!r.path.empty()) continue;
    masks.emplace(r.id, r.mask);
    shapes.emplace(r.id, r.shape_map);
  }
  return {std::make_shared<GroundTruthParsing>(std::move(masks)),
          std::make_shared<GroundTruthShape>(std::move(shapes))};
}

}  // namespace shmt::dataset
