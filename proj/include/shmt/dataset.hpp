#pragma once

// Face datasets on disk and in memory, plus the parsing/shape provider
// interfaces the model code depends on.
//
// Layout of a dataset root:
//   <root>/<id>.png            RGB image
//   <root>/<id>.mask.png       foreground mask
//   <root>/<id>.shape.png      shape map
//   <root>/<id>.regions.json   geometry (lip/eye/face regions), tier, style
//   <root>/manifest.json       generator version, ids/seeds, tiers
// Imported images use the same side-car naming next to the image.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shmt/facesynth.hpp"
#include "shmt/image.hpp"

namespace shmt::dataset {

struct FaceImage {
  std::string id;
  Image rgb;
  std::filesystem::path path;  // empty for in-memory samples
};

class ParsingProvider {
 public:
  virtual ~ParsingProvider() = default;
  // Binary foreground mask with the image's spatial shape.
  virtual Image parse(const FaceImage& face) const = 0;
};

class ShapeProvider {
 public:
  virtual ~ShapeProvider() = default;
  // Single-channel shape map with the image's spatial shape.
  virtual Image shape(const FaceImage& face) const = 0;
};

struct FaceRecord {
  std::string id;
  std::uint64_t seed = 0;
  facesynth::Complexity tier = facesynth::Complexity::kSimple;
  Image image;
  Image mask;
  Image shape_map;
  std::vector<int> labels;  // empty when no region metadata is available
  std::filesystem::path path;

  FaceImage face() const { return {id, image, path}; }
};

// Even seeds render the simple tier, odd seeds the complex tier.
facesynth::Complexity default_tier(std::uint64_t seed);

inline constexpr std::uint64_t kEvalSeedBase = 1'000'000;
std::vector<std::uint64_t> train_seeds(int count = 2048);
std::vector<std::uint64_t> eval_seeds(int count = 256);

FaceRecord record_from_sample(const facesynth::FaceSample& sample);

// Writes the dataset files for every seed and the manifest. Per-seed files are
// produced by parallel workers; the output is byte-identical for equal seeds.
void materialize(const std::filesystem::path& root, std::span<const std::uint64_t> seeds);

class Dataset {
 public:
  static Dataset synthesize(std::span<const std::uint64_t> seeds);
  static Dataset load(const std::filesystem::path& root);

  // A user-supplied image with side-cars next to it. The mask and shape
  // side-cars are required; regions.json is optional.
  static FaceRecord import_image(const std::filesystem::path& png);

  std::size_t size() const { return records_.size(); }
  const FaceRecord& at(std::size_t i) const { return records_.at(i); }
  const std::vector<FaceRecord>& records() const { return records_; }
  const FaceRecord* find(const std::string& id) const;
  const FaceRecord& get(const std::string& id) const;
  void add(FaceRecord record);

 private:
  std::vector<FaceRecord> records_;
  std::map<std::string, std::size_t> index_;
};

std::pair<std::shared_ptr<const ParsingProvider>, std::shared_ptr<const ShapeProvider>>
ground_truth_providers(const Dataset& dataset);

// Side-car path for `png` with the given suffix, e.g. ".mask.png".
std::filesystem::path sidecar_path(const std::filesystem::path& png, const std::string& suffix);

}  // namespace shmt::dataset
