#include "shmt/conditioning.hpp"

#include <cstring>

#include "shmt/error.hpp"
#include "shmt/imageops.hpp"

namespace shmt::pipeline {

Providers Providers::ground_truth(const dataset::Dataset& dataset) {
  auto [parsing, shape] = dataset::ground_truth_providers(dataset);
  return {std::move(parsing), std::move(shape)};
}

torch::Tensor to_tensor(const Image& image) {
  auto t = torch::empty({image.channels(), image.height(), image.width()}, torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), image.pixels().data(), image.size() * sizeof(float));
  return t;
}

Image to_image(const torch::Tensor& tensor) {
  require(tensor.dim() == 3, "to_image expects a (C,H,W) tensor");
  auto c = tensor.detach().to(torch::kFloat32).contiguous();
  std::vector<float> values(static_cast<std::size_t>(c.numel()));
  std::memcpy(values.data(), c.data_ptr<float>(), values.size() * sizeof(float));
  return Image(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)),
               static_cast<int>(c.size(2)), std::move(values));
}

torch::Tensor stack(std::span<const Image> images) {
  require(!images.empty(), "cannot stack an empty image list");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& im : images) {
    require(im.same_shape(images.front()), "stacked images must share one shape");
    parts.push_back(to_tensor(im));
  }
  return torch::stack(parts);
}

void require_level(int level) {
  if (level < 0 || level > kMaxTextureLevel) {
    fail(ErrorKind::kValidation, "texture level must be in 0..4, got " + std::to_string(level));
  }
}

int detail_channels(int level) {
  require_level(level);
  const int side = facesynth::kImageSize >> level;
  if (side <= kLatentSize) return 1;
  const int r = side / kLatentSize;
  return r * r;
}

int content_channels(int level) { return 16 + detail_channels(level); }

Image content_map(const Image& shape_map, const Image& foreground, int level) {
  require_level(level);
  require_channels(shape_map, 1, "shape map");
  require(shape_map.height() == foreground.height() && shape_map.width() == foreground.width(),
          "shape map and foreground differ in size");
  const auto gray = foreground.channels() == 3 ? imageops::to_gray(foreground) : foreground;
  const auto pyramid = imageops::build_pyramid(gray, level + 1);
  const int lh = shape_map.height() / 4;
  const int lw = shape_map.width() / 4;
  const auto band = imageops::match_resolution(pyramid.details[level], lh, lw);
  return concat_channels(imageops::pixel_unshuffle(shape_map, 4), band);
}

PreparedFace prepare_face(const dataset::FaceRecord& record, const Providers& providers, int level) {
  require_level(level);
  require(providers.parsing && providers.shape, "parsing and shape providers are required");
  require_channels(record.image, 3, "face image '" + record.id + "'");
  const auto face = record.face();
  PreparedFace p;
  p.level = level;
  p.image = record.image;
  p.mask = providers.parsing->parse(face);
  p.shape_map = providers.shape->shape(face);
  const int h = record.image.height();
  const int w = record.image.width();
  if (p.mask.channels() != 1 || p.mask.height() != h || p.mask.width() != w ||
      p.shape_map.channels() != 1 || p.shape_map.height() != h || p.shape_map.width() != w) {
    fail(ErrorKind::kValidation, "provider output for '" + record.id + "' does not match the image shape");
  }
  if (h != facesynth::kImageSize || w != facesynth::kImageSize) {
    fail(ErrorKind::kValidation, "face '" + record.id + "' must be 64x64");
  }
  double area = 0.0;
  for (float v : p.mask.pixels()) {
    if (v != 0.0f && v != 1.0f) fail(ErrorKind::kValidation, "mask for '" + record.id + "' is not binary");
    area += v;
  }
  if (area == 0.0) fail(ErrorKind::kValidation, "mask for '" + record.id + "' is empty");
  p.foreground = multiply(p.image, p.mask);
  p.background = multiply(p.image, invert_mask(p.mask));
  p.content = content_map(p.shape_map, p.foreground, level);

  std::vector<int> labels;
  if (!record.labels.empty()) {
    require(record.labels.size() == p.mask.plane_size(), "region labels do not match the image");
    labels = record.labels;
    p.has_regions = true;
  } else {
    labels.resize(p.mask.plane_size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = p.mask.pixels()[i] > 0.5f ? 1 : 0;
  }
  p.latent_labels = imageops::downsample_labels(labels, h, w, 4, 4);
  return p;
}

Image latent_foreground(const std::vector<int>& latent_labels) {
  require(latent_labels.size() == static_cast<std::size_t>(kLatentSize * kLatentSize),
          "latent labels must be 16x16");
  Image out(1, kLatentSize, kLatentSize);
  for (std::size_t i = 0; i < latent_labels.size(); ++i) out.pixels()[i] = latent_labels[i] != 0 ? 1.0f : 0.0f;
  return out;
}

Image latent_region(const std::vector<int>& latent_labels, facesynth::Region region) {
  require(latent_labels.size() == static_cast<std::size_t>(kLatentSize * kLatentSize),
          "latent labels must be 16x16");
  return facesynth::region_mask(latent_labels, kLatentSize, kLatentSize, region);
}

}  // namespace shmt::pipeline
