#pragma once

// Turns faces into model inputs: foreground/background split through the
// parsing provider, content maps (unshuffled shape map plus one resolution
// matched detail band) and latent-resolution masks.

#include <memory>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "shmt/dataset.hpp"
#include "shmt/facesynth.hpp"
#include "shmt/image.hpp"

namespace shmt::pipeline {

inline constexpr int kMaxTextureLevel = 4;
inline constexpr int kLatentSize = facesynth::kImageSize / 4;

struct Providers {
  std::shared_ptr<const dataset::ParsingProvider> parsing;
  std::shared_ptr<const dataset::ShapeProvider> shape;

  static Providers ground_truth(const dataset::Dataset& dataset);
};

// Image (C,H,W) <-> float tensor (C,H,W).
torch::Tensor to_tensor(const Image& image);
Image to_image(const torch::Tensor& tensor);
torch::Tensor stack(std::span<const Image> images);

void require_level(int level);

// Channels contributed by detail band h_level at latent resolution.
int detail_channels(int level);
int content_channels(int level);

// unshuffle(I_3d, 4) ++ match_resolution(h_level); h_level is the detail
// band of the grey foreground at pyramid depth level + 1.
Image content_map(const Image& shape_map, const Image& foreground, int level);

struct PreparedFace {
  Image image;
  Image mask;        // binary, 1 x 64 x 64
  Image foreground;  // image * mask
  Image background;  // image * (1 - mask)
  Image shape_map;
  Image content;     // content_channels(level) x 16 x 16
  std::vector<int> latent_labels;  // 16 x 16 region labels, 0 = background
  bool has_regions = false;
  int level = 0;
};

// Mask and shape map come from the providers, region labels from the record.
PreparedFace prepare_face(const dataset::FaceRecord& record, const Providers& providers, int level);

// Binary latent mask (1,16,16) of labels != 0.
Image latent_foreground(const std::vector<int>& latent_labels);
Image latent_region(const std::vector<int>& latent_labels, facesynth::Region region);

}  // namespace shmt::pipeline
