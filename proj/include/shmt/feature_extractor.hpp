#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "shmt/image.hpp"

namespace shmt::metrics {

// What an extractor hands back for one image: a pooled descriptor ("CLS")
// and one key vector per spatial patch, row-major patches x key_dim.
struct Features {
  std::vector<float> cls;
  std::vector<float> keys;
  int patches = 0;
  int key_dim = 0;

  std::span<const float> key(int p) const {
    return {keys.data() + static_cast<std::size_t>(p) * key_dim, static_cast<std::size_t>(key_dim)};
  }
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  // Length of the pooled vector. Fixed per extractor.
  virtual int dim() const = 0;
  virtual Features extract(const Image& rgb) const = 0;
};

// 3x3 convolution, stride 2, zero padding 1. Weights are out x in x 3 x 3.
struct ConvLayer {
  int in = 0;
  int out = 0;
  std::vector<float> weights;
  std::vector<float> bias;
};

// Planar activations (channels x height x width) as a flat buffer.
struct Activation {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;
};

// Three stride-2 convs (3->32->64->64) with ReLU between them and He-normal
// weights drawn from a fixed seed. Keys are the final 64-d activations per
// output position; CLS is their average. Expects sides divisible by 8.
class RandomConvExtractor final : public FeatureExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 20240613;
  static constexpr int kDim = 64;

  explicit RandomConvExtractor(std::uint64_t seed = kDefaultSeed);

  std::string id() const override;
  int dim() const override { return kDim; }
  Features extract(const Image& rgb) const override;

  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<ConvLayer> layers_;
};

// CLS is a fixed random projection of the 8x8 average-pooled image; keys
// are the pooled cell colours. Linear in the input, so x and -x give
// opposite descriptors.
class LinearExtractor final : public FeatureExtractor {
 public:
  static constexpr int kDim = 32;
  static constexpr int kGrid = 8;

  explicit LinearExtractor(std::uint64_t seed = 7);

  std::string id() const override { return "linear"; }
  int dim() const override { return kDim; }
  Features extract(const Image& rgb) const override;

 private:
  std::vector<float> projection_;  // kDim x (3 * kGrid * kGrid)
};

// Works on gradients of the channel mean, so any channel permutation or
// uniform offset leaves it unchanged. Keys per 8x8 cell are
// (mean dx, mean dy, mean |dx|, mean |dy|).
class GradientExtractor final : public FeatureExtractor {
 public:
  static constexpr int kGrid = 8;

  std::string id() const override { return "gradient"; }
  int dim() const override { return 4; }
  Features extract(const Image& rgb) const override;
};

// "random-conv", "linear" or "gradient". Unknown ids are a validation error.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& id);
std::vector<std::string> extractor_ids();

namespace kernels {
// OpenMP over output channels.
Activation conv3x3_s2(const Activation& input, const ConvLayer& layer, bool relu);
Activation from_image(const Image& rgb);
}  // namespace kernels

}  // namespace shmt::metrics

namespace shmt::reference {

// Direct loops with double accumulation, no threading.
metrics::Activation conv3x3_s2(const metrics::Activation& input, const metrics::ConvLayer& layer,
                               bool relu);
metrics::Features random_conv_features(const metrics::RandomConvExtractor& extractor,
                                       const Image& rgb);

}  // namespace shmt::reference
