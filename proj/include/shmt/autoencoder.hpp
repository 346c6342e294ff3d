#pragma once

// Deterministic convolutional autoencoder, 64x64x3 <-> 16x16xc_z.

#include <torch/torch.h>

#include "json.hpp"
#include "shmt/layers.hpp"

namespace shmt::diffusion {

inline constexpr int kDownsampleFactor = 4;

struct AutoencoderConfig {
  int latent_channels = 8;
  int width = 64;
};
void to_json(nlohmann::json& j, const AutoencoderConfig& c);
void from_json(const nlohmann::json& j, AutoencoderConfig& c);

class AutoencoderImpl : public torch::nn::Module {
 public:
  explicit AutoencoderImpl(AutoencoderConfig config = {});

  // Images (B,3,H,W) in [0,1] -> latents (B,c_z,H/4,W/4) divided by the
  // stored latent scale so that trained latents have roughly unit variance.
  torch::Tensor encode(const torch::Tensor& images);
  // Inverse of encode; output is not clamped.
  torch::Tensor decode(const torch::Tensor& latents);

  torch::Tensor reconstruct(const torch::Tensor& images) { return decode(encode(images)); }

  bool trained() const;
  // Freezes the latent scale and marks the weights as usable for sampling.
  void mark_trained(double latent_scale);
  double latent_scale() const;

  // Throws an untrained-weights error unless trained() or `allow_untrained`.
  void require_trained(bool allow_untrained) const;

  const AutoencoderConfig& config() const { return config_; }

 private:
  AutoencoderConfig config_;
  torch::nn::Conv2d enc_in_{nullptr}, enc_out_{nullptr};
  nn::ResBlock enc_block1_{nullptr}, enc_block2_{nullptr};
  torch::nn::GroupNorm enc_norm_{nullptr};
  torch::nn::Conv2d dec_in_{nullptr}, dec_out_{nullptr};
  nn::ResBlock dec_block1_{nullptr}, dec_block2_{nullptr};
  torch::nn::GroupNorm dec_norm_{nullptr};
  torch::Tensor scale_;
  torch::Tensor trained_;
};
TORCH_MODULE(Autoencoder);

// Mean-squared error based PSNR per image for values in [0,1], shape (B).
torch::Tensor psnr(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace shmt::diffusion
