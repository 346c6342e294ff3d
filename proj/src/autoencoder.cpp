#include "shmt/autoencoder.hpp"

#include <cmath>

#include "shmt/error.hpp"

namespace shmt::diffusion {

namespace F = torch::nn::functional;

void to_json(nlohmann::json& j, const AutoencoderConfig& c) {
  j = {{"latent_channels", c.latent_channels}, {"width", c.width}};
}

void from_json(const nlohmann::json& j, AutoencoderConfig& c) {
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.width = j.value("width", c.width);
  require(c.latent_channels > 0 && c.width > 0, "autoencoder widths must be positive");
}

AutoencoderImpl::AutoencoderImpl(AutoencoderConfig config) : config_(config) {
  constexpr int kBlock = 3 * kDownsampleFactor * kDownsampleFactor;
  const int w = config.width;
  enc_in_ = register_module("enc_in", nn::conv3x3(kBlock, w));
  enc_block1_ = register_module("enc_block1", nn::ResBlock(w, w));
  enc_block2_ = register_module("enc_block2", nn::ResBlock(w, w));
  enc_norm_ = register_module("enc_norm", nn::group_norm(w));
  enc_out_ = register_module("enc_out", nn::conv3x3(w, config.latent_channels));
  dec_in_ = register_module("dec_in", nn::conv3x3(config.latent_channels, w));
  dec_block1_ = register_module("dec_block1", nn::ResBlock(w, w));
  dec_block2_ = register_module("dec_block2", nn::ResBlock(w, w));
  dec_norm_ = register_module("dec_norm", nn::group_norm(w));
  dec_out_ = register_module("dec_out", nn::conv3x3(w, kBlock));
  scale_ = register_buffer("latent_scale", torch::ones({1}));
  trained_ = register_buffer("trained", torch::zeros({1}));
}

torch::Tensor AutoencoderImpl::encode(const torch::Tensor& images) {
  require(images.dim() == 4 && images.size(1) == 3, "encode expects (B,3,H,W) images");
  require(images.size(2) % kDownsampleFactor == 0 && images.size(3) % kDownsampleFactor == 0,
          "encode needs image sides divisible by 4");
  auto h = F::pixel_unshuffle(images * 2.0 - 1.0, kDownsampleFactor);
  h = enc_block2_(enc_block1_(enc_in_(h)));
  return enc_out_(F::silu(enc_norm_(h))) / scale_;
}

torch::Tensor AutoencoderImpl::decode(const torch::Tensor& latents) {
  require(latents.dim() == 4 && latents.size(1) == config_.latent_channels,
          "decode expects (B,c_z,h,w) latents");
  auto h = dec_block2_(dec_block1_(dec_in_(latents * scale_)));
  h = dec_out_(F::silu(dec_norm_(h)));
  return (F::pixel_shuffle(h, kDownsampleFactor) + 1.0) * 0.5;
}

bool AutoencoderImpl::trained() const { return trained_.item<float>() > 0.5f; }

double AutoencoderImpl::latent_scale() const { return scale_.item<float>(); }

void AutoencoderImpl::mark_trained(double latent_scale) {
  require(latent_scale > 0.0 && std::isfinite(latent_scale), "latent scale must be positive");
  torch::NoGradGuard no_grad;
  scale_.fill_(latent_scale);
  trained_.fill_(1.0);
}

void AutoencoderImpl::require_trained(bool allow_untrained) const {
  if (!trained() && !allow_untrained) {
    fail(ErrorKind::kUntrained,
         "untrained weights: the autoencoder has not been pre-trained (run pretrain-ae)");
  }
}

torch::Tensor psnr(const torch::Tensor& a, const torch::Tensor& b) {
  require(a.sizes() == b.sizes(), "psnr: shape mismatch");
  auto mse = (a - b).pow(2).flatten(1).mean(1).clamp_min(1e-12);
  return -10.0 * torch::log10(mse);
}

}  // namespace shmt::diffusion
