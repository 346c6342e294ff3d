#pragma once

// Three-resolution UNet noise predictor with an additive timestep embedding.

#include <array>

#include <torch/torch.h>

#include "json.hpp"
#include "shmt/layers.hpp"

namespace shmt::diffusion {

struct UNetConfig {
  int in_channels = 48;
  int out_channels = 8;
  std::array<int, 3> widths{64, 128, 128};
  int time_dim = 64;
};
void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(UNetConfig config = {});

  // x (B,in,H,W) with H, W divisible by 4; t int64 (B).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);

  const UNetConfig& config() const { return config_; }

 private:
  UNetConfig config_;
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::Conv2d in_{nullptr}, down0_{nullptr}, down1_{nullptr}, out_{nullptr};
  nn::ResBlock enc0_{nullptr}, enc1_{nullptr}, mid0_{nullptr}, mid1_{nullptr};
  nn::ResBlock dec1_{nullptr}, dec0_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
};
TORCH_MODULE(UNet);

}  // namespace shmt::diffusion
