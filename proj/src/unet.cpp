#include "shmt/unet.hpp"

#include "shmt/error.hpp"
#include "shmt/schedule.hpp"

namespace shmt::diffusion {

namespace F = torch::nn::functional;

void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"out_channels", c.out_channels},
       {"widths", c.widths},
       {"time_dim", c.time_dim}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.widths = j.value("widths", c.widths);
  c.time_dim = j.value("time_dim", c.time_dim);
}

UNetImpl::UNetImpl(UNetConfig config) : config_(config) {
  const auto [w0, w1, w2] = config.widths;
  const int td = config.time_dim;
  const int ed = 4 * td;
  time_mlp_ = register_module(
      "time_mlp", torch::nn::Sequential(torch::nn::Linear(td, ed), torch::nn::SiLU(),
                                        torch::nn::Linear(ed, ed)));
  in_ = register_module("in", nn::conv3x3(config.in_channels, w0));
  enc0_ = register_module("enc0", nn::ResBlock(w0, w0, ed));
  down0_ = register_module("down0", nn::conv3x3(w0, w0, 2));
  enc1_ = register_module("enc1", nn::ResBlock(w0, w1, ed));
  down1_ = register_module("down1", nn::conv3x3(w1, w1, 2));
  mid0_ = register_module("mid0", nn::ResBlock(w1, w2, ed));
  mid1_ = register_module("mid1", nn::ResBlock(w2, w2, ed));
  dec1_ = register_module("dec1", nn::ResBlock(w2 + w1, w1, ed));
  dec0_ = register_module("dec0", nn::ResBlock(w1 + w0, w0, ed));
  out_norm_ = register_module("out_norm", nn::group_norm(w0));
  out_ = register_module("out", nn::conv3x3(w0, config.out_channels));
  torch::NoGradGuard no_grad;
  out_->weight.zero_();
  out_->bias.zero_();
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
  require(x.dim() == 4 && x.size(1) == config_.in_channels, "denoiser input has wrong channels");
  require(x.size(2) % 4 == 0 && x.size(3) % 4 == 0, "denoiser input sides must be divisible by 4");
  require(t.dim() == 1 && t.size(0) == x.size(0), "denoiser needs one timestep per sample");
  const auto emb = time_mlp_->forward(timestep_embedding(t, config_.time_dim));
  auto up = [](const torch::Tensor& h) {
    return F::interpolate(h, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
  };
  auto s0 = enc0_(in_(x), emb);
  auto s1 = enc1_(down0_(s0), emb);
  auto h = mid1_(mid0_(down1_(s1), emb), emb);
  h = dec1_(torch::cat({up(h), s1}, 1), emb);
  h = dec0_(torch::cat({up(h), s0}, 1), emb);
  return out_(F::silu(out_norm_(h)));
}

}  // namespace shmt::diffusion
