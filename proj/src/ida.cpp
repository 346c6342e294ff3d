#include "shmt/ida.hpp"

#include "shmt/error.hpp"
#include "shmt/layers.hpp"
#include "shmt/schedule.hpp"

namespace shmt::ida {

namespace F = torch::nn::functional;

torch::Tensor to_pixels(const torch::Tensor& map) {
  require(map.dim() == 4, "expected a (B,C,H,W) map");
  return map.flatten(2).transpose(1, 2);
}

torch::Tensor from_pixels(const torch::Tensor& pixels, std::int64_t height, std::int64_t width) {
  require(pixels.dim() == 3 && pixels.size(1) == height * width, "pixel list does not match map size");
  return pixels.transpose(1, 2).reshape({pixels.size(0), pixels.size(2), height, width});
}

torch::Tensor correlation(const torch::Tensor& f_c, const torch::Tensor& f_m) {
  require(f_c.dim() == 3 && f_m.dim() == 3, "correlation expects (B,N,d) features");
  require(f_c.size(0) == f_m.size(0), "correlation: batch size mismatch");
  if (f_c.size(2) != f_m.size(2)) {
    fail(ErrorKind::kValidation, "correlation: feature dim mismatch (" + std::to_string(f_c.size(2)) +
                                     " vs " + std::to_string(f_m.size(2)) + ")");
  }
  const auto a = f_c / (f_c.norm(2, -1, true) + kNormEpsilon);
  const auto b = f_m / (f_m.norm(2, -1, true) + kNormEpsilon);
  return torch::bmm(a, b.transpose(1, 2));
}

torch::Tensor deform_weights(const torch::Tensor& m, double tau) {
  if (!(tau > 0.0)) fail(ErrorKind::kValidation, "temperature tau must be positive");
  return torch::softmax(m / tau, -1);
}

torch::Tensor deform(const torch::Tensor& m, const torch::Tensor& z, double tau) {
  require(m.dim() == 3 && z.dim() == 3 && m.size(2) == z.size(1), "deform: M columns must match z pixels");
  return torch::bmm(deform_weights(m, tau), z);
}

torch::Tensor mix(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& w) {
  require(a.sizes() == b.sizes(), "mix: operand shapes differ");
  require(w.dim() == 1 && w.size(0) == a.size(0), "mix: one weight per sample");
  std::vector<std::int64_t> shape(static_cast<std::size_t>(a.dim()), 1);
  shape[0] = a.size(0);
  const auto wv = w.view(shape);
  return (1.0 - wv) * a + wv * b;
}

void IdaConfig::validate() const {
  require(content_channels > 0 && latent_channels > 0 && feature_dim > 0 && hidden > 0 &&
              condition_channels > 0,
          "ida widths must be positive");
  require(time_dim > 0 && time_dim % 2 == 0, "ida.time_dim must be positive and even");
  if (!(tau > 0.0)) fail(ErrorKind::kValidation, "ida.tau must be positive");
  require(fixed_w >= 0.0 && fixed_w <= 1.0, "ida.fixed_w must lie in [0,1]");
}

void to_json(nlohmann::json& j, const IdaConfig& c) {
  j = {{"content_channels", c.content_channels},
       {"latent_channels", c.latent_channels},
       {"feature_dim", c.feature_dim},
       {"hidden", c.hidden},
       {"condition_channels", c.condition_channels},
       {"time_dim", c.time_dim},
       {"tau", c.tau},
       {"mix", c.mix_mode == MixMode::kLearned ? "learned" : "fixed"},
       {"fixed_w", c.fixed_w}};
}

void from_json(const nlohmann::json& j, IdaConfig& c) {
  c.content_channels = j.value("content_channels", c.content_channels);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.condition_channels = j.value("condition_channels", c.condition_channels);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.tau = j.value("tau", c.tau);
  const auto mode = j.value("mix", std::string("learned"));
  if (mode == "learned") {
    c.mix_mode = MixMode::kLearned;
  } else if (mode == "fixed") {
    c.mix_mode = MixMode::kFixed;
  } else {
    fail(ErrorKind::kValidation, "ida.mix must be \"learned\" or \"fixed\"");
  }
  c.fixed_w = j.value("fixed_w", c.fixed_w);
  c.validate();
}

MixWeightNetImpl::MixWeightNetImpl(int time_dim, int hidden) : time_dim_(time_dim) {
  fc1_ = register_module("fc1", torch::nn::Linear(time_dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, 1));
}

torch::Tensor MixWeightNetImpl::forward(const torch::Tensor& t) {
  const auto e = diffusion::timestep_embedding(t, time_dim_).to(fc1_->weight.dtype());
  return torch::sigmoid(fc2_(F::silu(fc1_(e)))).squeeze(1);
}

namespace {

torch::nn::Sequential shallow_encoder(int in, int hidden, int out) {
  return torch::nn::Sequential(nn::conv3x3(in, hidden), torch::nn::SiLU(), nn::conv3x3(hidden, out));
}

}  // namespace

IdaModuleImpl::IdaModuleImpl(IdaConfig config) : config_(config) {
  config.validate();
  content_encoder_ = register_module(
      "content_encoder", shallow_encoder(config.content_channels, config.hidden, config.feature_dim));
  makeup_encoder_ = register_module(
      "makeup_encoder", shallow_encoder(config.latent_channels, config.hidden, config.feature_dim));
  mix_net_ = register_module("mix_net", MixWeightNet(config.time_dim, config.hidden));
  projection_ = register_module(
      "projection", nn::conv1x1(config.latent_channels + config.content_channels,
                                config.condition_channels));
}

torch::Tensor IdaModuleImpl::encode_content(const torch::Tensor& content) {
  require(content.dim() == 4 && content.size(1) == config_.content_channels,
          "content map has " + std::to_string(content.dim() == 4 ? content.size(1) : -1) +
              " channels, expected " + std::to_string(config_.content_channels));
  return content_encoder_->forward(content);
}

torch::Tensor IdaModuleImpl::encode_makeup(const torch::Tensor& latent) {
  require(latent.dim() == 4 && latent.size(1) == config_.latent_channels,
          "makeup latent has the wrong channel count");
  return makeup_encoder_->forward(latent);
}

torch::Tensor IdaModuleImpl::mix_weight(const torch::Tensor& t) {
  if (config_.mix_mode == MixMode::kFixed) {
    return torch::full({t.size(0)}, config_.fixed_w, mix_net_->parameters().front().options());
  }
  return mix_net_->forward(t);
}

AlignmentState IdaModuleImpl::align(const torch::Tensor& f_c, const torch::Tensor& z_m,
                                    const torch::Tensor& masked_z_t, const torch::Tensor& t) {
  if (!masked_z_t.defined()) fail(ErrorKind::kValidation, "alignment needs the masked noisy latent");
  require(f_c.dim() == 4 && z_m.dim() == 4 && masked_z_t.dim() == 4, "alignment expects 4-D maps");
  require(f_c.size(2) == z_m.size(2) && f_c.size(3) == z_m.size(3) &&
              masked_z_t.sizes() == z_m.sizes(),
          "alignment inputs must share the latent resolution");
  const auto h = z_m.size(2);
  const auto w = z_m.size(3);

  AlignmentState s;
  s.f_c = to_pixels(f_c);
  s.f_m = to_pixels(encode_makeup(z_m));
  const auto z = to_pixels(z_m);
  s.correlation = correlation(s.f_c, s.f_m);
  s.attention = deform_weights(s.correlation, config_.tau);
  s.z_prime = from_pixels(torch::bmm(s.attention, z), h, w);
  s.w = mix_weight(t);
  if (config_.mix_mode == MixMode::kFixed && config_.fixed_w == 0.0) {
    s.z_double_prime = torch::zeros_like(s.z_prime);
    s.z_hat = s.z_prime;
    return s;
  }
  const auto f_t = to_pixels(encode_makeup(masked_z_t));
  s.z_double_prime = from_pixels(deform(correlation(f_t, s.f_m), z, config_.tau), h, w);
  s.z_hat = mix(s.z_prime, s.z_double_prime, s.w);
  return s;
}

torch::Tensor IdaModuleImpl::project(const torch::Tensor& z_hat, const torch::Tensor& content) {
  require(z_hat.dim() == 4 && content.dim() == 4 && z_hat.size(0) == content.size(0) &&
              z_hat.size(2) == content.size(2) && z_hat.size(3) == content.size(3),
          "projection inputs must be spatially aligned");
  require(z_hat.size(1) == config_.latent_channels && content.size(1) == config_.content_channels,
          "projection inputs have the wrong channel counts");
  return projection_(torch::cat({z_hat, content}, 1));
}

IdaConfig paper_scale_config() {
  IdaConfig c;
  c.latent_channels = 4;
  c.content_channels = 16 + 1;
  c.feature_dim = 320;
  c.hidden = 1024;
  c.condition_channels = 320;
  c.time_dim = 320;
  return c;
}

}  // namespace shmt::ida
