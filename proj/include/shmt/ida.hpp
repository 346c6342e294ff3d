#pragma once

// Iterative dual alignment: cosine correlation between content and makeup
// features, softmax deformation of the makeup latent toward content
// coordinates, and a timestep-weighted blend of two such alignments.

#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace shmt::ida {

inline constexpr double kNormEpsilon = 1e-8;

// Feature maps are handled as (B, N, d) pixel lists, N = H*W row-major.
torch::Tensor to_pixels(const torch::Tensor& map);
torch::Tensor from_pixels(const torch::Tensor& pixels, std::int64_t height, std::int64_t width);

// M(i,j) = <f_c(i), f_m(j)> / ((|f_c(i)| + eps)(|f_m(j)| + eps)); (B,Nc,Nm).
torch::Tensor correlation(const torch::Tensor& f_c, const torch::Tensor& f_m);

// Row softmax of M / tau.
torch::Tensor deform_weights(const torch::Tensor& m, double tau);

// z'(i) = sum_j softmax_j(M(i,.)/tau) z(j); z is (B,Nm,c), result (B,Nc,c).
torch::Tensor deform(const torch::Tensor& m, const torch::Tensor& z, double tau);

// (1-w) a + w b with w broadcast over trailing dimensions of a (B) vector.
torch::Tensor mix(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& w);

enum class MixMode { kLearned, kFixed };

struct IdaConfig {
  int content_channels = 17;
  int latent_channels = 8;
  int feature_dim = 64;
  int hidden = 64;
  int condition_channels = 32;
  int time_dim = 64;
  double tau = 0.01;
  MixMode mix_mode = MixMode::kLearned;
  double fixed_w = 0.0;

  void validate() const;
};
void to_json(nlohmann::json& j, const IdaConfig& c);
void from_json(const nlohmann::json& j, IdaConfig& c);

// Spatial maps are (B,C,H,W); the pixel lists are (B,N,C).
struct AlignmentState {
  torch::Tensor f_c, f_m;
  torch::Tensor correlation;    // M against content features
  torch::Tensor attention;      // row-softmax weights producing z'_m
  torch::Tensor z_prime;        // (B,c_z,H,W)
  torch::Tensor z_double_prime; // (B,c_z,H,W)
  torch::Tensor w;              // (B)
  torch::Tensor z_hat;          // (B,c_z,H,W)
};

class MixWeightNetImpl : public torch::nn::Module {
 public:
  MixWeightNetImpl(int time_dim, int hidden);
  // t int64 (B) -> w (B) in (0,1).
  torch::Tensor forward(const torch::Tensor& t);

 private:
  int time_dim_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(MixWeightNet);

class IdaModuleImpl : public torch::nn::Module {
 public:
  explicit IdaModuleImpl(IdaConfig config = {});

  // Stride-1 encoders; spatial dims are preserved.
  torch::Tensor encode_content(const torch::Tensor& content);
  torch::Tensor encode_makeup(const torch::Tensor& latent);
  torch::Tensor mix_weight(const torch::Tensor& t);

  // f_c: encoded content map; z_m: makeup latent; masked_z_t: current noisy
  // latent with the background zeroed. All maps share one spatial size.
  AlignmentState align(const torch::Tensor& f_c, const torch::Tensor& z_m,
                       const torch::Tensor& masked_z_t, const torch::Tensor& t);

  // 1x1 convolution over concat(z_hat, content) -> condition channels.
  torch::Tensor project(const torch::Tensor& z_hat, const torch::Tensor& content);

  const IdaConfig& config() const { return config_; }

 private:
  IdaConfig config_;
  torch::nn::Sequential content_encoder_{nullptr}, makeup_encoder_{nullptr};
  MixWeightNet mix_net_{nullptr};
  torch::nn::Conv2d projection_{nullptr};
};
TORCH_MODULE(IdaModule);

// The module size at the paper's 256x256 scale (64x64 latent, four
// channel latent, wider encoders); used for the parameter-budget report.
IdaConfig paper_scale_config();

}  // namespace shmt::ida
