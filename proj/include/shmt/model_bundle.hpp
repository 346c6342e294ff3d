#pragma once

// A trained SHMT model: denoiser, alignment module, the frozen autoencoder
// it was trained against, and the noise schedule.
//
// Checkpoint directory:
//   manifest.json                 schema version, config, level, step, hashes
//   autoencoder.{bin,json}
//   denoiser.{bin,json}           (model checkpoints only)
//   ida.{bin,json}                (model checkpoints only)

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "json.hpp"
#include "shmt/autoencoder.hpp"
#include "shmt/ida.hpp"
#include "shmt/schedule.hpp"
#include "shmt/unet.hpp"

namespace shmt::pipeline {

struct ScheduleConfig {
  int max_timestep = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};
void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);

struct ModelConfig {
  int texture_level = 0;
  std::array<int, 3> unet_widths{64, 128, 128};
  int condition_channels = 32;
  int feature_dim = 64;
  double tau = 0.01;
  ida::MixMode mix_mode = ida::MixMode::kLearned;
  double fixed_w = 0.0;
  ScheduleConfig schedule;

  void validate() const;
};
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Latents and maps for one denoising call; all at latent resolution.
struct DenoiseInputs {
  torch::Tensor content;      // (B,Cc,h,w)
  torch::Tensor f_c;          // encode_content(content), reused across steps
  torch::Tensor z_bg;         // (B,c_z,h,w)
  torch::Tensor latent_mask;  // (B,1,h,w)
};

class ShmtModel {
 public:
  ShmtModel(ModelConfig config, diffusion::Autoencoder autoencoder);

  // Loads a model checkpoint directory (denoiser + ida + autoencoder).
  static ShmtModel load(const std::filesystem::path& checkpoint_dir);

  // `extra` is merged into the manifest (step, metrics, run name, ...).
  void save(const std::filesystem::path& checkpoint_dir, const nlohmann::json& extra = {}) const;

  const ModelConfig& config() const { return config_; }
  int texture_level() const { return config_.texture_level; }
  const diffusion::NoiseSchedule& schedule() const { return schedule_; }
  diffusion::Autoencoder& autoencoder() { return autoencoder_; }
  diffusion::UNet& denoiser() { return denoiser_; }
  ida::IdaModule& ida() { return ida_; }
  int latent_channels() const { return autoencoder_->config().latent_channels; }

  // Parameters optimised during training (denoiser and alignment module).
  std::vector<torch::Tensor> trainable_parameters() const;
  void train(bool on);

  DenoiseInputs prepare_inputs(const torch::Tensor& content, const torch::Tensor& z_bg,
                               const torch::Tensor& latent_mask);

  // Alignment against the makeup latent for the current noisy latent.
  ida::AlignmentState align(const DenoiseInputs& in, const torch::Tensor& z_m,
                            const torch::Tensor& z_t, const torch::Tensor& t);
  // Projects a (possibly blended) z_hat and predicts the noise.
  torch::Tensor predict_noise(const DenoiseInputs& in, const torch::Tensor& z_hat,
                              const torch::Tensor& z_t, const torch::Tensor& t);

  std::uint64_t autoencoder_hash() const;

 private:
  ModelConfig config_;
  diffusion::NoiseSchedule schedule_;
  diffusion::Autoencoder autoencoder_;
  diffusion::UNet denoiser_{nullptr};
  ida::IdaModule ida_{nullptr};
};

// Autoencoder-only checkpoint (the output of pre-training).
void save_autoencoder(diffusion::Autoencoder& ae, const std::filesystem::path& dir,
                      const nlohmann::json& extra = {});
diffusion::Autoencoder load_autoencoder(const std::filesystem::path& dir);

// Manifest of any checkpoint directory; kNotFound naming the path if absent.
nlohmann::json read_manifest(const std::filesystem::path& checkpoint_dir);

// `path` may be a checkpoint directory or a run directory, in which case the
// checkpoint with the highest step under checkpoints/ is returned.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path);

}  // namespace shmt::pipeline
