#pragma once

// Autoencoder pre-training and the self-supervised decouple-and-reconstruct
// training loop.
//
// Run directory: <runs>/<name>/{config.json, checkpoints/step-N/, samples/,
// trace.jsonl}.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "shmt/conditioning.hpp"
#include "shmt/dataset.hpp"
#include "shmt/degrade.hpp"
#include "shmt/model_bundle.hpp"

namespace shmt::pipeline {

struct AutoencoderTrainConfig {
  std::string name = "autoencoder";
  std::filesystem::path dataset;  // empty: synthesize train_size seeds in memory
  int train_size = 2048;
  int holdout_size = 64;          // eval seeds used for the PSNR report
  int steps = 3000;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  diffusion::AutoencoderConfig model;
};
void to_json(nlohmann::json& j, const AutoencoderTrainConfig& c);
void from_json(const nlohmann::json& j, AutoencoderTrainConfig& c);

struct AutoencoderReport {
  std::filesystem::path checkpoint;
  double holdout_psnr = 0.0;  // mean over holdout faces, dB
  double latent_scale = 1.0;
  std::vector<double> losses;
  double seconds = 0.0;
};

AutoencoderReport pretrain_autoencoder(const AutoencoderTrainConfig& config,
                                       const std::filesystem::path& runs_dir);

// Mean PSNR of decode(encode(x)) over the given faces.
double reconstruction_psnr(diffusion::Autoencoder& ae, const std::vector<Image>& images);

struct TrainConfig {
  std::string name;  // default "shmt-h<level>"
  std::filesystem::path dataset;
  int train_size = 2048;
  std::filesystem::path autoencoder;  // autoencoder checkpoint or run directory
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-4;
  // Checkpoints and sample grids use an exponential moving average of the
  // weights; 0 turns it off.
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  int sample_every = 1000;
  int sample_steps = 50;
  bool allow_untrained_autoencoder = false;
  degrade::DegradeParams degrade;
  ModelConfig model;

  std::string run_name() const;
  void validate() const;
};
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepStats {
  int step = 0;
  double loss = 0.0;
  double w_mean = 0.0;
  double t_mean = 0.0;
};

struct TrainReport {
  std::filesystem::path run_dir;
  std::filesystem::path checkpoint;
  std::vector<double> losses;
  double seconds = 0.0;
};

class Trainer {
 public:
  // Fresh model with the given frozen autoencoder.
  Trainer(TrainConfig config, std::shared_ptr<const dataset::Dataset> data, Providers providers,
          diffusion::Autoencoder autoencoder);
  // Continue from a saved model checkpoint; the step counter resumes after it.
  Trainer(TrainConfig config, std::shared_ptr<const dataset::Dataset> data, Providers providers,
          const std::filesystem::path& checkpoint);

  // Loss of step `step` for the current weights; no update. Pure function of
  // (weights, data, seed, step).
  StepStats evaluate(int step);
  // One optimiser update at the current step; advances the counter.
  StepStats step();

  int current_step() const { return step_; }
  ShmtModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }

  std::filesystem::path save_checkpoint(const std::filesystem::path& run_dir,
                                        const nlohmann::json& metrics = {}) const;

  // Full loop with trace, periodic checkpoints and sample grids.
  TrainReport run(const std::filesystem::path& runs_dir,
                  const std::function<void(const StepStats&)>& on_step = {});

 private:
  struct Cached {
    torch::Tensor z0, z_bg, content, latent_mask;
    Image foreground, mask;
  };
  struct Batch {
    torch::Tensor z0, z_bg, content, latent_mask, z_m, t, eps;
  };

  void build_cache();
  void update_ema();
  // Swaps EMA weights into the model for the duration of fn.
  template <typename F>
  void with_ema(F&& fn) const;
  Batch make_batch(int step);
  std::pair<torch::Tensor, StepStats> forward(int step);

  TrainConfig config_;
  std::shared_ptr<const dataset::Dataset> data_;
  Providers providers_;
  ShmtModel model_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::vector<torch::Tensor> ema_;
  std::vector<Cached> cache_;
  std::uint64_t autoencoder_hash_ = 0;
  int step_ = 0;
};

// Loads `config.dataset` or synthesizes train_size training faces.
std::shared_ptr<const dataset::Dataset> training_data(const std::filesystem::path& root, int size);

TrainReport train(const TrainConfig& config, const std::filesystem::path& runs_dir,
                  const std::function<void(const StepStats&)>& on_step = {});

}  // namespace shmt::pipeline
