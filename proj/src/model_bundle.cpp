#include "shmt/model_bundle.hpp"

#include "shmt/checkpoint.hpp"
#include "shmt/conditioning.hpp"
#include "shmt/error.hpp"

namespace shmt::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const ScheduleConfig& c) {
  j = {{"max_timestep", c.max_timestep}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}

void from_json(const json& j, ScheduleConfig& c) {
  c.max_timestep = j.value("max_timestep", c.max_timestep);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
}

void ModelConfig::validate() const {
  require_level(texture_level);
  for (int w : unet_widths) require(w > 0, "model.unet_widths must be positive");
  require(condition_channels > 0 && feature_dim > 0, "model widths must be positive");
  if (!(tau > 0.0)) fail(ErrorKind::kValidation, "model.tau must be positive");
  require(fixed_w >= 0.0 && fixed_w <= 1.0, "model.fixed_w must lie in [0,1]");
}

void to_json(json& j, const ModelConfig& c) {
  j = {{"texture_level", c.texture_level},
       {"unet_widths", c.unet_widths},
       {"condition_channels", c.condition_channels},
       {"feature_dim", c.feature_dim},
       {"tau", c.tau},
       {"mix", c.mix_mode == ida::MixMode::kLearned ? "learned" : "fixed"},
       {"fixed_w", c.fixed_w},
       {"schedule", c.schedule}};
}

void from_json(const json& j, ModelConfig& c) {
  c.texture_level = j.value("texture_level", c.texture_level);
  c.unet_widths = j.value("unet_widths", c.unet_widths);
  c.condition_channels = j.value("condition_channels", c.condition_channels);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.tau = j.value("tau", c.tau);
  const auto mix = j.value("mix", std::string("learned"));
  if (mix == "learned") {
    c.mix_mode = ida::MixMode::kLearned;
  } else if (mix == "fixed") {
    c.mix_mode = ida::MixMode::kFixed;
  } else {
    fail(ErrorKind::kValidation, "model.mix must be \"learned\" or \"fixed\"");
  }
  c.fixed_w = j.value("fixed_w", c.fixed_w);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<ScheduleConfig>();
  c.validate();
}

ShmtModel::ShmtModel(ModelConfig config, diffusion::Autoencoder autoencoder)
    : config_(config),
      schedule_(config.schedule.max_timestep, config.schedule.beta_start, config.schedule.beta_end),
      autoencoder_(std::move(autoencoder)) {
  config_.validate();
  const int cz = autoencoder_->config().latent_channels;
  ida::IdaConfig ic;
  ic.content_channels = content_channels(config_.texture_level);
  ic.latent_channels = cz;
  ic.feature_dim = config_.feature_dim;
  ic.hidden = config_.feature_dim;
  ic.condition_channels = config_.condition_channels;
  ic.tau = config_.tau;
  ic.mix_mode = config_.mix_mode;
  ic.fixed_w = config_.fixed_w;
  ida_ = ida::IdaModule(ic);

  diffusion::UNetConfig uc;
  uc.in_channels = 2 * cz + config_.condition_channels;
  uc.out_channels = cz;
  uc.widths = config_.unet_widths;
  denoiser_ = diffusion::UNet(uc);

  autoencoder_->eval();
  for (auto& p : autoencoder_->parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> ShmtModel::trainable_parameters() const {
  auto params = denoiser_->parameters();
  for (auto& p : ida_->parameters()) params.push_back(p);
  return params;
}

void ShmtModel::train(bool on) {
  denoiser_->train(on);
  ida_->train(on);
  autoencoder_->eval();
}

DenoiseInputs ShmtModel::prepare_inputs(const torch::Tensor& content, const torch::Tensor& z_bg,
                                        const torch::Tensor& latent_mask) {
  require(content.dim() == 4 && z_bg.dim() == 4 && latent_mask.dim() == 4, "model inputs must be 4-D");
  require(content.size(0) == z_bg.size(0) && latent_mask.size(0) == z_bg.size(0), "model inputs differ in batch size");
  require(latent_mask.size(1) == 1, "latent mask must have one channel");
  DenoiseInputs in;
  in.content = content;
  in.f_c = ida_->encode_content(content);
  in.z_bg = z_bg;
  in.latent_mask = latent_mask;
  return in;
}

ida::AlignmentState ShmtModel::align(const DenoiseInputs& in, const torch::Tensor& z_m,
                                     const torch::Tensor& z_t, const torch::Tensor& t) {
  return ida_->align(in.f_c, z_m, z_t * in.latent_mask, t);
}

torch::Tensor ShmtModel::predict_noise(const DenoiseInputs& in, const torch::Tensor& z_hat,
                                       const torch::Tensor& z_t, const torch::Tensor& t) {
  const auto cond = ida_->project(z_hat, in.content);
  return denoiser_->forward(torch::cat({z_t, in.z_bg, cond}, 1), t);
}

std::uint64_t ShmtModel::autoencoder_hash() const { return checkpoint::weights_hash(*autoencoder_); }

void ShmtModel::save(const fs::path& dir, const json& extra) const {
  checkpoint::save_module(*autoencoder_, dir, "autoencoder");
  checkpoint::save_module(*denoiser_, dir, "denoiser");
  checkpoint::save_module(*ida_, dir, "ida");
  json manifest = {{"schema_version", checkpoint::kSchemaVersion},
                   {"kind", "model"},
                   {"texture_level", config_.texture_level},
                   {"config", config_},
                   {"autoencoder", autoencoder_->config()},
                   {"autoencoder_hash", checkpoint::hex(autoencoder_hash())},
                   {"autoencoder_trained", autoencoder_->trained()},
                   {"components", {"autoencoder", "denoiser", "ida"}},
                   {"parameters",
                    {{"denoiser", checkpoint::parameter_count(*denoiser_)},
                     {"ida", checkpoint::parameter_count(*ida_)},
                     {"autoencoder", checkpoint::parameter_count(*autoencoder_)}}}};
  if (extra.is_object()) manifest.update(extra);
  checkpoint::write_json_atomic(dir / "manifest.json", manifest);
}

namespace {

void require_schema(const json& manifest, const fs::path& dir) {
  if (manifest.value("schema_version", 0) != checkpoint::kSchemaVersion) {
    fail(ErrorKind::kValidation, "unsupported checkpoint schema in " + dir.string());
  }
}

}  // namespace

json read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) fail(ErrorKind::kNotFound, "checkpoint not found: " + path.string());
  auto manifest = checkpoint::read_json(path);
  require_schema(manifest, dir);
  return manifest;
}

ShmtModel ShmtModel::load(const fs::path& path) {
  const auto dir = resolve_checkpoint(path);
  const auto manifest = read_manifest(dir);
  if (manifest.value("kind", "") != "model") {
    fail(ErrorKind::kValidation, dir.string() + " is not a model checkpoint");
  }
  diffusion::Autoencoder ae(manifest.at("autoencoder").get<diffusion::AutoencoderConfig>());
  checkpoint::load_module(*ae, dir, "autoencoder");
  ShmtModel model(manifest.at("config").get<ModelConfig>(), ae);
  checkpoint::load_module(*model.denoiser_, dir, "denoiser");
  checkpoint::load_module(*model.ida_, dir, "ida");
  model.train(false);
  return model;
}

void save_autoencoder(diffusion::Autoencoder& ae, const fs::path& dir, const json& extra) {
  checkpoint::save_module(*ae, dir, "autoencoder");
  json manifest = {{"schema_version", checkpoint::kSchemaVersion},
                   {"kind", "autoencoder"},
                   {"autoencoder", ae->config()},
                   {"trained", ae->trained()},
                   {"latent_scale", ae->latent_scale()},
                   {"autoencoder_hash", checkpoint::hex(checkpoint::weights_hash(*ae))},
                   {"components", {"autoencoder"}}};
  if (extra.is_object()) manifest.update(extra);
  checkpoint::write_json_atomic(dir / "manifest.json", manifest);
}

diffusion::Autoencoder load_autoencoder(const fs::path& path) {
  const auto dir = resolve_checkpoint(path);
  const auto manifest = read_manifest(dir);
  diffusion::Autoencoder ae(manifest.at("autoencoder").get<diffusion::AutoencoderConfig>());
  checkpoint::load_module(*ae, dir, "autoencoder");
  ae->eval();
  return ae;
}

fs::path resolve_checkpoint(const fs::path& path) {
  if (fs::exists(path / "manifest.json")) return path;
  const auto root = path / "checkpoints";
  if (fs::is_directory(root)) {
    fs::path best;
    long best_step = -1;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (!entry.is_directory() || !fs::exists(entry.path() / "manifest.json")) continue;
      const auto name = entry.path().filename().string();
      if (name.rfind("step-", 0) != 0) continue;
      try {
        const long step = std::stol(name.substr(5));
        if (step > best_step) {
          best_step = step;
          best = entry.path();
        }
      } catch (const std::exception&) {
      }
    }
    if (!best.empty()) return best;
  }
  fail(ErrorKind::kNotFound, "checkpoint not found: " + path.string());
}

}  // namespace shmt::pipeline
