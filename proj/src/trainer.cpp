#include "shmt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "shmt/checkpoint.hpp"
#include "shmt/error.hpp"
#include "shmt/png_io.hpp"
#include "shmt/rng.hpp"
#include "shmt/sampler.hpp"

namespace shmt::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

// raw weights then EMA weights, for resuming
constexpr const char* kTrainState = "train_state.pt";

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

torch::Generator generator(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

}  // namespace

void to_json(json& j, const AutoencoderTrainConfig& c) {
  j = {{"name", c.name},
       {"dataset", c.dataset.string()},
       {"train_size", c.train_size},
       {"holdout_size", c.holdout_size},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"seed", c.seed},
       {"model", c.model}};
}

void from_json(const json& j, AutoencoderTrainConfig& c) {
  c.name = j.value("name", c.name);
  c.dataset = j.value("dataset", c.dataset.string());
  c.train_size = j.value("train_size", c.train_size);
  c.holdout_size = j.value("holdout_size", c.holdout_size);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = j.at("model").get<diffusion::AutoencoderConfig>();
  require(c.train_size > 0 && c.holdout_size > 0, "autoencoder data sizes must be positive");
  require(c.steps > 0 && c.batch_size > 0, "autoencoder steps and batch size must be positive");
  require(c.learning_rate > 0.0, "autoencoder learning rate must be positive");
}

std::shared_ptr<const dataset::Dataset> training_data(const fs::path& root, int size) {
  if (!root.empty()) return std::make_shared<const dataset::Dataset>(dataset::Dataset::load(root));
  const auto seeds = dataset::train_seeds(size);
  return std::make_shared<const dataset::Dataset>(dataset::Dataset::synthesize(seeds));
}

double reconstruction_psnr(diffusion::Autoencoder& ae, const std::vector<Image>& images) {
  torch::NoGradGuard no_grad;
  ae->eval();
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); i += 32) {
    const auto end = std::min(images.size(), i + 32);
    const auto x = stack(std::span(images).subspan(i, end - i));
    total += diffusion::psnr(ae->reconstruct(x).clamp(0.0, 1.0), x).sum().item<double>();
  }
  return total / static_cast<double>(images.size());
}

AutoencoderReport pretrain_autoencoder(const AutoencoderTrainConfig& config, const fs::path& runs_dir) {
  const auto start = Clock::now();
  const auto data = training_data(config.dataset, config.train_size);
  std::vector<Image> images;
  for (const auto& r : data->records()) images.push_back(r.image);
  require(!images.empty(), "autoencoder training set is empty");
  const auto all = stack(images);

  torch::manual_seed(config.seed);
  diffusion::Autoencoder ae(config.model);
  torch::optim::Adam opt(ae->parameters(), torch::optim::AdamOptions(config.learning_rate));
  const auto run_dir = runs_dir / config.name;
  fs::create_directories(run_dir);
  checkpoint::write_json_atomic(run_dir / "config.json", config);
  std::ofstream trace(run_dir / "trace.jsonl", std::ios::trunc);

  AutoencoderReport report;
  ae->train();
  const auto n = static_cast<int>(images.size());
  for (int step = 0; step < config.steps; ++step) {
    // Cosine decay to 1% of the base rate.
    const double progress = static_cast<double>(step) / config.steps;
    const double lr = config.learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(M_PI * progress)));
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(step), 11));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(config.batch_size));
    for (auto& i : idx) i = rng.uniform_int(0, n - 1);
    const auto x = all.index_select(0, torch::tensor(idx, torch::kInt64));
    const auto y = ae->reconstruct(x);
    const auto loss = (y - x).abs().mean() + (y - x).pow(2).mean();
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      fail(ErrorKind::kNumeric, "autoencoder loss became non-finite at step " + std::to_string(step));
    }
    report.losses.push_back(value);
    trace << json{{"step", step}, {"loss", value}, {"lr", lr}, {"elapsed_s", seconds_since(start)}}.dump()
          << '\n';
  }
  ae->eval();

  double scale = 1.0;
  {
    torch::NoGradGuard no_grad;
    const auto z = ae->encode(all.slice(0, 0, std::min<std::int64_t>(all.size(0), 512)));
    scale = z.std().item<double>();
  }
  ae->mark_trained(scale);

  std::vector<Image> holdout;
  for (auto seed : dataset::eval_seeds(config.holdout_size)) {
    holdout.push_back(facesynth::generate(seed, dataset::default_tier(seed)).image);
  }
  report.holdout_psnr = reconstruction_psnr(ae, holdout);
  report.latent_scale = scale;
  report.checkpoint = run_dir / "checkpoints" / ("step-" + std::to_string(config.steps));
  report.seconds = seconds_since(start);
  save_autoencoder(ae, report.checkpoint,
                   {{"run", config.name},
                    {"step", config.steps},
                    {"seed", config.seed},
                    {"train_config", config},
                    {"metrics", {{"holdout_psnr_db", report.holdout_psnr},
                                 {"final_loss", report.losses.back()},
                                 {"elapsed_s", report.seconds}}}});
  return report;
}

std::string TrainConfig::run_name() const {
  return name.empty() ? "shmt-h" + std::to_string(model.texture_level) : name;
}

void TrainConfig::validate() const {
  model.validate();
  degrade.validate();
  require(train_size > 0, "train_size must be positive");
  require(steps >= 0, "steps must be non-negative");
  require(batch_size > 0, "batch_size must be positive");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(ema_decay >= 0.0 && ema_decay < 1.0, "ema_decay must lie in [0,1)");
  require(checkpoint_every >= 0 && sample_every >= 0, "checkpoint/sample intervals must be >= 0");
  require(sample_steps >= 1, "sample_steps must be positive");
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"name", c.run_name()},
       {"dataset", c.dataset.string()},
       {"train_size", c.train_size},
       {"autoencoder", c.autoencoder.string()},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"ema_decay", c.ema_decay},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"sample_every", c.sample_every},
       {"sample_steps", c.sample_steps},
       {"degrade", c.degrade},
       {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
  c.name = j.value("name", c.name);
  c.dataset = j.value("dataset", c.dataset.string());
  c.train_size = j.value("train_size", c.train_size);
  c.autoencoder = j.value("autoencoder", c.autoencoder.string());
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.sample_every = j.value("sample_every", c.sample_every);
  c.sample_steps = j.value("sample_steps", c.sample_steps);
  if (j.contains("degrade")) c.degrade = j.at("degrade").get<degrade::DegradeParams>();
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  c.validate();
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const dataset::Dataset> data, Providers providers,
                 diffusion::Autoencoder autoencoder)
    : config_(std::move(config)),
      data_(std::move(data)),
      providers_(std::move(providers)),
      model_([&] {
        config_.validate();
        autoencoder->require_trained(config_.allow_untrained_autoencoder);
        torch::manual_seed(derive_seed(config_.seed, 0x1417));
        return ShmtModel(config_.model, autoencoder);
      }()) {
  require(data_ && data_->size() > 0, "training data is empty");
  optimizer_ = std::make_unique<torch::optim::Adam>(model_.trainable_parameters(),
                                                    torch::optim::AdamOptions(config_.learning_rate));
  autoencoder_hash_ = model_.autoencoder_hash();
  if (config_.ema_decay > 0.0) {
    for (const auto& p : model_.trainable_parameters()) ema_.push_back(p.detach().clone());
  }
  build_cache();
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const dataset::Dataset> data, Providers providers,
                 const fs::path& checkpoint)
    : config_(std::move(config)),
      data_(std::move(data)),
      providers_(std::move(providers)),
      model_(ShmtModel::load(checkpoint)) {
  config_.validate();
  if (model_.texture_level() != config_.model.texture_level) {
    fail(ErrorKind::kValidation, "checkpoint texture level does not match the training config");
  }
  config_.model = model_.config();
  require(data_ && data_->size() > 0, "training data is empty");
  const auto dir = resolve_checkpoint(checkpoint);
  step_ = read_manifest(dir).value("step", 0);
  // the model files hold the averaged weights; training resumes from the raw ones
  auto params = model_.trainable_parameters();
  if (fs::exists(dir / kTrainState)) {
    std::vector<torch::Tensor> state;
    torch::load(state, (dir / kTrainState).string());
    const auto n = params.size();
    if (state.size() != n && state.size() != 2 * n) {
      fail(ErrorKind::kValidation, "train state in " + dir.string() + " does not match the model");
    }
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; ++i) params[i].copy_(state[i]);
    if (config_.ema_decay > 0.0) {
      for (std::size_t i = 0; i < n; ++i) ema_.push_back(state.size() == 2 * n ? state[n + i].clone() : state[i].clone());
    }
  } else if (config_.ema_decay > 0.0) {
    for (const auto& p : params) ema_.push_back(p.detach().clone());
  }
  optimizer_ = std::make_unique<torch::optim::Adam>(model_.trainable_parameters(),
                                                    torch::optim::AdamOptions(config_.learning_rate));
  autoencoder_hash_ = model_.autoencoder_hash();
  build_cache();
}

void Trainer::build_cache() {
  torch::NoGradGuard no_grad;
  auto& ae = model_.autoencoder();
  const auto& records = data_->records();
  cache_.resize(records.size());
  std::vector<PreparedFace> faces(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    faces[i] = prepare_face(records[i], providers_, config_.model.texture_level);
  }
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < faces.size(); i += kChunk) {
    const auto end = std::min(faces.size(), i + kChunk);
    std::vector<Image> fg, bg;
    for (std::size_t k = i; k < end; ++k) {
      fg.push_back(faces[k].image);
      bg.push_back(faces[k].background);
    }
    const auto z0 = ae->encode(stack(fg));
    const auto zb = ae->encode(stack(bg));
    for (std::size_t k = i; k < end; ++k) {
      auto& c = cache_[k];
      c.z0 = z0[static_cast<std::int64_t>(k - i)].clone();
      c.z_bg = zb[static_cast<std::int64_t>(k - i)].clone();
      c.content = to_tensor(faces[k].content);
      c.latent_mask = to_tensor(latent_foreground(faces[k].latent_labels));
      c.foreground = faces[k].foreground;
      c.mask = faces[k].mask;
    }
  }
}

Trainer::Batch Trainer::make_batch(int step) {
  const auto s = static_cast<std::uint64_t>(step);
  Rng rng(derive_seed(config_.seed, s, 1));
  const int n = static_cast<int>(cache_.size());
  const int T = model_.schedule().max_timestep();
  std::vector<torch::Tensor> z0, zb, content, mask;
  std::vector<Image> makeup;
  std::vector<std::int64_t> ts;
  for (int b = 0; b < config_.batch_size; ++b) {
    const auto& c = cache_[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    z0.push_back(c.z0);
    zb.push_back(c.z_bg);
    content.push_back(c.content);
    mask.push_back(c.latent_mask);
    ts.push_back(rng.uniform_int(1, T));
    auto params = config_.degrade;
    params.seed = derive_seed(config_.seed, s, 100 + static_cast<std::uint64_t>(b));
    auto rep = degrade::degrade(c.foreground, c.mask, params);
    makeup.push_back(multiply(rep.image, rep.mask));
  }
  Batch batch;
  batch.z0 = torch::stack(z0);
  batch.z_bg = torch::stack(zb);
  batch.content = torch::stack(content);
  batch.latent_mask = torch::stack(mask);
  batch.t = torch::tensor(ts, torch::kInt64);
  {
    torch::NoGradGuard no_grad;
    batch.z_m = model_.autoencoder()->encode(stack(makeup));
  }
  auto gen = generator(derive_seed(config_.seed, s, 2));
  batch.eps = torch::randn(batch.z0.sizes(), gen, torch::kFloat32);
  return batch;
}

std::pair<torch::Tensor, StepStats> Trainer::forward(int step) {
  const auto b = make_batch(step);
  const auto z_t = diffusion::q_sample(model_.schedule(), b.z0, b.t, b.eps);
  const auto inputs = model_.prepare_inputs(b.content, b.z_bg, b.latent_mask);
  const auto state = model_.align(inputs, b.z_m, z_t, b.t);
  const auto eps_hat = model_.predict_noise(inputs, state.z_hat, z_t, b.t);
  auto loss = diffusion::noise_loss(eps_hat, b.eps);
  StepStats stats;
  stats.step = step;
  stats.loss = loss.item<double>();
  stats.w_mean = state.w.mean().item<double>();
  stats.t_mean = b.t.to(torch::kFloat64).mean().item<double>();
  return {loss, stats};
}

StepStats Trainer::evaluate(int step) {
  torch::NoGradGuard no_grad;
  model_.train(false);
  return forward(step).second;
}

StepStats Trainer::step() {
  model_.train(true);
  auto [loss, stats] = forward(step_);
  if (!std::isfinite(stats.loss)) {
    fail(ErrorKind::kNumeric, "non-finite loss at step " + std::to_string(step_) +
                                  " (t_mean=" + std::to_string(stats.t_mean) +
                                  ", w_mean=" + std::to_string(stats.w_mean) + ")");
  }
  optimizer_->zero_grad();
  loss.backward();
  optimizer_->step();
  update_ema();
  ++step_;
  return stats;
}

void Trainer::update_ema() {
  if (ema_.empty()) return;
  torch::NoGradGuard no_grad;
  // short warm-up so early checkpoints are not dominated by the init
  const double d = std::min(config_.ema_decay, (1.0 + step_) / (10.0 + step_));
  const auto params = model_.trainable_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ema_[i].mul_(d).add_(params[i].detach(), 1.0 - d);
}

template <typename F>
void Trainer::with_ema(F&& fn) const {
  if (ema_.empty()) {
    fn();
    return;
  }
  torch::NoGradGuard no_grad;
  const auto params = model_.trainable_parameters();
  std::vector<torch::Tensor> raw;
  for (std::size_t i = 0; i < params.size(); ++i) {
    raw.push_back(params[i].detach().clone());
    params[i].copy_(ema_[i]);
  }
  try {
    fn();
  } catch (...) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(raw[i]);
    throw;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(raw[i]);
}

fs::path Trainer::save_checkpoint(const fs::path& run_dir, const json& metrics) const {
  if (model_.autoencoder_hash() != autoencoder_hash_) {
    fail(ErrorKind::kNumeric, "autoencoder weights changed during training");
  }
  const auto dir = run_dir / "checkpoints" / ("step-" + std::to_string(step_));
  const auto config_dump = json(config_).dump();
  with_ema([&] {
    model_.save(dir, {{"run", config_.run_name()},
                      {"step", step_},
                      {"seed", config_.seed},
                      {"ema", !ema_.empty()},
                      {"config_hash", checkpoint::hex(checkpoint::fnv1a(config_dump))},
                      {"train_config", config_},
                      {"metrics", metrics}});
  });
  std::vector<torch::Tensor> state;
  for (const auto& p : model_.trainable_parameters()) state.push_back(p.detach());
  for (const auto& e : ema_) state.push_back(e);
  torch::save(state, (dir / kTrainState).string());
  return dir;
}

namespace {

// Rows of [source | reference | result] for a few held-out faces.
void write_sample_grid(ShmtModel& model, const fs::path& path, int steps, bool allow_untrained) {
  const auto seeds = dataset::eval_seeds(4);
  auto data = dataset::Dataset::synthesize(seeds);
  const auto providers = Providers::ground_truth(data);
  SamplingPlan plan;
  plan.model = &model;
  plan.references.emplace_back();
  for (std::size_t i = 0; i < data.size(); ++i) {
    plan.sources.push_back(&data.at(i));
    plan.references[0].push_back(&data.at((i + 1) % data.size()));
  }
  SampleOptions options;
  options.steps = steps;
  options.allow_untrained = allow_untrained;
  const auto results = run_sampling(plan, providers, options);
  const int s = facesynth::kImageSize;
  Image grid(3, s * static_cast<int>(results.size()), 3 * s);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const Image* tiles[3] = {&data.at(i).image, &data.at((i + 1) % data.size()).image, &results[i].image};
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x) grid.at(c, static_cast<int>(i) * s + y, k * s + x) = tiles[k]->at(c, y, x);
  }
  png::write(path, grid);
}

}  // namespace

TrainReport Trainer::run(const fs::path& runs_dir, const std::function<void(const StepStats&)>& on_step) {
  const auto start = Clock::now();
  TrainReport report;
  report.run_dir = runs_dir / config_.run_name();
  fs::create_directories(report.run_dir / "checkpoints");
  fs::create_directories(report.run_dir / "samples");
  checkpoint::write_json_atomic(report.run_dir / "config.json", config_);
  std::ofstream trace(report.run_dir / "trace.jsonl", step_ == 0 ? std::ios::trunc : std::ios::app);
  if (!trace) fail(ErrorKind::kIo, "cannot write trace in " + report.run_dir.string());

  fs::path last_good;
  const int end = step_ + config_.steps;
  while (step_ < end) {
    StepStats stats;
    try {
      stats = step();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      fail(ErrorKind::kNumeric, std::string(e.what()) + "; last good checkpoint: " +
                                    (last_good.empty() ? std::string("none") : last_good.string()));
    }
    report.losses.push_back(stats.loss);
    trace << json{{"step", stats.step},
                  {"loss", stats.loss},
                  {"w_mean", stats.w_mean},
                  {"t_mean", stats.t_mean},
                  {"elapsed_s", seconds_since(start)}}
                 .dump()
          << '\n';
    if (on_step) on_step(stats);
    const bool last = step_ == end;
    if (last || (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0)) {
      trace.flush();
      json metrics = {{"loss", stats.loss}};
      const auto k = std::min<std::size_t>(100, report.losses.size());
      double tail = 0.0;
      for (std::size_t i = report.losses.size() - k; i < report.losses.size(); ++i) tail += report.losses[i];
      metrics["trailing_loss_mean"] = tail / static_cast<double>(k);
      const auto lead = std::min<std::size_t>(100, report.losses.size());
      double head = 0.0;
      for (std::size_t i = 0; i < lead; ++i) head += report.losses[i];
      metrics["leading_loss_mean"] = head / static_cast<double>(lead);
      metrics["elapsed_s"] = seconds_since(start);
      last_good = save_checkpoint(report.run_dir, metrics);
    }
    if (config_.sample_every > 0 && (step_ % config_.sample_every == 0 || last)) {
      with_ema([&] {
        write_sample_grid(model_, report.run_dir / "samples" / ("step-" + std::to_string(step_) + ".png"),
                          config_.sample_steps, config_.allow_untrained_autoencoder);
      });
    }
  }
  if (last_good.empty()) last_good = save_checkpoint(report.run_dir);
  report.checkpoint = last_good;
  report.seconds = seconds_since(start);
  return report;
}

TrainReport train(const TrainConfig& config, const fs::path& runs_dir,
                  const std::function<void(const StepStats&)>& on_step) {
  config.validate();
  const auto data = training_data(config.dataset, config.train_size);
  auto providers = Providers::ground_truth(*data);
  diffusion::Autoencoder ae = config.autoencoder.empty()
                                  ? load_autoencoder(runs_dir / "autoencoder")
                                  : load_autoencoder(config.autoencoder);
  Trainer trainer(config, data, providers, ae);
  return trainer.run(runs_dir, on_step);
}

}  // namespace shmt::pipeline
