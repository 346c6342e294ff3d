#include "shmt/schedule.hpp"

#include <cmath>

#include "shmt/error.hpp"

namespace shmt::diffusion {

NoiseSchedule::NoiseSchedule(int max_timestep, double beta_start, double beta_end)
    : max_timestep_(max_timestep) {
  require(max_timestep >= 1, "schedule needs T >= 1");
  require(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0,
          "schedule needs 0 < beta_start < beta_end < 1");
  betas_.assign(static_cast<std::size_t>(max_timestep) + 1, 0.0);
  alpha_bars_.assign(static_cast<std::size_t>(max_timestep) + 1, 1.0);
  for (int t = 1; t <= max_timestep; ++t) {
    const double frac = max_timestep == 1 ? 0.0 : static_cast<double>(t - 1) / (max_timestep - 1);
    betas_[t] = beta_start + (beta_end - beta_start) * frac;
    alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - betas_[t]);
    if (!(alpha_bars_[t] < alpha_bars_[t - 1])) {
      fail(ErrorKind::kNumeric, "alpha_bar is not strictly decreasing at t=" + std::to_string(t));
    }
  }
}

void NoiseSchedule::require_timestep(int t) const {
  if (t < 1 || t > max_timestep_) {
    fail(ErrorKind::kValidation, "timestep " + std::to_string(t) + " outside [1, " +
                                     std::to_string(max_timestep_) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  require_timestep(t);
  return betas_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  require_timestep(t);
  return alpha_bars_[t];
}

std::vector<int> NoiseSchedule::ddim_timesteps(int steps) const {
  require(steps >= 1 && steps <= max_timestep_, "DDIM step count must lie in [1, T]");
  const int stride = max_timestep_ / steps;
  std::vector<int> out(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) out[k] = 1 + k * stride;
  return out;
}

torch::Tensor q_sample(double alpha_bar, const torch::Tensor& z0, const torch::Tensor& eps) {
  require(z0.sizes() == eps.sizes(), "q_sample: noise shape does not match z_0");
  return std::sqrt(alpha_bar) * z0 + std::sqrt(1.0 - alpha_bar) * eps;
}

torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& z0, int t,
                       const torch::Tensor& eps) {
  schedule.require_timestep(t);
  return q_sample(schedule.alpha_bar(t), z0, eps);
}

torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& z0,
                       const torch::Tensor& t, const torch::Tensor& eps) {
  require(z0.sizes() == eps.sizes(), "q_sample: noise shape does not match z_0");
  require(t.dim() == 1 && t.size(0) == z0.size(0), "q_sample: one timestep per sample");
  std::vector<double> a(static_cast<std::size_t>(t.size(0)));
  auto acc = t.accessor<std::int64_t, 1>();
  for (std::int64_t i = 0; i < t.size(0); ++i) {
    schedule.require_timestep(static_cast<int>(acc[i]));
    a[i] = schedule.alpha_bar(static_cast<int>(acc[i]));
  }
  std::vector<std::int64_t> shape(static_cast<std::size_t>(z0.dim()), 1);
  shape[0] = z0.size(0);
  auto ab = torch::tensor(a, torch::TensorOptions().dtype(torch::kFloat64)).to(z0.dtype()).view(shape);
  return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps;
}

torch::Tensor noise_loss(const torch::Tensor& predicted, const torch::Tensor& target) {
  require(predicted.sizes() == target.sizes(), "noise_loss: shape mismatch");
  return (predicted - target).pow(2).mean();
}

torch::Tensor ddim_step(const NoiseSchedule& schedule, const torch::Tensor& z_t,
                        const torch::Tensor& eps_hat, int t, int t_prev) {
  schedule.require_timestep(t);
  require(t_prev >= 0 && t_prev < t, "DDIM step must move to an earlier timestep");
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const auto z0_hat = (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  return std::sqrt(ab_prev) * z0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
}

torch::Tensor ddim_sample(const NoiseSchedule& schedule, const torch::Tensor& z_T,
                          const NoisePredictor& predict, const std::vector<int>& timesteps) {
  require(!timesteps.empty(), "DDIM needs at least one timestep");
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    schedule.require_timestep(timesteps[i]);
    if (i > 0 && timesteps[i] <= timesteps[i - 1]) {
      fail(ErrorKind::kValidation, "DDIM timesteps must be strictly increasing");
    }
  }
  torch::Tensor z = z_T;
  for (std::size_t i = timesteps.size(); i-- > 0;) {
    const int t = timesteps[i];
    const int t_prev = i > 0 ? timesteps[i - 1] : 0;
    z = ddim_step(schedule, z, predict(z, t), t, t_prev);
  }
  return z;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
  require(dim % 2 == 0, "timestep embedding width must be even");
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) *
                          torch::arange(half, torch::TensorOptions().dtype(torch::kFloat32)) / half);
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

}  // namespace shmt::diffusion
