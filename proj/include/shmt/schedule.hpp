#pragma once

// Noise schedule, forward noising and the deterministic DDIM sampler.

#include <functional>
#include <vector>

#include <torch/torch.h>

namespace shmt::diffusion {

class NoiseSchedule {
 public:
  // Linear beta schedule over t = 1..T.
  NoiseSchedule(int max_timestep = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

  int max_timestep() const { return max_timestep_; }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  // Cumulative product; alpha_bar(0) == 1.
  double alpha_bar(int t) const;

  // Evenly spaced sub-sequence 1, 1+s, 1+2s, ... with s = T / steps.
  std::vector<int> ddim_timesteps(int steps) const;

  void require_timestep(int t) const;

 private:
  int max_timestep_;
  std::vector<double> betas_;       // index t, betas_[0] unused
  std::vector<double> alpha_bars_;  // index t, alpha_bars_[0] == 1
};

// z_t = sqrt(alpha_bar) z_0 + sqrt(1 - alpha_bar) eps.
torch::Tensor q_sample(double alpha_bar, const torch::Tensor& z0, const torch::Tensor& eps);
torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& z0, int t,
                       const torch::Tensor& eps);
// Per-sample timesteps, `t` is an int64 tensor of shape (B).
torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& z0,
                       const torch::Tensor& t, const torch::Tensor& eps);

// Mean over all elements of (prediction - target)^2.
torch::Tensor noise_loss(const torch::Tensor& predicted, const torch::Tensor& target);

// One eta = 0 update from t to t_prev (t_prev may be 0). The predicted z_0
// is not clamped.
torch::Tensor ddim_step(const NoiseSchedule& schedule, const torch::Tensor& z_t,
                        const torch::Tensor& eps_hat, int t, int t_prev);

using NoisePredictor = std::function<torch::Tensor(const torch::Tensor& z_t, int t)>;

// Runs the timesteps from last to first, then a final step to t = 0.
// `timesteps` must be strictly increasing within [1, T].
torch::Tensor ddim_sample(const NoiseSchedule& schedule, const torch::Tensor& z_T,
                          const NoisePredictor& predict, const std::vector<int>& timesteps);

// Sinusoidal embedding of integer timesteps, shape (B, dim).
torch::Tensor timestep_embedding(const torch::Tensor& t, int dim);

}  // namespace shmt::diffusion
