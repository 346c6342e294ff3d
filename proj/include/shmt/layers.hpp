#pragma once

#include <torch/torch.h>

namespace shmt::nn {

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1);
torch::nn::Conv2d conv1x1(int in, int out);
torch::nn::GroupNorm group_norm(int channels);

// GroupNorm/SiLU/conv twice with a residual path. When `embed_dim` > 0 a
// projected embedding is added after the first convolution.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in, int out, int embed_dim = 0);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embedding = {});

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear embed_{nullptr};
};
TORCH_MODULE(ResBlock);

}  // namespace shmt::nn
