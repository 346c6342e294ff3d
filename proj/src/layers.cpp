#include "shmt/layers.hpp"

namespace shmt::nn {

namespace F = torch::nn::functional;

torch::nn::Conv2d conv3x3(int in, int out, int stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1x1(int in, int out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

torch::nn::GroupNorm group_norm(int channels) {
  int groups = 8;
  while (channels % groups != 0) groups /= 2;
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, channels));
}

ResBlockImpl::ResBlockImpl(int in, int out, int embed_dim) {
  norm1_ = register_module("norm1", group_norm(in));
  conv1_ = register_module("conv1", conv3x3(in, out));
  norm2_ = register_module("norm2", group_norm(out));
  conv2_ = register_module("conv2", conv3x3(out, out));
  if (in != out) skip_ = register_module("skip", conv1x1(in, out));
  if (embed_dim > 0) embed_ = register_module("embed", torch::nn::Linear(embed_dim, out));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& embedding) {
  auto h = conv1_(F::silu(norm1_(x)));
  if (embed_ && embedding.defined()) h = h + embed_(F::silu(embedding)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_(F::silu(norm2_(h)));
  return (skip_ ? skip_(x) : x) + h;
}

}  // namespace shmt::nn
