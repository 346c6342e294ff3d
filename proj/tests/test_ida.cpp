#include <cmath>

#include <torch/torch.h>

#include "doctest.h"
#include "shmt/checkpoint.hpp"
#include "shmt/conditioning.hpp"
#include "shmt/error.hpp"
#include "shmt/facesynth.hpp"
#include "shmt/ida.hpp"

using namespace shmt;
using namespace shmt::ida;

namespace {

torch::Generator gen(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

double max_abs(const torch::Tensor& a, const torch::Tensor& b) {
  return (a - b).abs().max().item<double>();
}

torch::Tensor f64(std::initializer_list<double> values, std::vector<std::int64_t> shape) {
  return torch::tensor(std::vector<double>(values), torch::kFloat64).view(shape);
}

}  // namespace

TEST_CASE("correlation: hand cosine on a two-pixel toy") {
  const auto f_c = f64({1, 0}, {1, 1, 2});
  const auto f_m = f64({1, 0, 0, 2}, {1, 2, 2});
  const auto m = correlation(f_c, f_m);
  REQUIRE(m.sizes() == torch::IntArrayRef({1, 1, 2}));
  CHECK(m[0][0][0].item<double>() == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(m[0][0][1].item<double>() == 0.0);
}

TEST_CASE("correlation: identical distinct unit features give a unit diagonal") {
  auto f = torch::randn({2, 9, 5}, gen(1), torch::kFloat64);
  f = f / f.norm(2, -1, true);
  const auto m = correlation(f, f);
  CHECK(max_abs(torch::diagonal(m, 0, 1, 2), torch::ones({2, 9}, torch::kFloat64)) < 1e-7);
}

TEST_CASE("correlation: bounded and scale invariant") {
  const auto f_c = torch::randn({2, 16, 8}, gen(2), torch::kFloat64);
  const auto f_m = torch::randn({2, 12, 8}, gen(3), torch::kFloat64);
  const auto m = correlation(f_c, f_m);
  CHECK(m.abs().max().item<double>() <= 1.0);
  for (double lambda : {3.0, 0.5, 250.0}) {
    const double d = max_abs(correlation(f_c, lambda * f_m), m);
    CHECK(d <= 1e-7);
  }
  CHECK_THROWS_AS(correlation(f_c, torch::randn({2, 12, 7}, torch::kFloat64)), Error);
  // zero features stay finite
  const auto zeros = torch::zeros({1, 3, 8}, torch::kFloat64);
  CHECK(torch::isfinite(correlation(zeros, zeros)).all().item<bool>());
}

TEST_CASE("deform: softmax rows sum to one for several temperatures") {
  const auto m = torch::rand({3, 20, 30}, gen(4)) * 2 - 1;
  for (double tau : {0.01, 1.0, 100.0}) {
    const auto rows = deform_weights(m, tau).sum(-1);
    CHECK(max_abs(rows, torch::ones_like(rows)) <= 1e-5);
  }
  CHECK_THROWS_AS(deform_weights(m, 0.0), Error);
  CHECK_THROWS_AS(deform_weights(m, -1.0), Error);
  CHECK_THROWS_AS(deform(m, torch::rand({3, 20, 30}), 0.0), Error);
}

TEST_CASE("deform: toy identity correlation at tau 0.01") {
  const auto m = f64({1, 0, 0, 1}, {1, 2, 2});
  const auto z = f64({0.3, -1.2, 2.0, 0.5}, {1, 2, 2});
  // softmax([100, 0]) = [1/(1+e^-100), e^-100/(1+e^-100)]
  const double keep = 1.0 / (1.0 + std::exp(-100.0));
  const auto out = deform(m, z, 0.01);
  auto zz = z.accessor<double, 3>();
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 2; ++c) {
      const double oracle = keep * zz[0][i][c] + (1.0 - keep) * zz[0][1 - i][c];
      CHECK(out[0][i][c].item<double>() == doctest::Approx(oracle).epsilon(1e-12));
    }
  CHECK(max_abs(out, z) <= 1e-4);
}

TEST_CASE("deform: uniform and one-hot limits") {
  const auto z = torch::randn({1, 5, 3}, gen(5), torch::kFloat64);
  const auto uniform = deform(torch::zeros({1, 4, 5}, torch::kFloat64), z, 1.0);
  for (int i = 0; i < 4; ++i) CHECK(max_abs(uniform[0][i], z[0].mean(0)) < 1e-12);

  auto onehot = torch::zeros({1, 3, 5}, torch::kFloat64);
  const int argmax[3] = {4, 0, 2};
  for (int i = 0; i < 3; ++i) onehot[0][i][argmax[i]] = 1.0;
  const auto sharp = deform(onehot, z, 1e-3);
  for (int i = 0; i < 3; ++i) CHECK(max_abs(sharp[0][i], z[0][argmax[i]]) < 1e-12);
}

TEST_CASE("deform: permuting makeup pixels leaves the warp unchanged") {
  const auto f_c = torch::randn({1, 10, 6}, gen(6), torch::kFloat64);
  const auto f_m = torch::randn({1, 10, 6}, gen(7), torch::kFloat64);
  const auto z = torch::randn({1, 10, 4}, gen(8), torch::kFloat64);
  const auto perm = torch::randperm(10, gen(9), torch::kInt64);
  const auto a = deform(correlation(f_c, f_m), z, 0.05);
  const auto b = deform(correlation(f_c, f_m.index_select(1, perm)), z.index_select(1, perm), 0.05);
  CHECK(max_abs(a, b) < 1e-12);
}

TEST_CASE("mix endpoints are exact") {
  const auto a = torch::randn({2, 8, 4, 4}, gen(10));
  const auto b = torch::randn({2, 8, 4, 4}, gen(11));
  CHECK(torch::equal(mix(a, b, torch::zeros({2})), a));
  CHECK(torch::equal(mix(a, b, torch::ones({2})), b));
  const auto half = mix(torch::zeros({2, 3}), torch::full({2, 3}, 2.0), torch::full({2}, 0.5));
  CHECK(torch::equal(half, torch::ones({2, 3})));
  CHECK_THROWS_AS(mix(a, b, torch::zeros({3})), Error);
}

TEST_CASE("finite-difference gradient through correlation, deform, mix and projection") {
  torch::manual_seed(12);
  IdaConfig config;
  config.content_channels = 3;
  config.latent_channels = 2;
  config.condition_channels = 2;
  IdaModule module(config);
  module->to(torch::kFloat64);

  // 4-pixel toy laid out as a 2x2 map.
  auto f_c = torch::randn({1, 4, 3}, gen(13), torch::kFloat64).requires_grad_(true);
  auto f_m = torch::randn({1, 4, 3}, gen(14), torch::kFloat64).requires_grad_(true);
  auto f_t = torch::randn({1, 4, 3}, gen(15), torch::kFloat64).requires_grad_(true);
  auto z_m = torch::randn({1, 4, 2}, gen(16), torch::kFloat64).requires_grad_(true);
  auto w = torch::full({1}, 0.3, torch::kFloat64).requires_grad_(true);
  const auto content = torch::randn({1, 3, 2, 2}, gen(17), torch::kFloat64);
  const auto probe = torch::randn({1, 2, 2, 2}, gen(18), torch::kFloat64);
  const double tau = 0.1;

  auto loss_fn = [&] {
    const auto z1 = deform(correlation(f_c, f_m), z_m, tau);
    const auto z2 = deform(correlation(f_t, f_m), z_m, tau);
    const auto z_hat = from_pixels(mix(z1, z2, w), 2, 2);
    return (module->project(z_hat, content) * probe).sum();
  };
  std::vector<torch::Tensor> inputs{f_c, f_m, f_t, z_m, w};
  for (auto& p : module->parameters()) inputs.push_back(p);
  loss_fn().backward();

  double worst = 0.0;
  const double h = 1e-6;
  torch::NoGradGuard no_grad;
  for (auto& p : inputs) {
    if (!p.grad().defined()) continue;
    auto flat = p.view(-1);
    const auto grad = p.grad().reshape(-1);
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = loss_fn().item<double>();
      flat[i] = orig - h;
      const double down = loss_fn().item<double>();
      flat[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double g = grad[i].item<double>();
      worst = std::max(worst, std::abs(fd - g) / std::max(1e-6, std::abs(fd) + std::abs(g)));
    }
  }
  MESSAGE("worst relative gradient error " << worst);
  CHECK(worst <= 1e-3);
}

TEST_CASE("module: shapes, mix weight bounds and fixed-weight endpoints") {
  torch::manual_seed(19);
  IdaConfig config;
  IdaModule module(config);
  torch::NoGradGuard no_grad;
  const auto content = torch::randn({2, config.content_channels, 16, 16}, gen(20));
  const auto z_m = torch::randn({2, 8, 16, 16}, gen(21));
  const auto z_t = torch::randn({2, 8, 16, 16}, gen(22));
  const auto t = torch::tensor({1, 1000}, torch::kInt64);
  const auto f_c = module->encode_content(content);
  CHECK(f_c.sizes() == torch::IntArrayRef({2, 64, 16, 16}));
  CHECK(max_abs(module->encode_content(content), f_c) == 0.0);
  CHECK(module->encode_makeup(z_m).sizes() == torch::IntArrayRef({2, 64, 16, 16}));
  CHECK_THROWS_AS(module->encode_content(torch::randn({2, 5, 16, 16})), Error);

  const auto all_t = torch::arange(1, 1001, torch::kInt64);
  const auto w = module->mix_weight(all_t);
  CHECK(w.min().item<double>() > 0.0);
  CHECK(w.max().item<double>() < 1.0);
  CHECK(max_abs(module->mix_weight(all_t), w) == 0.0);

  const auto state = module->align(f_c, z_m, z_t, t);
  CHECK(state.z_hat.sizes() == z_m.sizes());
  CHECK(state.correlation.sizes() == torch::IntArrayRef({2, 256, 256}));
  const auto rows = state.attention.sum(-1);
  CHECK(max_abs(rows, torch::ones_like(rows)) <= 1e-5);
  CHECK(torch::equal(state.z_hat, mix(state.z_prime, state.z_double_prime, state.w)));
  CHECK_THROWS_AS(module->align(f_c, z_m, torch::Tensor(), t), Error);
  CHECK_THROWS_AS(module->align(f_c, torch::randn({2, 8, 8, 8}), torch::randn({2, 8, 8, 8}), t), Error);

  for (double fixed : {0.0, 1.0}) {
    auto c = config;
    c.mix_mode = MixMode::kFixed;
    c.fixed_w = fixed;
    torch::manual_seed(19);
    IdaModule frozen(c);
    const auto s = frozen->align(frozen->encode_content(content), z_m, z_t, t);
    CHECK(torch::equal(s.z_hat, fixed == 0.0 ? s.z_prime : s.z_double_prime));
  }

  const auto cond = module->project(torch::zeros({1, 8, 16, 16}), torch::zeros({1, config.content_channels, 16, 16}));
  CHECK(cond.sizes() == torch::IntArrayRef({1, 32, 16, 16}));
  const auto bias = module->named_parameters()["projection.bias"];
  CHECK(max_abs(cond, bias.view({1, 32, 1, 1}).expand({1, 32, 16, 16})) == 0.0);
  CHECK_THROWS_AS(module->project(torch::zeros({1, 8, 16, 16}), torch::zeros({1, config.content_channels, 8, 8})), Error);
}

TEST_CASE("module: parameter budget") {
  IdaModule desk(IdaConfig{});
  IdaModule paper(paper_scale_config());
  const auto n_desk = checkpoint::parameter_count(*desk);
  const auto n_paper = checkpoint::parameter_count(*paper);
  MESSAGE("alignment parameters: desk " << n_desk << ", paper-scale " << n_paper);
  CHECK(n_paper <= 11'000'000u);
  CHECK(n_desk * 20 < n_paper);
}

TEST_CASE("module: content features of different shape maps differ at init") {
  torch::NoGradGuard no_grad;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    torch::manual_seed(seed);
    IdaConfig config;
    config.content_channels = pipeline::content_channels(4);
    IdaModule module(config);
    std::vector<torch::Tensor> feats;
    for (std::uint64_t face : {2 * seed, 2 * seed + 101}) {
      const auto s = facesynth::generate(face, facesynth::Complexity::kSimple);
      const auto content = pipeline::content_map(s.shape_map, s.foreground, 4);
      feats.push_back(module->encode_content(pipeline::to_tensor(content).unsqueeze(0)));
    }
    const double diff = (feats[0] - feats[1]).abs().mean().item<double>();
    const double scale = feats[0].abs().mean().item<double>();
    CHECK(diff > 0.01 * scale);
  }
}
