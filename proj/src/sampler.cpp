#include "shmt/sampler.hpp"

#include "shmt/checkpoint.hpp"
#include "shmt/error.hpp"
#include "shmt/ida.hpp"

namespace shmt::pipeline {

namespace F = torch::nn::functional;

std::string_view to_string(InterpolationMode mode) {
  switch (mode) {
    case InterpolationMode::kGlobal: return "global";
    case InterpolationMode::kLocal: return "local";
    case InterpolationMode::kSkin: return "skin";
  }
  return "global";
}

InterpolationMode interpolation_mode_from_string(std::string_view s) {
  if (s == "global") return InterpolationMode::kGlobal;
  if (s == "local") return InterpolationMode::kLocal;
  if (s == "skin") return InterpolationMode::kSkin;
  fail(ErrorKind::kValidation, "unknown interpolation mode '" + std::string(s) + "'");
}

void InterpolationSpec::validate(std::size_t references) const {
  if (!(beta >= 0.0 && beta <= 1.0)) fail(ErrorKind::kValidation, "beta must lie in [0,1]");
  if (references != static_cast<std::size_t>(reference_count())) {
    fail(ErrorKind::kValidation, std::string(to_string(mode)) + " interpolation needs " +
                                     std::to_string(reference_count()) + " reference(s)");
  }
  if (mode == InterpolationMode::kLocal && !area && !area_mask) {
    fail(ErrorKind::kValidation, "local interpolation needs an area (lip, eye or face)");
  }
  if (area_mask) {
    require(area_mask->channels() == 1 && area_mask->height() == kLatentSize &&
                area_mask->width() == kLatentSize,
            "area mask must be 1x16x16");
  }
}

torch::Tensor blend_makeup(const InterpolationSpec& spec, const torch::Tensor& z_first,
                           const torch::Tensor& z_second, const torch::Tensor& z_self,
                           const torch::Tensor& area_mask) {
  const double b = spec.beta;
  switch (spec.mode) {
    case InterpolationMode::kGlobal:
      return (1.0 - b) * z_first + b * z_second;
    case InterpolationMode::kLocal:
      return ((1.0 - b) * z_first + b * z_second) * area_mask + z_self * (1.0 - area_mask);
    case InterpolationMode::kSkin:
      return ((1.0 - b) * z_self + b * z_first) * area_mask + z_self * (1.0 - area_mask);
  }
  return z_first;
}

Image composite(const Image& foreground, const Image& source, const Image& mask) {
  require(foreground.same_shape(source), "composite: image shapes differ");
  require(mask.channels() == 1 && mask.height() == source.height() && mask.width() == source.width(),
          "composite: mask shape differs");
  Image out = source;
  const auto n = mask.plane_size();
  for (int c = 0; c < out.channels(); ++c) {
    auto dst = out.plane(c);
    auto src = foreground.plane(c);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask.pixels()[i] > 0.5f) dst[i] = src[i];
    }
  }
  return out;
}

namespace {

struct ModelSide {
  ShmtModel* model = nullptr;
  std::vector<PreparedFace> sources;
  DenoiseInputs inputs;
};

struct Prepared {
  std::vector<ModelSide> sides;
  std::vector<torch::Tensor> z_refs;  // one per reference slot
  std::vector<torch::Tensor> ref_foregrounds;
  torch::Tensor z_self;
  torch::Tensor area_mask;
};

torch::Tensor foregrounds(const std::vector<PreparedFace>& faces) {
  std::vector<Image> images;
  for (const auto& f : faces) images.push_back(f.foreground);
  return stack(images);
}

void check_pairing(ShmtModel& a, ShmtModel& b) {
  if (a.latent_channels() != b.latent_channels()) {
    fail(ErrorKind::kValidation, "staggered models have incompatible latent shapes");
  }
  if (a.autoencoder_hash() != b.autoencoder_hash()) {
    fail(ErrorKind::kValidation, "staggered models were trained against different autoencoders");
  }
  if (a.schedule().max_timestep() != b.schedule().max_timestep()) {
    fail(ErrorKind::kValidation, "staggered models use different noise schedules");
  }
  if (a.texture_level() == b.texture_level()) {
    fail(ErrorKind::kValidation, "staggering needs two models trained at different texture levels");
  }
}

Prepared prepare(const SamplingPlan& plan, const Providers& providers, const SampleOptions& options) {
  require(plan.model != nullptr, "sampling needs a model");
  const std::size_t batch = plan.sources.size();
  require(batch > 0, "sampling needs at least one source");
  require(!plan.references.empty(), "sampling needs a reference");
  for (const auto& slot : plan.references) require(slot.size() == batch, "one reference per source and slot");
  if (plan.interpolation) {
    plan.interpolation->validate(plan.references.size());
  } else {
    require(plan.references.size() == 1, "plain transfer takes exactly one reference");
  }
  require(plan.seeds.empty() || plan.seeds.size() == batch, "one seed per source");

  auto& ae = plan.model->autoencoder();
  ae->require_trained(options.allow_untrained);
  if (plan.second_model) check_pairing(*plan.model, *plan.second_model);

  Prepared p;
  std::vector<ShmtModel*> models{plan.model};
  if (plan.second_model) models.push_back(plan.second_model);
  for (auto* m : models) {
    ModelSide side;
    side.model = m;
    for (const auto* src : plan.sources) side.sources.push_back(prepare_face(*src, providers, m->texture_level()));
    p.sides.push_back(std::move(side));
  }
  const auto& base = p.sides.front().sources;
  std::vector<Image> bgs, masks, contents;
  for (const auto& s : base) {
    bgs.push_back(s.background);
    masks.push_back(latent_foreground(s.latent_labels));
  }
  const auto z_bg = ae->encode(stack(bgs));
  const auto latent_mask = stack(masks);
  for (auto& side : p.sides) {
    contents.clear();
    for (const auto& s : side.sources) contents.push_back(s.content);
    side.inputs = side.model->prepare_inputs(stack(contents), z_bg, latent_mask);
  }

  for (const auto& slot : plan.references) {
    std::vector<PreparedFace> refs;
    for (const auto* r : slot) refs.push_back(prepare_face(*r, providers, plan.model->texture_level()));
    auto fg = foregrounds(refs);
    p.z_refs.push_back(ae->encode(fg));
    p.ref_foregrounds.push_back(fg);
  }

  if (plan.interpolation && plan.interpolation->mode != InterpolationMode::kGlobal) {
    const auto& spec = *plan.interpolation;
    p.z_self = ae->encode(foregrounds(base));
    std::vector<Image> area;
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (spec.area_mask) {
        area.push_back(*spec.area_mask);
        continue;
      }
      if (!base[i].has_regions) {
        fail(ErrorKind::kValidation, std::string(to_string(spec.mode)) +
                                         " interpolation needs region metadata for source '" +
                                         plan.sources[i]->id + "'");
      }
      const auto region = spec.mode == InterpolationMode::kSkin ? facesynth::Region::kFace : *spec.area;
      area.push_back(latent_region(base[i].latent_labels, region));
    }
    p.area_mask = stack(area);
  }
  return p;
}

// z_hat for one model side at (z_t, t); also returns the first alignment.
torch::Tensor makeup_condition(const SamplingPlan& plan, Prepared& p, ModelSide& side,
                               const torch::Tensor& z_t, const torch::Tensor& t,
                               ida::AlignmentState* first) {
  std::vector<torch::Tensor> z_hats;
  for (std::size_t k = 0; k < p.z_refs.size(); ++k) {
    auto state = side.model->align(side.inputs, p.z_refs[k], z_t, t);
    z_hats.push_back(state.z_hat);
    if (k == 0 && first) *first = std::move(state);
  }
  if (!plan.interpolation) return z_hats.front();
  const auto& spec = *plan.interpolation;
  torch::Tensor z_self;
  if (spec.mode != InterpolationMode::kGlobal) {
    z_self = side.model->align(side.inputs, p.z_self, z_t, t).z_hat;
  }
  const auto second = z_hats.size() > 1 ? z_hats[1] : torch::Tensor();
  return blend_makeup(spec, z_hats.front(), second, z_self, p.area_mask);
}

torch::Tensor initial_noise(const SamplingPlan& plan, const SampleOptions& options, int channels) {
  std::vector<torch::Tensor> parts;
  for (std::size_t i = 0; i < plan.sources.size(); ++i) {
    const auto seed = plan.seeds.empty() ? options.seed : plan.seeds[i];
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    parts.push_back(torch::randn({channels, kLatentSize, kLatentSize}, gen, torch::kFloat32));
  }
  return torch::stack(parts);
}

}  // namespace

std::vector<TransferResult> run_sampling(const SamplingPlan& plan, const Providers& providers,
                                         const SampleOptions& options) {
  torch::NoGradGuard no_grad;
  plan.model->train(false);
  if (plan.second_model) plan.second_model->train(false);
  auto p = prepare(plan, providers, options);
  const auto batch = static_cast<std::int64_t>(plan.sources.size());
  const auto& schedule = plan.model->schedule();
  const auto timesteps = schedule.ddim_timesteps(options.steps);

  std::vector<std::vector<StepRecord>> traces(plan.sources.size());
  torch::Tensor attention;
  auto predict = [&](const torch::Tensor& z, int t) {
    const bool second = plan.second_model && t < plan.t_switch;
    auto& side = p.sides[second ? 1 : 0];
    const auto tt = torch::full({batch}, static_cast<std::int64_t>(t), torch::kInt64);
    ida::AlignmentState first;
    const auto z_hat = makeup_condition(plan, p, side, z, tt, &first);
    attention = first.attention;
    const auto w = first.w.to(torch::kFloat64).contiguous();
    for (std::int64_t i = 0; i < batch; ++i) {
      traces[i].push_back({t, w[i].item<double>(), second ? 1 : 0});
    }
    return side.model->predict_noise(side.inputs, z_hat, z, tt);
  };
  const auto z_T = initial_noise(plan, options, plan.model->latent_channels());
  const auto z0 = diffusion::ddim_sample(schedule, z_T, predict, timesteps);
  const auto decoded = plan.model->autoencoder()->decode(z0).clamp(0.0, 1.0);

  const auto ref_small = F::avg_pool2d(p.ref_foregrounds.front(), F::AvgPool2dFuncOptions(4));
  const auto warped = ida::from_pixels(torch::bmm(attention, ida::to_pixels(ref_small)),
                                       kLatentSize, kLatentSize);
  const auto alignment = F::interpolate(
      warped, F::InterpolateFuncOptions().scale_factor(std::vector<double>{4.0, 4.0}).mode(torch::kNearest));

  std::vector<TransferResult> out(plan.sources.size());
  for (std::int64_t i = 0; i < batch; ++i) {
    const auto& src = p.sides.front().sources[i];
    auto& r = out[i];
    r.decoded = to_image(decoded[i]);
    r.image = composite(r.decoded, src.image, src.mask);
    r.alignment = to_image(alignment[i].clamp(0.0, 1.0));
    r.trace = std::move(traces[i]);
  }
  return out;
}

TransferResult transfer(ShmtModel& model, const dataset::FaceRecord& source,
                        const dataset::FaceRecord& reference, const Providers& providers,
                        const SampleOptions& options) {
  SamplingPlan plan;
  plan.model = &model;
  plan.sources = {&source};
  plan.references = {{&reference}};
  return run_sampling(plan, providers, options).front();
}

TransferResult interpolate(ShmtModel& model, const dataset::FaceRecord& source,
                           std::span<const dataset::FaceRecord* const> references,
                           const InterpolationSpec& spec, const Providers& providers,
                           const SampleOptions& options) {
  SamplingPlan plan;
  plan.model = &model;
  plan.sources = {&source};
  for (const auto* r : references) {
    require(r != nullptr, "missing reference");
    plan.references.push_back({r});
  }
  plan.interpolation = spec;
  return run_sampling(plan, providers, options).front();
}

TransferResult stagger(ShmtModel& model_a, ShmtModel& model_b, int t_switch,
                       const dataset::FaceRecord& source, const dataset::FaceRecord& reference,
                       const Providers& providers, const SampleOptions& options) {
  if (t_switch < 0 || t_switch > model_a.schedule().max_timestep()) {
    fail(ErrorKind::kValidation, "t_switch must lie in [0, T]");
  }
  SamplingPlan plan;
  plan.model = &model_a;
  plan.second_model = &model_b;
  plan.t_switch = t_switch;
  plan.sources = {&source};
  plan.references = {{&reference}};
  return run_sampling(plan, providers, options).front();
}

torch::Tensor blended_alignment(ShmtModel& model, const dataset::FaceRecord& source,
                                std::span<const dataset::FaceRecord* const> references,
                                const std::optional<InterpolationSpec>& spec,
                                const Providers& providers, const torch::Tensor& z_t, int t) {
  torch::NoGradGuard no_grad;
  model.train(false);
  SamplingPlan plan;
  plan.model = &model;
  plan.sources = {&source};
  for (const auto* r : references) plan.references.push_back({r});
  plan.interpolation = spec;
  SampleOptions options;
  options.allow_untrained = true;
  auto p = prepare(plan, providers, options);
  const auto tt = torch::full({1}, static_cast<std::int64_t>(t), torch::kInt64);
  return makeup_condition(plan, p, p.sides.front(), z_t, tt, nullptr);
}

}  // namespace shmt::pipeline
