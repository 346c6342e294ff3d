#pragma once

// Inference: makeup transfer, interpolation between makeup styles and
// staggered two-model sampling, all on a deterministic DDIM trajectory with
// the alignment re-run at every step.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "shmt/conditioning.hpp"
#include "shmt/dataset.hpp"
#include "shmt/facesynth.hpp"
#include "shmt/image.hpp"
#include "shmt/model_bundle.hpp"

namespace shmt::pipeline {

enum class InterpolationMode { kGlobal, kLocal, kSkin };
std::string_view to_string(InterpolationMode mode);
InterpolationMode interpolation_mode_from_string(std::string_view s);

// global: (1-b) z1 + b z2
// local:  ((1-b) z1 + b z2) * M_area + z_self * (1 - M_area)
// skin:   ((1-b) z_self + b z2) * M_face + z_self * (1 - M_face), z2 = the
//         single reference
struct InterpolationSpec {
  InterpolationMode mode = InterpolationMode::kGlobal;
  double beta = 0.0;
  std::optional<facesynth::Region> area;  // local mode
  std::optional<Image> area_mask;         // 1x16x16, overrides `area`

  // Number of references each mode needs: global/local 2, skin 1.
  int reference_count() const { return mode == InterpolationMode::kSkin ? 1 : 2; }
  void validate(std::size_t references) const;
};

struct SampleOptions {
  int steps = 50;
  std::uint64_t seed = 0;
  bool allow_untrained = false;
};

struct StepRecord {
  int t = 0;
  double w = 0.0;
  int model = 0;  // 0 = first model, 1 = second (staggered runs)
};

struct TransferResult {
  Image image;      // decoded foreground composited over the source
  Image decoded;    // decoder output, clamped to [0,1]
  Image alignment;  // reference colours pulled through the last attention map
  std::vector<StepRecord> trace;
};

// Blend of per-reference alignment outputs. `z_second` is ignored in skin
// mode; `area_mask` is (B,1,h,w) and ignored in global mode.
torch::Tensor blend_makeup(const InterpolationSpec& spec, const torch::Tensor& z_first,
                           const torch::Tensor& z_second, const torch::Tensor& z_self,
                           const torch::Tensor& area_mask);

struct SamplingPlan {
  ShmtModel* model = nullptr;
  ShmtModel* second_model = nullptr;  // staggered sampling
  int t_switch = 0;                   // first model for t >= t_switch
  std::vector<const dataset::FaceRecord*> sources;
  // references[k][i]: k-th reference of item i.
  std::vector<std::vector<const dataset::FaceRecord*>> references;
  std::optional<InterpolationSpec> interpolation;
  std::vector<std::uint64_t> seeds;  // one per item; empty = options.seed for all
};

std::vector<TransferResult> run_sampling(const SamplingPlan& plan, const Providers& providers,
                                         const SampleOptions& options);

TransferResult transfer(ShmtModel& model, const dataset::FaceRecord& source,
                        const dataset::FaceRecord& reference, const Providers& providers,
                        const SampleOptions& options);

TransferResult interpolate(ShmtModel& model, const dataset::FaceRecord& source,
                           std::span<const dataset::FaceRecord* const> references,
                           const InterpolationSpec& spec, const Providers& providers,
                           const SampleOptions& options);

TransferResult stagger(ShmtModel& model_a, ShmtModel& model_b, int t_switch,
                       const dataset::FaceRecord& source, const dataset::FaceRecord& reference,
                       const Providers& providers, const SampleOptions& options);

// Alignment state for one fixed noisy latent, used to check the blending
// equations independently of sampling. Returns the blended z_hat.
torch::Tensor blended_alignment(ShmtModel& model, const dataset::FaceRecord& source,
                                std::span<const dataset::FaceRecord* const> references,
                                const std::optional<InterpolationSpec>& spec,
                                const Providers& providers, const torch::Tensor& z_t, int t);

// Hard composite: `foreground` where mask == 1, `source` elsewhere.
Image composite(const Image& foreground, const Image& source, const Image& mask);

}  // namespace shmt::pipeline
