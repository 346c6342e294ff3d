#include "shmt/commands.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "shmt/checkpoint.hpp"
#include "shmt/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace shmt::service {

namespace {

std::vector<std::uint8_t> base64_decode(const std::string& text, const std::string& field) {
  if (sodium_init() < 0) fail(ErrorKind::kIo, "libsodium failed to initialise");
  std::vector<std::uint8_t> out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  const char* end = nullptr;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), " \r\n", &len, &end,
                        sodium_base64_VARIANT_ORIGINAL) != 0 ||
      end != text.data() + text.size()) {
    throw RequestError({{field, "is not valid base64"}});
  }
  out.resize(len);
  return out;
}

Image decode_png(const std::string& b64, const std::string& field) {
  try {
    return png::decode(base64_decode(b64, field));
  } catch (const RequestError&) {
    throw;
  } catch (const std::exception& e) {
    throw RequestError({{field, std::string("is not a readable PNG: ") + e.what()}});
  }
}

Image to_single_channel(const Image& img) { return img.channels() == 1 ? img : img.channel(0); }

}  // namespace

fs::path runs_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SHMT_RUNS_DIR"); env && *env) return env;
  return "runs";
}

std::vector<ModelInfo> list_models(const fs::path& runs) {
  std::vector<ModelInfo> out;
  if (!fs::is_directory(runs)) return out;
  for (const auto& entry : fs::directory_iterator(runs)) {
    if (!entry.is_directory()) continue;
    try {
      const auto dir = pipeline::resolve_checkpoint(entry.path());
      const auto manifest = pipeline::read_manifest(dir);
      if (manifest.value("kind", "") != "model") continue;
      ModelInfo info;
      info.name = entry.path().filename().string();
      info.checkpoint = dir;
      info.texture_level = manifest.value("texture_level", 0);
      info.step = manifest.value("step", 0);
      info.mix = manifest.contains("config") ? manifest["config"].value("mix", "learned") : "learned";
      info.metrics = manifest.value("metrics", json::object());
      out.push_back(std::move(info));
    } catch (const std::exception&) {
      // not a run directory
    }
  }
  std::sort(out.begin(), out.end(), [](const ModelInfo& a, const ModelInfo& b) { return a.name < b.name; });
  return out;
}

fs::path locate_model(const fs::path& runs, const std::string& ref) {
  require(!ref.empty(), "model reference is empty");
  const fs::path named = runs / ref;
  if (fs::exists(named)) return pipeline::resolve_checkpoint(named);
  const bool looks_like_path = ref.find('/') != std::string::npos || fs::exists(ref);
  return pipeline::resolve_checkpoint(looks_like_path ? fs::path(ref) : named);
}

pipeline::ShmtModel& ModelCache::get(const fs::path& checkpoint) {
  const auto key = fs::weakly_canonical(checkpoint);
  for (auto it = entries_.begin(); it != entries_.end(); ++it) {
    if (it->first == key) {
      std::rotate(entries_.begin(), it, it + 1);
      return *entries_.front().second;
    }
  }
  auto model = std::make_unique<pipeline::ShmtModel>(pipeline::ShmtModel::load(key));
  entries_.insert(entries_.begin(), {key, std::move(model)});
  if (entries_.size() > capacity_) entries_.pop_back();
  return *entries_.front().second;
}

SampleCatalog::SampleCatalog(int count) {
  for (const auto seed : dataset::eval_seeds(count))
    records_.push_back(dataset::record_from_sample(facesynth::generate(seed, dataset::default_tier(seed))));
}

dataset::FaceRecord SampleCatalog::get(const std::string& id) const {
  for (const auto& r : records_)
    if (r.id == id) return r;
  std::uint64_t seed = 0;
  try {
    std::size_t used = 0;
    seed = std::stoull(id, &used);
    if (used != id.size()) throw std::invalid_argument(id);
  } catch (const std::exception&) {
    fail(ErrorKind::kNotFound, "unknown sample id '" + id + "'");
  }
  if (seed < dataset::kEvalSeedBase) {
    fail(ErrorKind::kNotFound, "sample id '" + id + "' is a training seed; only held-out ids (>= " +
                                   std::to_string(dataset::kEvalSeedBase) + ") are served");
  }
  return dataset::record_from_sample(facesynth::generate(seed, dataset::default_tier(seed)));
}

json SampleCatalog::list(const std::optional<facesynth::Complexity>& tier) const {
  json out = json::array();
  for (const auto& r : records_) {
    if (tier && r.tier != *tier) continue;
    const auto bytes = png::encode(r.image);
    std::string b64(sodium_base64_ENCODED_LEN(bytes.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
    sodium_bin2base64(b64.data(), b64.size(), bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
    b64.resize(std::strlen(b64.c_str()));
    out.push_back({{"id", r.id}, {"tier", facesynth::to_string(r.tier)}, {"thumbnail_png_b64", b64}});
  }
  return out;
}

dataset::FaceRecord resolve_face(const ImageInput& input, const SampleCatalog& samples, const std::string& role) {
  if (!input.id.empty()) {
    try {
      return samples.get(input.id);
    } catch (const Error& e) {
      throw RequestError({{role + "_id", e.what()}});
    }
  }
  if (!input.path.empty()) {
    if (!fs::exists(input.path)) fail(ErrorKind::kNotFound, "image not found: " + input.path);
    auto r = dataset::Dataset::import_image(input.path);
    r.id = "file-" + role;
    return r;
  }
  dataset::FaceRecord r;
  r.id = "upload-" + role;
  r.image = decode_png(input.png_b64, role + "_png_b64");
  r.mask = to_single_channel(decode_png(input.mask_b64, role + "_mask_png_b64"));
  r.shape_map = to_single_channel(decode_png(input.shape_b64, role + "_shape_png_b64"));
  if (r.image.channels() != 3) throw RequestError({{role + "_png_b64", "must be an RGB image"}});
  if (r.image.height() != facesynth::kImageSize || r.image.width() != facesynth::kImageSize) {
    throw RequestError({{role + "_png_b64", "must be " + std::to_string(facesynth::kImageSize) + "x" +
                                                std::to_string(facesynth::kImageSize)}});
  }
  return r;
}

ImageInput image_input(const std::string& ref) {
  ImageInput in;
  const bool digits =
      !ref.empty() && std::all_of(ref.begin(), ref.end(), [](char c) { return c >= '0' && c <= '9'; });
  if (digits && !fs::exists(ref)) in.id = ref;
  else in.path = ref;
  return in;
}

void check_models(const JobRequest& request, const ExecutionContext& ctx) {
  if (request.kind == JobKind::kEvaluate) return;
  std::vector<std::string> refs{request.model};
  if (request.kind == JobKind::kStagger) refs.push_back(request.model_b);
  for (const auto& ref : refs) {
    const auto dir = locate_model(ctx.runs, ref);
    const auto manifest = pipeline::read_manifest(dir);
    if (manifest.value("kind", "") != "model") fail(ErrorKind::kNotFound, dir.string() + " is not a model checkpoint");
    if (!ctx.allow_untrained && !manifest.value("autoencoder_trained", false)) {
      fail(ErrorKind::kUntrained, "untrained weights: model '" + ref + "' was built on an untrained autoencoder");
    }
  }
}

json trace_to_json(const std::vector<pipeline::StepRecord>& trace) {
  json out = json::array();
  for (const auto& s : trace) out.push_back({{"t", s.t}, {"w", s.w}, {"model", s.model}});
  return out;
}

json trace_summary(const std::vector<pipeline::StepRecord>& trace) {
  if (trace.empty()) return json::object();
  double w = 0.0;
  int second = 0;
  for (const auto& s : trace) {
    w += s.w;
    second += s.model;
  }
  return {{"steps", trace.size()},
          {"w_mean", w / static_cast<double>(trace.size())},
          {"w_first", trace.front().w},
          {"w_last", trace.back().w},
          {"steps_second_model", second}};
}

JobOutput execute(const JobRequest& request, ExecutionContext& ctx) {
  JobOutput out;
  if (request.kind == JobKind::kEvaluate) {
    const auto extractor = metrics::make_extractor(request.extractor);
    auto report = metrics::evaluate(load_pairs(request.pairs, ctx.runs), *extractor,
                                    {{"pairs", request.pairs.size()}});
    out.summary = {{"mean_cls", report.mean_cls}, {"mean_key_sim", report.mean_key_sim}};
    if (report.fid) out.summary["fid"] = report.fid->value;
    out.report = std::move(report);
    return out;
  }

  require(ctx.samples != nullptr && ctx.models != nullptr, "execution context is incomplete");
  dataset::Dataset faces;
  auto add = [&](dataset::FaceRecord r) -> const dataset::FaceRecord* {
    if (const auto* existing = faces.find(r.id)) return existing;
    const std::string id = r.id;
    faces.add(std::move(r));
    return faces.find(id);
  };
  const std::string source_id = add(resolve_face(request.source, *ctx.samples, "source"))->id;
  std::vector<std::string> ref_ids;
  for (std::size_t k = 0; k < request.references.size(); ++k) {
    const std::string role = k == 0 ? "reference" : "reference2";
    auto r = resolve_face(request.references[k], *ctx.samples, role);
    ref_ids.push_back(r.id);
    add(std::move(r));
  }
  const auto providers = pipeline::Providers::ground_truth(faces);
  const auto& source = faces.get(source_id);
  std::vector<const dataset::FaceRecord*> refs;
  for (const auto& id : ref_ids) refs.push_back(&faces.get(id));

  pipeline::SampleOptions options;
  options.steps = request.steps;
  options.seed = request.seed;
  options.allow_untrained = ctx.allow_untrained;

  auto& model = ctx.models->get(locate_model(ctx.runs, request.model));
  pipeline::TransferResult result;
  switch (request.kind) {
    case JobKind::kTransfer:
      result = pipeline::transfer(model, source, *refs.front(), providers, options);
      break;
    case JobKind::kInterpolate: {
      pipeline::InterpolationSpec spec;
      spec.mode = pipeline::interpolation_mode_from_string(request.mode);
      spec.beta = request.beta;
      if (!request.area.empty()) spec.area = facesynth::region_from_string(request.area);
      result = pipeline::interpolate(model, source, refs, spec, providers, options);
      break;
    }
    case JobKind::kStagger: {
      auto& model_b = ctx.models->get(locate_model(ctx.runs, request.model_b));
      result = pipeline::stagger(model, model_b, request.t_switch, source, *refs.front(), providers, options);
      break;
    }
    case JobKind::kEvaluate:
      break;
  }
  out.result = std::move(result.image);
  out.alignment = std::move(result.alignment);
  out.summary = trace_summary(result.trace);
  out.summary["texture_level"] = model.texture_level();
  out.trace = std::move(result.trace);
  return out;
}

std::vector<metrics::EvalPair> load_pairs(const std::vector<EvalPairPaths>& pairs, const fs::path& base) {
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  std::vector<metrics::EvalPair> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    metrics::EvalPair p;
    p.name = fs::path(pairs[i].result).stem().string();
    if (p.name.empty()) p.name = "pair-" + std::to_string(i);
    for (auto [src, dst] : {std::pair{&pairs[i].source, &p.source}, std::pair{&pairs[i].reference, &p.reference},
                            std::pair{&pairs[i].result, &p.result}}) {
      const auto path = resolve(*src);
      if (!fs::exists(path)) fail(ErrorKind::kNotFound, "image not found: " + path.string());
      *dst = png::read(path);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<EvalPairPaths> read_pairs_manifest(const fs::path& manifest) {
  if (!fs::exists(manifest)) fail(ErrorKind::kNotFound, "pairs manifest not found: " + manifest.string());
  const auto body = json{{"kind", "evaluate"}, {"pairs", checkpoint::read_json(manifest)}};
  return parse_request(body).pairs;
}

void synth_data(const fs::path& out, int count, std::uint64_t seed) {
  require(count >= 1, "--n must be at least 1");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) seeds[i] = seed + static_cast<std::uint64_t>(i);
  dataset::materialize(out, seeds);
}

std::string directory_hash(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  std::string blob;
  for (const auto& f : files) {
    std::ifstream in(dir / f, std::ios::binary);
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    blob += f.generic_string();
    blob.push_back('\0');
    blob += checkpoint::hex(checkpoint::fnv1a(content));
    blob.push_back('\n');
  }
  return checkpoint::hex(checkpoint::fnv1a(blob));
}

}  // namespace shmt::service
