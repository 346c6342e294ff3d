#pragma once

// Operations shared by the CLI and the HTTP service: locating models,
// resolving faces, executing a job request, evaluating a pairs manifest.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "shmt/dataset.hpp"
#include "shmt/jobs.hpp"
#include "shmt/metrics.hpp"
#include "shmt/model_bundle.hpp"
#include "shmt/sampler.hpp"

namespace shmt::service {

// flag, else $SHMT_RUNS_DIR, else ./runs
std::filesystem::path runs_dir(const std::string& flag = "");

struct ModelInfo {
  std::string name;
  std::filesystem::path checkpoint;
  int texture_level = 0;
  int step = 0;
  std::string mix;
  nlohmann::json metrics = nlohmann::json::object();
};

// Every run directory under `runs` holding a model checkpoint.
std::vector<ModelInfo> list_models(const std::filesystem::path& runs);

// A run name under `runs` or a path to a run/checkpoint directory.
// kNotFound naming the path when neither exists.
std::filesystem::path locate_model(const std::filesystem::path& runs, const std::string& ref);

// Loaded models keyed by checkpoint path. Not thread-safe; the service
// only touches it from its worker.
class ModelCache {
 public:
  explicit ModelCache(std::size_t capacity = 3) : capacity_(capacity) {}
  pipeline::ShmtModel& get(const std::filesystem::path& checkpoint);

 private:
  std::size_t capacity_;
  std::vector<std::pair<std::filesystem::path, std::unique_ptr<pipeline::ShmtModel>>> entries_;
};

// Held-out synthetic faces the service offers for browsing. Ids are the
// generator seeds, so any eval seed resolves even if not listed.
class SampleCatalog {
 public:
  explicit SampleCatalog(int count = 48);
  const std::vector<dataset::FaceRecord>& records() const { return records_; }
  // kNotFound for ids that are not eval seeds.
  dataset::FaceRecord get(const std::string& id) const;
  nlohmann::json list(const std::optional<facesynth::Complexity>& tier) const;

 private:
  std::vector<dataset::FaceRecord> records_;
};

// A face from a sample id, uploaded PNGs or a PNG path with side-cars.
dataset::FaceRecord resolve_face(const ImageInput& input, const SampleCatalog& samples, const std::string& role);
// CLI argument: an all-digit string that is not a file is a sample id.
ImageInput image_input(const std::string& ref);

struct ExecutionContext {
  std::filesystem::path runs;
  const SampleCatalog* samples = nullptr;
  ModelCache* models = nullptr;
  bool allow_untrained = false;
};

struct JobOutput {
  std::optional<Image> result;
  std::optional<Image> alignment;
  std::vector<pipeline::StepRecord> trace;
  nlohmann::json summary = nlohmann::json::object();
  std::optional<metrics::EvalReport> report;
};

// Throws kNotFound if a model the request names does not exist, kUntrained
// if its autoencoder was never trained (unless allowed). Cheap: reads
// manifests only.
void check_models(const JobRequest& request, const ExecutionContext& ctx);

JobOutput execute(const JobRequest& request, ExecutionContext& ctx);

nlohmann::json trace_to_json(const std::vector<pipeline::StepRecord>& trace);
nlohmann::json trace_summary(const std::vector<pipeline::StepRecord>& trace);

// Pairs manifest: [{source, reference, result}, ...] of PNG paths, relative
// paths resolved against the manifest's directory.
std::vector<metrics::EvalPair> load_pairs(const std::vector<EvalPairPaths>& pairs,
                                          const std::filesystem::path& base);
std::vector<EvalPairPaths> read_pairs_manifest(const std::filesystem::path& manifest);

// Writes <out>/<seed>.png plus side-cars and manifest.json.
void synth_data(const std::filesystem::path& out, int count, std::uint64_t seed);

// Directory digest over file names and contents, for determinism checks.
std::string directory_hash(const std::filesystem::path& dir);

}  // namespace shmt::service
