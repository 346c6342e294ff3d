#pragma once

// Job requests, their validation, and the file-backed job store used by the
// HTTP service. One JSON file per job under <dir>/<id>.json, result images
// under <dir>/<id>/.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "shmt/error.hpp"

namespace shmt::service {

enum class JobKind { kTransfer, kInterpolate, kStagger, kEvaluate };
enum class JobStatus { kQueued, kRunning, kDone, kFailed };

std::string_view to_string(JobKind kind);
std::string_view to_string(JobStatus status);
JobKind job_kind_from_string(std::string_view s);
JobStatus job_status_from_string(std::string_view s);

struct FieldError {
  std::string field;
  std::string message;
};

// A request that failed schema validation. what() joins all field messages.
class RequestError : public Error {
 public:
  explicit RequestError(std::vector<FieldError> fields);
  const std::vector<FieldError>& fields() const { return fields_; }

 private:
  std::vector<FieldError> fields_;
};

// A face given either as a synthetic sample id or as uploaded PNGs. Uploads
// need their mask and shape map as well since no parsing or shape model
// ships with the service.
struct ImageInput {
  std::string id;
  std::string png_b64;
  std::string mask_b64;
  std::string shape_b64;
  std::string path;  // CLI only: PNG with .mask.png/.shape.png side-cars
  bool present() const { return !id.empty() || !png_b64.empty() || !path.empty(); }
};

struct EvalPairPaths {
  std::string source;
  std::string reference;
  std::string result;
};

struct JobRequest {
  JobKind kind = JobKind::kTransfer;
  ImageInput source;
  // transfer/stagger: 1. interpolate: 2 for global and local, 1 for skin.
  std::vector<ImageInput> references;
  std::string model;    // run name or checkpoint path; default shmt-h<level>
  std::string model_b;  // stagger only
  std::optional<int> level;
  std::string mode = "global";
  double beta = 0.5;
  std::string area;
  int t_switch = 500;
  std::uint64_t seed = 0;
  int steps = 50;
  // evaluate
  std::vector<EvalPairPaths> pairs;
  std::string extractor = "random-conv";
};

// Validates the whole body and reports every bad field at once.
JobRequest parse_request(const nlohmann::json& body);

struct Job {
  std::string id;
  std::uint64_t sequence = 0;  // FIFO order, survives restarts
  JobKind kind = JobKind::kTransfer;
  JobStatus status = JobStatus::kQueued;
  nlohmann::json request;
  std::string created_at;
  std::string started_at;
  std::string finished_at;
  double run_seconds = 0.0;
  std::string error;
  std::map<std::string, std::string> results;  // name -> file name in the job dir
  nlohmann::json trace = nlohmann::json::array();
  nlohmann::json summary = nlohmann::json::object();
};

nlohmann::json to_json(const Job& job);
Job job_from_json(const nlohmann::json& j);

std::string new_job_id();

class JobStore {
 public:
  // Loads existing jobs. Anything left running by a previous process is
  // marked failed; queued jobs stay queued.
  explicit JobStore(std::filesystem::path dir);

  Job create(JobKind kind, nlohmann::json request);
  std::optional<Job> get(const std::string& id) const;
  std::vector<Job> list() const;
  std::vector<std::string> queued() const;  // FIFO order
  std::size_t count(JobStatus status) const;

  void mark_running(const std::string& id);
  void mark_done(const std::string& id, std::map<std::string, std::string> results,
                 nlohmann::json trace, nlohmann::json summary);
  void mark_failed(const std::string& id, const std::string& error);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path job_dir(const std::string& id) const { return dir_ / id; }

 private:
  template <typename F>
  void transition(const std::string& id, JobStatus to, F&& update);
  void persist(const Job& job) const;

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::map<std::string, Job> jobs_;
  std::uint64_t next_sequence_ = 0;
};

}  // namespace shmt::service
