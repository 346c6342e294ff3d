#include "shmt/jobs.hpp"

#include <algorithm>
#include <boost/uuid/uuid.hpp>
#include <boost/uuid/uuid_generators.hpp>
#include <boost/uuid/uuid_io.hpp>
#include <chrono>
#include <ctime>
#include <set>

#include "shmt/checkpoint.hpp"
#include "shmt/feature_extractor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace shmt::service {

namespace {

constexpr std::array<std::string_view, 4> kKinds{"transfer", "interpolate", "stagger", "evaluate"};
constexpr std::array<std::string_view, 4> kStatuses{"queued", "running", "done", "failed"};

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

double seconds_between(const std::string& a, const std::string& b) {
  auto parse = [](const std::string& s) {
    std::tm tm{};
    int ms = 0;
    std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d.%dZ", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &tm.tm_hour,
                &tm.tm_min, &tm.tm_sec, &ms);
    tm.tm_year -= 1900;
    tm.tm_mon -= 1;
    return static_cast<double>(timegm(&tm)) + ms / 1000.0;
  };
  return parse(b) - parse(a);
}

// Collects field errors while walking a request body.
class Checker {
 public:
  explicit Checker(const json& body) : body_(body) {}

  void add(std::string field, std::string message) { errors_.push_back({std::move(field), std::move(message)}); }
  const std::vector<FieldError>& errors() const { return errors_; }

  std::optional<std::string> string(const json& obj, const std::string& key, const std::string& field) {
    if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
    if (!obj[key].is_string() || obj[key].get<std::string>().empty()) {
      add(field, "must be a non-empty string");
      return std::nullopt;
    }
    return obj[key].get<std::string>();
  }

  std::optional<long long> integer(const json& obj, const std::string& key, const std::string& field,
                                   long long lo, long long hi) {
    if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
    const auto& v = obj[key];
    if (!v.is_number_integer()) {
      add(field, "must be an integer");
      return std::nullopt;
    }
    const long long x = v.is_number_unsigned() && v.get<unsigned long long>() > static_cast<unsigned long long>(hi)
                            ? hi + 1
                            : v.get<long long>();
    if (x < lo || x > hi) {
      add(field, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return std::nullopt;
    }
    return x;
  }

  ImageInput image(const std::string& prefix, bool required) {
    ImageInput in;
    const auto id = string(body_, prefix + "_id", prefix + "_id");
    const auto png = string(body_, prefix + "_png_b64", prefix + "_png_b64");
    if (id && png) {
      add(prefix + "_id", "give either " + prefix + "_id or " + prefix + "_png_b64, not both");
      return in;
    }
    if (!id && !png) {
      if (required) add(prefix + "_id", "required (or " + prefix + "_png_b64)");
      return in;
    }
    if (id) {
      in.id = *id;
      return in;
    }
    in.png_b64 = *png;
    const auto mask = string(body_, prefix + "_mask_png_b64", prefix + "_mask_png_b64");
    const auto shape = string(body_, prefix + "_shape_png_b64", prefix + "_shape_png_b64");
    if (!mask) add(prefix + "_mask_png_b64", "required with an uploaded image (no face parser is bundled)");
    if (!shape) add(prefix + "_shape_png_b64", "required with an uploaded image (no shape model is bundled)");
    in.mask_b64 = mask.value_or("");
    in.shape_b64 = shape.value_or("");
    return in;
  }

 private:
  const json& body_;
  std::vector<FieldError> errors_;
};

std::string join(const std::vector<FieldError>& fields) {
  std::string out;
  for (const auto& f : fields) {
    if (!out.empty()) out += "; ";
    out += f.field + ": " + f.message;
  }
  return out;
}

}  // namespace

std::string_view to_string(JobKind kind) { return kKinds[static_cast<int>(kind)]; }
std::string_view to_string(JobStatus status) { return kStatuses[static_cast<int>(status)]; }

JobKind job_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kKinds.size(); ++i)
    if (kKinds[i] == s) return static_cast<JobKind>(i);
  fail(ErrorKind::kValidation, "unknown job kind '" + std::string(s) + "'");
}

JobStatus job_status_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kStatuses.size(); ++i)
    if (kStatuses[i] == s) return static_cast<JobStatus>(i);
  fail(ErrorKind::kValidation, "unknown job status '" + std::string(s) + "'");
}

RequestError::RequestError(std::vector<FieldError> fields)
    : Error(ErrorKind::kValidation, join(fields)), fields_(std::move(fields)) {}

JobRequest parse_request(const json& body) {
  if (!body.is_object()) throw RequestError(std::vector<FieldError>{{"body", "must be a JSON object"}});
  Checker c(body);
  JobRequest r;

  static const std::set<std::string> kTop{"kind", "source_id", "source_png_b64", "source_mask_png_b64",
                                          "source_shape_png_b64", "reference_id", "reference_png_b64",
                                          "reference_mask_png_b64", "reference_shape_png_b64", "reference2_id",
                                          "reference2_png_b64", "reference2_mask_png_b64",
                                          "reference2_shape_png_b64", "model", "model_b", "params", "pairs",
                                          "extractor"};
  for (auto it = body.begin(); it != body.end(); ++it)
    if (!kTop.contains(it.key())) c.add(it.key(), "unknown field");

  const auto kind = c.string(body, "kind", "kind");
  if (!kind) {
    if (!body.contains("kind")) c.add("kind", "required");
    throw RequestError(c.errors());
  }
  if (std::find(kKinds.begin(), kKinds.end(), *kind) == kKinds.end()) {
    c.add("kind", "must be one of transfer, interpolate, stagger, evaluate");
    throw RequestError(c.errors());
  }
  r.kind = job_kind_from_string(*kind);

  if (r.kind == JobKind::kEvaluate) {
    if (!body.contains("pairs") || !body["pairs"].is_array() || body["pairs"].empty()) {
      c.add("pairs", "must be a non-empty array of {source, reference, result}");
    } else {
      for (std::size_t i = 0; i < body["pairs"].size(); ++i) {
        const auto& p = body["pairs"][i];
        const std::string field = "pairs[" + std::to_string(i) + "]";
        if (!p.is_object()) {
          c.add(field, "must be an object");
          continue;
        }
        EvalPairPaths paths;
        for (auto [key, dst] : {std::pair{"source", &paths.source}, std::pair{"reference", &paths.reference},
                                std::pair{"result", &paths.result}}) {
          const auto v = c.string(p, key, field + "." + key);
          if (!v && !p.contains(key)) c.add(field + "." + key, "required");
          if (v) *dst = *v;
        }
        r.pairs.push_back(std::move(paths));
      }
    }
    if (const auto ex = c.string(body, "extractor", "extractor")) {
      const auto ids = metrics::extractor_ids();
      if (std::find(ids.begin(), ids.end(), *ex) == ids.end())
        c.add("extractor", "unknown extractor '" + *ex + "'");
      r.extractor = *ex;
    }
    if (!c.errors().empty()) throw RequestError(c.errors());
    return r;
  }

  // image jobs
  json params = json::object();
  if (body.contains("params")) {
    if (!body["params"].is_object()) c.add("params", "must be an object");
    else params = body["params"];
  }
  static const std::set<std::string> kParams{"level", "beta", "mode", "area", "t_switch", "seed", "steps"};
  for (auto it = params.begin(); it != params.end(); ++it)
    if (!kParams.contains(it.key())) c.add("params." + it.key(), "unknown parameter");

  if (const auto v = c.integer(params, "level", "params.level", 0, 4)) r.level = static_cast<int>(*v);
  if (params.contains("beta")) {
    const auto& b = params["beta"];
    if (!b.is_number()) c.add("params.beta", "must be a number");
    else if (!(b.get<double>() >= 0.0 && b.get<double>() <= 1.0)) c.add("params.beta", "must lie in [0, 1]");
    else r.beta = b.get<double>();
  }
  if (const auto v = c.string(params, "mode", "params.mode")) {
    if (*v != "global" && *v != "local" && *v != "skin") c.add("params.mode", "must be global, local or skin");
    r.mode = *v;
  }
  if (const auto v = c.string(params, "area", "params.area")) {
    if (*v != "lip" && *v != "eye" && *v != "face") c.add("params.area", "must be lip, eye or face");
    r.area = *v;
  }
  if (const auto v = c.integer(params, "t_switch", "params.t_switch", 0, 1000)) r.t_switch = static_cast<int>(*v);
  if (const auto v = c.integer(params, "seed", "params.seed", 0, std::numeric_limits<long long>::max()))
    r.seed = static_cast<std::uint64_t>(*v);
  if (const auto v = c.integer(params, "steps", "params.steps", 1, 1000)) r.steps = static_cast<int>(*v);

  r.source = c.image("source", true);
  r.references.push_back(c.image("reference", true));
  const bool two_refs = r.kind == JobKind::kInterpolate && r.mode != "skin";
  if (two_refs) {
    r.references.push_back(c.image("reference2", true));
  } else if (body.contains("reference2_id") || body.contains("reference2_png_b64")) {
    c.add("reference2_id", "only used by global and local interpolation");
  }
  if (r.kind == JobKind::kInterpolate && r.mode == "local" && r.area.empty())
    c.add("params.area", "required for local interpolation");
  if (r.kind != JobKind::kInterpolate && params.contains("mode"))
    c.add("params.mode", "only used by interpolate jobs");

  if (const auto m = c.string(body, "model", "model")) r.model = *m;
  if (const auto m = c.string(body, "model_b", "model_b")) r.model_b = *m;
  if (r.model.empty()) {
    if (r.level) r.model = "shmt-h" + std::to_string(*r.level);
    else if (!params.contains("level")) c.add("model", "required (or params.level)");
  }
  if (r.kind == JobKind::kStagger && r.model_b.empty()) c.add("model_b", "required for stagger jobs");
  if (r.kind != JobKind::kStagger && !r.model_b.empty()) c.add("model_b", "only used by stagger jobs");

  if (!c.errors().empty()) throw RequestError(c.errors());
  return r;
}

json to_json(const Job& job) {
  return {{"id", job.id},
          {"sequence", job.sequence},
          {"kind", to_string(job.kind)},
          {"status", to_string(job.status)},
          {"request", job.request},
          {"created_at", job.created_at},
          {"started_at", job.started_at},
          {"finished_at", job.finished_at},
          {"run_seconds", job.run_seconds},
          {"error", job.error},
          {"results", job.results},
          {"trace", job.trace},
          {"summary", job.summary}};
}

Job job_from_json(const json& j) {
  Job job;
  job.id = j.at("id").get<std::string>();
  job.sequence = j.at("sequence").get<std::uint64_t>();
  job.kind = job_kind_from_string(j.at("kind").get<std::string>());
  job.status = job_status_from_string(j.at("status").get<std::string>());
  job.request = j.value("request", json::object());
  job.created_at = j.value("created_at", "");
  job.started_at = j.value("started_at", "");
  job.finished_at = j.value("finished_at", "");
  job.run_seconds = j.value("run_seconds", 0.0);
  job.error = j.value("error", "");
  job.results = j.value("results", std::map<std::string, std::string>{});
  job.trace = j.value("trace", json::array());
  job.summary = j.value("summary", json::object());
  return job;
}

std::string new_job_id() {
  thread_local boost::uuids::random_generator gen;
  return boost::uuids::to_string(gen());
}

JobStore::JobStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    Job job;
    try {
      job = job_from_json(checkpoint::read_json(entry.path()));
    } catch (const std::exception&) {
      continue;  // torn or foreign file; writes are atomic so this is not ours
    }
    if (job.status == JobStatus::kRunning) {
      job.status = JobStatus::kFailed;
      job.error = "interrupted: the service stopped while this job was running";
      job.finished_at = iso_now();
      persist(job);
    }
    next_sequence_ = std::max(next_sequence_, job.sequence + 1);
    jobs_.emplace(job.id, std::move(job));
  }
}

Job JobStore::create(JobKind kind, json request) {
  std::lock_guard lock(mutex_);
  Job job;
  job.id = new_job_id();
  job.sequence = next_sequence_++;
  job.kind = kind;
  job.request = std::move(request);
  job.created_at = iso_now();
  persist(job);
  jobs_.emplace(job.id, job);
  return job;
}

std::optional<Job> JobStore::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  if (auto it = jobs_.find(id); it != jobs_.end()) return it->second;
  return std::nullopt;
}

std::vector<Job> JobStore::list() const {
  std::lock_guard lock(mutex_);
  std::vector<Job> out;
  for (const auto& [id, job] : jobs_) out.push_back(job);
  std::sort(out.begin(), out.end(), [](const Job& a, const Job& b) { return a.sequence < b.sequence; });
  return out;
}

std::vector<std::string> JobStore::queued() const {
  std::vector<std::string> ids;
  for (const auto& job : list())
    if (job.status == JobStatus::kQueued) ids.push_back(job.id);
  return ids;
}

std::size_t JobStore::count(JobStatus status) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(jobs_.begin(), jobs_.end(), [&](const auto& kv) { return kv.second.status == status; }));
}

template <typename F>
void JobStore::transition(const std::string& id, JobStatus to, F&& update) {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) fail(ErrorKind::kNotFound, "unknown job " + id);
  Job job = it->second;
  const bool forward = static_cast<int>(to) > static_cast<int>(job.status) &&
                       job.status != JobStatus::kDone && job.status != JobStatus::kFailed;
  if (!forward) {
    fail(ErrorKind::kValidation, "job " + id + " cannot move from " + std::string(to_string(job.status)) +
                                     " to " + std::string(to_string(to)));
  }
  job.status = to;
  update(job);
  persist(job);
  it->second = std::move(job);
}

void JobStore::mark_running(const std::string& id) {
  transition(id, JobStatus::kRunning, [](Job& job) { job.started_at = iso_now(); });
}

void JobStore::mark_done(const std::string& id, std::map<std::string, std::string> results, json trace,
                         json summary) {
  for (const auto& [name, file] : results) {
    if (!fs::exists(job_dir(id) / file))
      fail(ErrorKind::kIo, "job " + id + " result '" + name + "' missing on disk");
  }
  transition(id, JobStatus::kDone, [&](Job& job) {
    job.finished_at = iso_now();
    job.run_seconds = seconds_between(job.started_at, job.finished_at);
    job.results = std::move(results);
    job.trace = std::move(trace);
    job.summary = std::move(summary);
  });
}

void JobStore::mark_failed(const std::string& id, const std::string& error) {
  transition(id, JobStatus::kFailed, [&](Job& job) {
    job.finished_at = iso_now();
    if (!job.started_at.empty()) job.run_seconds = seconds_between(job.started_at, job.finished_at);
    job.error = error;
  });
}

void JobStore::persist(const Job& job) const { checkpoint::write_json_atomic(dir_ / (job.id + ".json"), to_json(job)); }

}  // namespace shmt::service
