#include "shmt/service.hpp"

#include <chrono>
#include <fstream>

#include "httplib.h"
#include "shmt/checkpoint.hpp"
#include "shmt/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace shmt::service {

namespace {

json error_body(std::string_view code, const std::string& message) {
  return {{"error", code}, {"message", message}};
}

void write_png_atomic(const fs::path& path, const Image& image) {
  const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
  png::write(tmp, image);
  fs::rename(tmp, path);
}

void send(httplib::Response& res, const Reply& reply) {
  res.status = reply.status;
  res.set_content(reply.body.dump(), "application/json");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Service::Service(ServiceOptions options)
    : options_(std::move(options)),
      store_(options_.runs / "service" / "jobs"),
      samples_(options_.sample_count),
      server_(std::make_unique<httplib::Server>()) {
  for (const auto& id : store_.queued()) queue_.push_back(id);
  setup_routes();
  worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

Reply Service::submit(const json& body) {
  JobRequest request;
  try {
    request = parse_request(body);
  } catch (const RequestError& e) {
    json fields = json::array();
    for (const auto& f : e.fields()) fields.push_back({{"field", f.field}, {"message", f.message}});
    auto out = error_body("validation", e.what());
    out["fields"] = fields;
    return {400, out};
  }
  ExecutionContext ctx{options_.runs, &samples_, nullptr, options_.allow_untrained};
  try {
    check_models(request, ctx);
  } catch (const Error& e) {
    return {409, error_body("model_not_loaded", e.what())};
  }
  // sample ids are cheap to check up front, uploads are decoded by the worker
  for (const auto* in : {&request.source}) {
    if (in->id.empty()) continue;
    try {
      samples_.get(in->id);
    } catch (const Error& e) {
      auto out = error_body("validation", e.what());
      out["fields"] = json::array({{{"field", "source_id"}, {"message", e.what()}}});
      return {400, out};
    }
  }
  for (std::size_t k = 0; k < request.references.size(); ++k) {
    const auto& in = request.references[k];
    if (in.id.empty()) continue;
    try {
      samples_.get(in.id);
    } catch (const Error& e) {
      const std::string field = k == 0 ? "reference_id" : "reference2_id";
      auto out = error_body("validation", e.what());
      out["fields"] = json::array({{{"field", field}, {"message", e.what()}}});
      return {400, out};
    }
  }

  std::lock_guard lock(queue_mutex_);
  if (queue_.size() >= options_.max_queue) {
    return {429, error_body("queue_full", "queue holds " + std::to_string(queue_.size()) + " jobs; try later")};
  }
  const Job job = store_.create(request.kind, body);
  queue_.push_back(job.id);
  queue_cv_.notify_all();
  return {202, {{"job_id", job.id}, {"status", to_string(job.status)}}};
}

Reply Service::job(const std::string& id) const {
  const auto job = store_.get(id);
  if (!job) return {404, error_body("not_found", "unknown job " + id)};
  auto body = to_json(*job);
  return {200, body};
}

void Service::setup_routes() {
  auto& s = *server_;

  s.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& m : list_models(options_.runs)) {
      out.push_back({{"name", m.name},
                     {"checkpoint", m.checkpoint.string()},
                     {"texture_level", m.texture_level},
                     {"step", m.step},
                     {"mix", m.mix},
                     {"metrics", m.metrics}});
    }
    send(res, {200, out});
  });

  s.Get("/v1/samples", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<facesynth::Complexity> tier;
    if (req.has_param("tier")) {
      const auto v = req.get_param_value("tier");
      try {
        tier = facesynth::complexity_from_string(v);
      } catch (const Error&) {
        auto out = error_body("validation", "tier must be simple or complex");
        out["fields"] = json::array({{{"field", "tier"}, {"message", "must be simple or complex"}}});
        return send(res, {400, out});
      }
    }
    send(res, {200, samples_.list(tier)});
  });

  s.Post("/v1/jobs", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const std::exception& e) {
      auto out = error_body("validation", std::string("body is not JSON: ") + e.what());
      out["fields"] = json::array({{{"field", "body"}, {"message", "not valid JSON"}}});
      return send(res, {400, out});
    }
    send(res, submit(body));
  });

  s.Get("/v1/jobs", [this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& j : store_.list()) {
      out.push_back({{"id", j.id}, {"kind", to_string(j.kind)}, {"status", to_string(j.status)},
                     {"created_at", j.created_at}});
    }
    send(res, {200, out});
  });

  s.Get(R"(/v1/jobs/([0-9a-fA-F-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, job(req.matches[1]));
  });

  s.Get(R"(/v1/jobs/([0-9a-fA-F-]+)/(result\.png|alignment\.png|report\.json))",
        [this](const httplib::Request& req, httplib::Response& res) {
          const std::string id = req.matches[1];
          const std::string file = req.matches[2];
          const auto job = store_.get(id);
          if (!job) return send(res, {404, error_body("not_found", "unknown job " + id)});
          if (job->status != JobStatus::kDone) {
            return send(res, {409, error_body("not_ready", "job is " + std::string(to_string(job->status)))});
          }
          const auto path = store_.job_dir(id) / file;
          if (!fs::exists(path)) return send(res, {404, error_body("not_found", "job has no " + file)});
          res.set_content(read_file(path), file.ends_with(".png") ? "image/png" : "application/json");
        });

  if (!options_.ui_dir.empty() && fs::is_directory(options_.ui_dir)) {
    s.set_mount_point("/ui", options_.ui_dir.string());
  } else {
    s.Get("/ui/?.*", [](const httplib::Request&, httplib::Response& res) {
      send(res, {404, error_body("not_found", "panel not built; start with --ui-dir pointing at its dist/")});
    });
  }
}

int Service::start() {
  int port = options_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(options_.host);
  } else if (!server_->bind_to_port(options_.host, port)) {
    fail(ErrorKind::kIo, "cannot bind " + options_.host + ":" + std::to_string(port));
  }
  if (port < 0) fail(ErrorKind::kIo, "cannot bind " + options_.host);
  http_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::run() {
  if (!server_->listen(options_.host, options_.port)) {
    fail(ErrorKind::kIo, "cannot listen on " + options_.host + ":" + std::to_string(options_.port));
  }
}

void Service::stop() {
  if (server_) server_->stop();
  if (http_thread_.joinable()) http_thread_.join();
}

bool Service::wait_idle(double seconds) const {
  std::unique_lock lock(queue_mutex_);
  return queue_cv_.wait_for(lock, std::chrono::duration<double>(seconds),
                            [this] { return queue_.empty() && !busy_; });
}

void Service::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      busy_ = true;
    }
    run_job(id);
    {
      std::lock_guard lock(queue_mutex_);
      busy_ = false;
    }
    queue_cv_.notify_all();
  }
}

void Service::run_job(const std::string& id) {
  try {
    store_.mark_running(id);
  } catch (const std::exception&) {
    return;  // no longer queued
  }
  try {
    const auto job = *store_.get(id);
    const auto request = parse_request(job.request);
    ExecutionContext ctx{options_.runs, &samples_, &models_, options_.allow_untrained};
    auto out = execute(request, ctx);

    const auto dir = store_.job_dir(id);
    fs::create_directories(dir);
    std::map<std::string, std::string> results;
    if (out.result) {
      write_png_atomic(dir / "result.png", *out.result);
      results["result"] = "result.png";
    }
    if (out.alignment) {
      write_png_atomic(dir / "alignment.png", *out.alignment);
      results["alignment"] = "alignment.png";
    }
    if (out.report) {
      checkpoint::write_json_atomic(dir / "report.json", metrics::to_json(*out.report));
      results["report"] = "report.json";
    }
    store_.mark_done(id, std::move(results), trace_to_json(out.trace), out.summary);
  } catch (const std::exception& e) {
    std::string message = e.what();
    if (const auto* err = dynamic_cast<const Error*>(&e)) message = std::string(to_string(err->kind())) + ": " + message;
    store_.mark_failed(id, message);
  }
}

}  // namespace shmt::service
