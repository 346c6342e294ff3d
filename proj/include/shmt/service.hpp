#pragma once

// Local HTTP job service. Requests are validated and queued on the HTTP
// threads; one worker thread runs jobs FIFO.
//
//   GET  /v1/models                    checkpoints under the runs dir
//   GET  /v1/samples?tier=simple|complex
//   POST /v1/jobs                      -> 202 {job_id}
//   GET  /v1/jobs                      all jobs, oldest first
//   GET  /v1/jobs/{id}
//   GET  /v1/jobs/{id}/result.png
//   GET  /v1/jobs/{id}/alignment.png
//   GET  /v1/jobs/{id}/report.json     evaluate jobs
//   GET  /ui/...                       built panel, when --ui-dir is given

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "json.hpp"
#include "shmt/commands.hpp"
#include "shmt/jobs.hpp"

namespace httplib {
class Server;
}

namespace shmt::service {

struct ServiceOptions {
  std::filesystem::path runs = "runs";
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t max_queue = 16;
  bool allow_untrained = false;
  std::filesystem::path ui_dir;
  int sample_count = 48;
};

// Status code plus JSON body, as produced for an HTTP response.
struct Reply {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Validates and enqueues. 202 on success, 400/409/429 otherwise.
  Reply submit(const nlohmann::json& body);
  Reply job(const std::string& id) const;

  // Binds and serves in a background thread; returns the bound port.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();

  // Blocks until no job is queued or running, or the timeout passes.
  bool wait_idle(double seconds) const;

  JobStore& store() { return store_; }
  const ServiceOptions& options() const { return options_; }

 private:
  void setup_routes();
  void worker_loop();
  void run_job(const std::string& id);

  ServiceOptions options_;
  JobStore store_;
  SampleCatalog samples_;
  ModelCache models_;
  std::unique_ptr<httplib::Server> server_;
  std::thread http_thread_;

  mutable std::mutex queue_mutex_;
  mutable std::condition_variable queue_cv_;
  std::deque<std::string> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace shmt::service
