#include <sodium.h>

#include <chrono>
#include <fstream>
#include <thread>

#include "shmt/checkpoint.hpp"
#include "shmt/commands.hpp"
#include "shmt/dataset.hpp"
#include "shmt/facesynth.hpp"
#include "shmt/png_io.hpp"
#include "shmt/service.hpp"
// after Eigen: resolv.h defines a macro named res
#include "httplib.h"
// after torch, whose logging also defines CHECK
#include "doctest.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shmt;
using namespace shmt::service;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("shmt-service-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small untrained model; fast enough for a 2-step job.
void write_tiny_model(const fs::path& runs, const std::string& name, int level) {
  pipeline::ModelConfig cfg;
  cfg.texture_level = level;
  cfg.unet_widths = {16, 32, 32};
  cfg.condition_channels = 8;
  cfg.feature_dim = 16;
  diffusion::AutoencoderConfig ae_cfg;
  ae_cfg.width = 16;
  torch::manual_seed(0);  // shared autoencoder so the models can be staggered
  diffusion::Autoencoder ae(ae_cfg);
  torch::manual_seed(level + 1);
  pipeline::ShmtModel model(cfg, ae);
  // the output layer starts at zero; give the conditioning something to move
  {
    torch::NoGradGuard no_grad;
    for (auto& p : model.trainable_parameters())
      if (p.abs().max().item<double>() == 0.0) p.normal_(0.0, 0.05);
  }
  model.save(runs / name / "checkpoints" / "step-0", {{"step", 0}, {"run", name}});
}

json transfer_body(std::uint64_t seed = 3) {
  return {{"kind", "transfer"},
          {"source_id", "1000000"},
          {"reference_id", "1000001"},
          {"model", "tiny"},
          {"params", {{"steps", 2}, {"seed", seed}}}};
}

std::string b64(const std::vector<std::uint8_t>& bytes) {
  std::string out(sodium_base64_ENCODED_LEN(bytes.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::strlen(out.c_str()));
  return out;
}

bool has_field(const json& body, const std::string& field) {
  for (const auto& f : body.value("fields", json::array())) {
    if (f.value("field", "") == field) return true;
  }
  return false;
}

json wait_done(httplib::Client& cli, const std::string& id, double seconds = 120.0) {
  const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
  for (;;) {
    auto res = cli.Get("/v1/jobs/" + id);
    REQUIRE(res);
    auto j = json::parse(res->body);
    const auto status = j.value("status", "");
    if (status == "done" || status == "failed") return j;
    if (std::chrono::steady_clock::now() > until) return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

struct Fixture {
  fs::path runs;
  std::unique_ptr<Service> svc;
  int port = 0;

  explicit Fixture(const std::string& name, std::size_t max_queue = 16, bool allow_untrained = true) {
    runs = fresh_dir(name);
    write_tiny_model(runs, "tiny", 0);
    ServiceOptions o;
    o.runs = runs;
    o.port = 0;
    o.max_queue = max_queue;
    o.allow_untrained = allow_untrained;
    o.sample_count = 4;
    svc = std::make_unique<Service>(o);
    port = svc->start();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60);
    return c;
  }
};

}  // namespace

TEST_CASE("request validation names the offending field") {
  auto body = transfer_body();
  body["params"]["beta"] = 1.5;
  try {
    parse_request(body);
    FAIL("expected a validation error");
  } catch (const RequestError& e) {
    REQUIRE(e.fields().size() == 1);
    CHECK(e.fields()[0].field == "params.beta");
    CHECK(e.kind() == ErrorKind::kValidation);
  }

  auto collect = [](const json& b) {
    std::vector<std::string> out;
    try {
      parse_request(b);
    } catch (const RequestError& e) {
      for (const auto& f : e.fields()) out.push_back(f.field);
    }
    return out;
  };
  CHECK(collect(json{{"source_id", "1"}}) == std::vector<std::string>{"kind"});
  auto extra = transfer_body();
  extra["colour"] = "red";
  CHECK(collect(extra) == std::vector<std::string>{"colour"});

  auto both = transfer_body();
  both["source_png_b64"] = "AAAA";
  CHECK_FALSE(collect(both).empty());

  auto upload = transfer_body();
  upload.erase("source_id");
  upload["source_png_b64"] = "AAAA";
  const auto missing = collect(upload);
  CHECK(std::find(missing.begin(), missing.end(), "source_mask_png_b64") != missing.end());
  CHECK(std::find(missing.begin(), missing.end(), "source_shape_png_b64") != missing.end());

  json local{{"kind", "interpolate"}, {"source_id", "1000000"}, {"reference_id", "1000001"},
             {"reference2_id", "1000003"}, {"model", "tiny"}, {"params", {{"mode", "local"}}}};
  CHECK(collect(local) == std::vector<std::string>{"params.area"});
  local["params"]["area"] = "lip";
  CHECK(collect(local).empty());
  json skin = local;
  skin["params"]["mode"] = "skin";
  CHECK(collect(skin) == std::vector<std::string>{"reference2_id"});

  json stag = transfer_body();
  stag["kind"] = "stagger";
  CHECK(collect(stag) == std::vector<std::string>{"model_b"});
  stag["model_b"] = "tiny2";
  stag["params"]["t_switch"] = 1001;
  CHECK(collect(stag) == std::vector<std::string>{"params.t_switch"});

  json level{{"kind", "transfer"}, {"source_id", "1000000"}, {"reference_id", "1000001"}, {"params", {{"level", 4}}}};
  CHECK(parse_request(level).model == "shmt-h4");
  level["params"]["level"] = 5;
  CHECK(collect(level) == std::vector<std::string>{"params.level"});

  CHECK(collect(json{{"kind", "evaluate"}, {"pairs", json::array()}}) == std::vector<std::string>{"pairs"});
}

TEST_CASE("job lifecycle over HTTP") {
  Fixture f("lifecycle");
  auto cli = f.client();

  auto models = cli.Get("/v1/models");
  REQUIRE(models);
  CHECK(models->status == 200);
  const auto mj = json::parse(models->body);
  REQUIRE(mj.size() == 1);
  CHECK(mj[0]["name"] == "tiny");

  auto bad = json::parse(cli.Post("/v1/jobs", [] {
                             auto b = transfer_body();
                             b["params"]["beta"] = -0.1;
                             return b.dump();
                           }(), "application/json")->body);
  CHECK(has_field(bad, "params.beta"));
  CHECK(cli.Post("/v1/jobs", "{not json", "application/json")->status == 400);

  auto res = cli.Post("/v1/jobs", transfer_body().dump(), "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 202);
  const auto id = json::parse(res->body)["job_id"].get<std::string>();
  const auto job = wait_done(cli, id);
  REQUIRE(job["status"] == "done");
  CHECK(job["trace"].size() == 2);
  CHECK(job["summary"]["steps"] == 2);
  CHECK(!job["started_at"].get<std::string>().empty());
  CHECK(!job["finished_at"].get<std::string>().empty());

  auto png = cli.Get("/v1/jobs/" + id + "/result.png");
  REQUIRE(png);
  CHECK(png->status == 200);
  const std::vector<std::uint8_t> bytes(png->body.begin(), png->body.end());
  const auto img = png::decode(bytes);
  CHECK(img.width() == 64);
  CHECK(img.height() == 64);
  CHECK(cli.Get("/v1/jobs/" + id + "/alignment.png")->status == 200);
  CHECK(cli.Get("/v1/jobs/" + id + "/report.json")->status == 404);

  auto list = json::parse(cli.Get("/v1/jobs")->body);
  REQUIRE(list.size() == 1);
  CHECK(list[0]["id"] == id);

  CHECK(cli.Get("/v1/jobs/00000000-0000-0000-0000-000000000000")->status == 404);
  CHECK(cli.Get("/ui/")->status == 404);
}

TEST_CASE("results of unfinished jobs are 409") {
  Fixture f("notready");
  auto cli = f.client();
  // created straight in the store, never enqueued
  const auto job = f.svc->store().create(JobKind::kTransfer, transfer_body());
  auto res = cli.Get("/v1/jobs/" + job.id + "/result.png");
  REQUIRE(res);
  CHECK(res->status == 409);
  CHECK(json::parse(res->body)["error"] == "not_ready");
  CHECK(json::parse(cli.Get("/v1/jobs/" + job.id)->body)["status"] == "queued");
}

TEST_CASE("unknown or untrained models are 409") {
  Fixture f("models", 16, false);
  auto body = transfer_body();
  body["model"] = "missing";
  auto r = f.svc->submit(body);
  CHECK(r.status == 409);
  CHECK(r.body["error"] == "model_not_loaded");
  CHECK(r.body["message"].get<std::string>().find("missing") != std::string::npos);

  r = f.svc->submit(transfer_body());
  CHECK(r.status == 409);
  CHECK(r.body["message"].get<std::string>().find("untrained") != std::string::npos);
}

TEST_CASE("unknown sample ids are rejected up front") {
  Fixture f("samples");
  auto body = transfer_body();
  body["reference_id"] = "42";  // training seed, not offered
  auto r = f.svc->submit(body);
  CHECK(r.status == 400);
  CHECK(has_field(r.body, "reference_id"));

  auto cli = f.client();
  CHECK(cli.Get("/v1/samples?tier=glossy")->status == 400);
  const auto simple = json::parse(cli.Get("/v1/samples?tier=simple")->body);
  REQUIRE(!simple.empty());
  for (const auto& s : simple) {
    CHECK(s["tier"] == "simple");
    CHECK(std::stoull(s["id"].get<std::string>()) % 2 == 0);
    CHECK(!s["thumbnail_png_b64"].get<std::string>().empty());
  }
}

TEST_CASE("full queue answers 429") {
  Fixture f("queue", 2);
  int accepted = 0, rejected = 0;
  for (int i = 0; i < 8; ++i) {
    auto body = transfer_body(static_cast<std::uint64_t>(i));
    body["params"]["steps"] = 20;
    const auto r = f.svc->submit(body);
    if (r.status == 202) ++accepted;
    if (r.status == 429) {
      ++rejected;
      CHECK(r.body["error"] == "queue_full");
    }
  }
  CHECK(accepted <= 3);  // two queued plus possibly one already picked up
  CHECK(rejected >= 5);
  CHECK(f.svc->wait_idle(300));
}

TEST_CASE("identical jobs give byte-identical PNGs") {
  Fixture f("determinism");
  auto cli = f.client();
  std::vector<std::string> bodies;
  for (int i = 0; i < 2; ++i) {
    auto res = cli.Post("/v1/jobs", transfer_body(7).dump(), "application/json");
    REQUIRE(res->status == 202);
    const auto id = json::parse(res->body)["job_id"].get<std::string>();
    REQUIRE(wait_done(cli, id)["status"] == "done");
    bodies.push_back(cli.Get("/v1/jobs/" + id + "/result.png")->body);
  }
  CHECK(bodies[0] == bodies[1]);

  auto res = cli.Post("/v1/jobs", transfer_body(8).dump(), "application/json");
  const auto id = json::parse(res->body)["job_id"].get<std::string>();
  REQUIRE(wait_done(cli, id)["status"] == "done");
  CHECK(cli.Get("/v1/jobs/" + id + "/result.png")->body != bodies[0]);
}

TEST_CASE("uploads, interpolation and staggering run through the worker") {
  Fixture f("kinds");
  write_tiny_model(f.runs, "tiny2", 2);
  auto cli = f.client();

  const auto face = facesynth::generate(1000004, facesynth::Complexity::kSimple);
  json upload = transfer_body();
  upload.erase("source_id");
  upload["source_png_b64"] = b64(png::encode(face.image));
  upload["source_mask_png_b64"] = b64(png::encode(face.mask));
  upload["source_shape_png_b64"] = b64(png::encode(face.shape_map));

  json interp{{"kind", "interpolate"}, {"source_id", "1000000"}, {"reference_id", "1000001"},
              {"reference2_id", "1000003"}, {"model", "tiny"},
              {"params", {{"mode", "local"}, {"area", "lip"}, {"beta", 0.3}, {"steps", 2}}}};
  json stag = transfer_body();
  stag["kind"] = "stagger";
  stag["model_b"] = "tiny2";
  stag["params"]["t_switch"] = 600;
  stag["params"]["steps"] = 4;

  for (const auto& body : {upload, interp, stag}) {
    auto res = cli.Post("/v1/jobs", body.dump(), "application/json");
    REQUIRE(res->status == 202);
    const auto id = json::parse(res->body)["job_id"].get<std::string>();
    const auto job = wait_done(cli, id);
    INFO(job.dump());
    CHECK(job["status"] == "done");
    CHECK(cli.Get("/v1/jobs/" + id + "/result.png")->status == 200);
    if (body["kind"] == "stagger") {
      // t = 751, 501, 251, 1; the second model takes t < 600
      CHECK(job["summary"]["steps_second_model"] == 3);
    }
  }

  // the upload must decode as PNG; garbage fails the job, not the server
  json garbage = upload;
  garbage["source_png_b64"] = b64({1, 2, 3, 4});
  auto res = cli.Post("/v1/jobs", garbage.dump(), "application/json");
  REQUIRE(res->status == 202);
  const auto job = wait_done(cli, json::parse(res->body)["job_id"].get<std::string>());
  CHECK(job["status"] == "failed");
  INFO(job.dump());
  CHECK(job["error"].get<std::string>().find("PNG") != std::string::npos);
}

TEST_CASE("evaluate job reports zero FID when results equal references") {
  Fixture f("evaluate");
  const auto dir = f.runs / "eval";
  fs::create_directories(dir);
  json pairs = json::array();
  for (int i = 0; i < 4; ++i) {
    const auto a = facesynth::generate(1000000 + 2 * i, facesynth::Complexity::kSimple);
    const auto b = facesynth::generate(1000001 + 2 * i, facesynth::Complexity::kComplex);
    png::write(dir / ("s" + std::to_string(i) + ".png"), a.image);
    png::write(dir / ("r" + std::to_string(i) + ".png"), b.image);
    pairs.push_back({{"source", "eval/s" + std::to_string(i) + ".png"},
                     {"reference", "eval/r" + std::to_string(i) + ".png"},
                     {"result", "eval/r" + std::to_string(i) + ".png"}});
  }
  auto cli = f.client();
  json body{{"kind", "evaluate"}, {"pairs", pairs}, {"extractor", "linear"}};
  auto res = cli.Post("/v1/jobs", body.dump(), "application/json");
  REQUIRE(res->status == 202);
  const auto id = json::parse(res->body)["job_id"].get<std::string>();
  const auto job = wait_done(cli, id);
  REQUIRE(job["status"] == "done");
  const auto report = json::parse(cli.Get("/v1/jobs/" + id + "/report.json")->body);
  CHECK(report["fid"].get<double>() <= 1e-6);
  CHECK(report["mean_cls"].get<double>() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(report["extractor"] == "linear");
  CHECK(report["pairs"].size() == 4);

  json missing{{"kind", "evaluate"}, {"pairs", {{{"source", "eval/nope.png"}, {"reference", "eval/r0.png"}, {"result", "eval/r0.png"}}}}};
  res = cli.Post("/v1/jobs", missing.dump(), "application/json");
  const auto failed = wait_done(cli, json::parse(res->body)["job_id"].get<std::string>());
  CHECK(failed["status"] == "failed");
  CHECK(failed["error"].get<std::string>().find("nope.png") != std::string::npos);
}

TEST_CASE("a restart marks interrupted jobs failed and keeps queued ones") {
  const auto dir = fresh_dir("recovery");
  std::string running, queued;
  {
    JobStore store(dir);
    running = store.create(JobKind::kTransfer, transfer_body()).id;
    queued = store.create(JobKind::kTransfer, transfer_body()).id;
    store.mark_running(running);
  }
  JobStore store(dir);
  const auto r = store.get(running);
  REQUIRE(r);
  CHECK(r->status == JobStatus::kFailed);
  CHECK(r->error.find("interrupted") != std::string::npos);
  CHECK(store.get(queued)->status == JobStatus::kQueued);
  CHECK(store.queued() == std::vector<std::string>{queued});

  // forward-only transitions
  CHECK_THROWS(store.mark_running(running));
  store.mark_running(queued);
  CHECK_THROWS(store.mark_done(queued, {{"result", "result.png"}}, json::array(), json::object()));
  store.mark_failed(queued, "boom");
  CHECK(store.count(JobStatus::kFailed) == 2);
}

TEST_CASE("restarted service resumes queued jobs") {
  const auto runs = fresh_dir("resume");
  write_tiny_model(runs, "tiny", 0);
  std::string id;
  {
    JobStore store(runs / "service" / "jobs");
    id = store.create(JobKind::kTransfer, transfer_body()).id;
  }
  ServiceOptions o;
  o.runs = runs;
  o.allow_untrained = true;
  o.sample_count = 2;
  Service svc(o);
  CHECK(svc.wait_idle(120));
  CHECK(svc.store().get(id)->status == JobStatus::kDone);
}

TEST_CASE("synth-data is deterministic") {
  const auto a = fresh_dir("synth-a"), b = fresh_dir("synth-b"), c = fresh_dir("synth-c");
  synth_data(a, 6, 11);
  synth_data(b, 6, 11);
  synth_data(c, 6, 12);
  CHECK(directory_hash(a) == directory_hash(b));
  CHECK(directory_hash(a) != directory_hash(c));
  CHECK(fs::exists(a / "11.png"));
  CHECK(fs::exists(a / "16.shape.png"));
}

TEST_CASE("missing checkpoints name the path") {
  const auto runs = fresh_dir("missing");
  try {
    locate_model(runs, "ghost");
    FAIL("expected kNotFound");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNotFound);
    CHECK(std::string(e.what()).find((runs / "ghost").string()) != std::string::npos);
  }
}

TEST_CASE("image_input tells sample ids from paths") {
  CHECK(image_input("1000003").id == "1000003");
  CHECK(image_input("faces/1.png").path == "faces/1.png");
  const auto dir = fresh_dir("ids");
  std::ofstream(dir / "123").put('x');
  const auto cwd = fs::current_path();
  fs::current_path(dir);
  CHECK(image_input("123").path == "123");
  fs::current_path(cwd);
}
