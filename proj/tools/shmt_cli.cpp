// shmt: dataset generation, training, inference, evaluation and the HTTP
// service behind one binary. Errors go to stderr as a single line
// "error: <kind>: <message>" with exit status 1 (2 for usage errors).

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "shmt/checkpoint.hpp"
#include "shmt/commands.hpp"
#include "shmt/png_io.hpp"
#include "shmt/service.hpp"
#include "shmt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shmt;

namespace {

struct Globals {
  bool json_out = false;
  std::string runs;
  bool allow_untrained = false;
};

void emit(const Globals& g, const json& data, const std::string& human) {
  if (g.json_out) std::cout << data.dump() << "\n";
  else std::cout << human << "\n";
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  if (!fs::exists(path)) fail(ErrorKind::kNotFound, "config not found: " + path);
  try {
    return checkpoint::read_json(path);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::kValidation, "config " + path + ": " + e.what());
  }
}

template <typename T>
T parse_config(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, "config " + path + ": " + e.what());
  }
}

struct InferenceArgs {
  std::string source, reference, reference2, model, model_b, out, alignment_out, mode = "global", area;
  double beta = 0.5;
  int t_switch = 500;
  std::uint64_t seed = 0;
  int steps = 50;
};

void add_inference_flags(CLI::App* cmd, InferenceArgs& a) {
  cmd->add_option("--source", a.source, "source PNG (with .mask.png/.shape.png) or sample id")->required();
  cmd->add_option("--reference", a.reference, "reference PNG or sample id")->required();
  cmd->add_option("--out", a.out, "output PNG")->required();
  cmd->add_option("--alignment-out", a.alignment_out, "optional alignment visualisation PNG");
  cmd->add_option("--seed", a.seed, "initial noise seed");
  cmd->add_option("--steps", a.steps, "DDIM steps")->check(CLI::Range(1, 1000));
}

void run_inference(const Globals& g, service::JobKind kind, const InferenceArgs& a) {
  service::JobRequest r;
  r.kind = kind;
  r.source = service::image_input(a.source);
  r.references.push_back(service::image_input(a.reference));
  if (!a.reference2.empty()) r.references.push_back(service::image_input(a.reference2));
  r.model = a.model;
  r.model_b = a.model_b;
  r.mode = a.mode;
  r.beta = a.beta;
  r.area = a.area;
  r.t_switch = a.t_switch;
  r.seed = a.seed;
  r.steps = a.steps;

  const auto runs = service::runs_dir(g.runs);
  service::SampleCatalog samples(0);
  service::ModelCache models;
  service::ExecutionContext ctx{runs, &samples, &models, g.allow_untrained};
  auto out = service::execute(r, ctx);
  if (!fs::path(a.out).parent_path().empty()) fs::create_directories(fs::path(a.out).parent_path());
  png::write(a.out, *out.result);
  if (!a.alignment_out.empty() && out.alignment) png::write(a.alignment_out, *out.alignment);
  json data = {{"out", a.out}, {"summary", out.summary}, {"trace", service::trace_to_json(out.trace)}};
  emit(g, data,
       "wrote " + a.out + " (" + std::to_string(out.trace.size()) + " steps, mean w " +
           std::to_string(out.summary.value("w_mean", 0.0)) + ")");
}

int run(int argc, char** argv) {
  CLI::App app{"Self-supervised hierarchical makeup transfer on synthetic faces"};
  app.require_subcommand(1);
  Globals g;
  app.add_flag("--json", g.json_out, "machine-readable output");
  app.add_option("--runs-dir", g.runs, "runs directory (default $SHMT_RUNS_DIR or ./runs)");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "write a synthetic face dataset");
  std::string synth_out;
  int synth_n = 64;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n", synth_n, "number of faces")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "first seed; faces use seed, seed+1, ...");
  synth->callback([&] {
    service::synth_data(synth_out, synth_n, synth_seed);
    const auto hash = service::directory_hash(synth_out);
    emit(g, {{"out", synth_out}, {"count", synth_n}, {"hash", hash}},
         "wrote " + std::to_string(synth_n) + " faces to " + synth_out + " (hash " + hash + ")");
  });

  // pretrain-ae
  auto* pre = app.add_subcommand("pretrain-ae", "pre-train the autoencoder");
  std::string pre_config;
  int pre_steps = 0;
  pre->add_option("--config", pre_config, "JSON config (see README)");
  pre->add_option("--steps", pre_steps, "override step count");
  pre->callback([&] {
    auto cfg = parse_config<pipeline::AutoencoderTrainConfig>(load_config(pre_config), pre_config);
    if (pre_steps > 0) cfg.steps = pre_steps;
    const auto report = pipeline::pretrain_autoencoder(cfg, service::runs_dir(g.runs));
    emit(g,
         {{"checkpoint", report.checkpoint.string()},
          {"holdout_psnr_db", report.holdout_psnr},
          {"latent_scale", report.latent_scale},
          {"seconds", report.seconds}},
         "autoencoder saved to " + report.checkpoint.string() + ", held-out PSNR " +
             std::to_string(report.holdout_psnr) + " dB");
  });

  // train
  auto* tr = app.add_subcommand("train", "train a model at one texture level");
  std::string tr_config, tr_name, tr_ae;
  int tr_level = -1, tr_steps = 0;
  tr->add_option("--level", tr_level, "texture level 0..4")->check(CLI::Range(0, 4));
  tr->add_option("--config", tr_config, "JSON config (see README)");
  tr->add_option("--steps", tr_steps, "override step count");
  tr->add_option("--name", tr_name, "run name (default shmt-h<level>)");
  tr->add_option("--autoencoder", tr_ae, "autoencoder checkpoint (default <runs>/autoencoder)");
  tr->callback([&] {
    auto cfg = parse_config<pipeline::TrainConfig>(load_config(tr_config), tr_config);
    if (tr_level >= 0) cfg.model.texture_level = tr_level;
    if (tr_steps > 0) cfg.steps = tr_steps;
    if (!tr_name.empty()) cfg.name = tr_name;
    if (!tr_ae.empty()) cfg.autoencoder = tr_ae;
    cfg.allow_untrained_autoencoder = cfg.allow_untrained_autoencoder || g.allow_untrained;
    const auto report = pipeline::train(cfg, service::runs_dir(g.runs), [&](const pipeline::StepStats& s) {
      if (!g.json_out && (s.step + 1) % 100 == 0)
        std::cout << "step " << s.step + 1 << " loss " << s.loss << " w " << s.w_mean << std::endl;
    });
    emit(g,
         {{"run_dir", report.run_dir.string()},
          {"checkpoint", report.checkpoint.string()},
          {"final_loss", report.losses.empty() ? 0.0 : report.losses.back()},
          {"seconds", report.seconds}},
         "checkpoint " + report.checkpoint.string());
  });

  InferenceArgs ta, ia, sa;
  auto* transfer = app.add_subcommand("transfer", "makeup transfer from one reference");
  add_inference_flags(transfer, ta);
  transfer->add_option("--model", ta.model, "run name or checkpoint path")->required();
  transfer->callback([&] { run_inference(g, service::JobKind::kTransfer, ta); });

  auto* interp = app.add_subcommand("interpolate", "blend makeup styles");
  add_inference_flags(interp, ia);
  interp->add_option("--model", ia.model, "run name or checkpoint path")->required();
  interp->add_option("--reference2", ia.reference2, "second reference (global and local modes)");
  interp->add_option("--mode", ia.mode, "global, local or skin")->check(CLI::IsMember({"global", "local", "skin"}));
  interp->add_option("--beta", ia.beta, "blend weight")->check(CLI::Range(0.0, 1.0));
  interp->add_option("--area", ia.area, "lip, eye or face (local mode)")->check(CLI::IsMember({"lip", "eye", "face"}));
  interp->callback([&] {
    if (ia.mode != "skin" && ia.reference2.empty())
      fail(ErrorKind::kValidation, "--reference2 is required in " + ia.mode + " mode");
    if (ia.mode == "local" && ia.area.empty()) fail(ErrorKind::kValidation, "--area is required in local mode");
    run_inference(g, service::JobKind::kInterpolate, ia);
  });

  auto* stag = app.add_subcommand("stagger", "first model for t >= t_switch, second below");
  add_inference_flags(stag, sa);
  stag->add_option("--model-a", sa.model, "model for the early (noisy) steps")->required();
  stag->add_option("--model-b", sa.model_b, "model for the late steps")->required();
  stag->add_option("--t-switch", sa.t_switch, "switch timestep")->check(CLI::Range(0, 1000));
  stag->callback([&] { run_inference(g, service::JobKind::kStagger, sa); });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "FID, CLS similarity and Key-sim over a pairs manifest");
  std::string ev_pairs, ev_extractor = "random-conv", ev_out;
  ev->add_option("--pairs", ev_pairs, "JSON list of {source, reference, result} PNG paths")->required();
  ev->add_option("--extractor", ev_extractor, "random-conv, linear or gradient");
  ev->add_option("--out", ev_out, "report path (default report.json next to the manifest)");
  ev->callback([&] {
    const auto pairs = service::read_pairs_manifest(ev_pairs);
    const auto base = fs::path(ev_pairs).parent_path();
    const auto extractor = metrics::make_extractor(ev_extractor);
    const auto report = metrics::evaluate(service::load_pairs(pairs, base), *extractor,
                                          {{"pairs_manifest", ev_pairs}});
    const auto out = ev_out.empty() ? base / "report.json" : fs::path(ev_out);
    const auto j = metrics::to_json(report);
    checkpoint::write_json_atomic(out, j);
    std::string fid = report.fid ? std::to_string(report.fid->value) : "n/a";
    emit(g, j,
         "pairs " + std::to_string(report.pairs.size()) + "  FID " + fid + "  CLS " +
             std::to_string(report.mean_cls) + "  Key-sim " + std::to_string(report.mean_key_sim) +
             "  -> " + out.string());
  });

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP job service");
  service::ServiceOptions so;
  std::string ui_dir;
  serve->add_option("--port", so.port, "port (0 = any free port)");
  serve->add_option("--host", so.host, "bind address");
  serve->add_option("--ui-dir", ui_dir, "built panel assets served under /ui/");
  serve->add_option("--max-queue", so.max_queue, "queued jobs before 429");
  serve->callback([&] {
    so.runs = service::runs_dir(g.runs);
    so.ui_dir = ui_dir;
    so.allow_untrained = g.allow_untrained;
    service::Service svc(so);
    const int port = svc.start();
    emit(g, {{"port", port}, {"runs_dir", so.runs.string()}},
         "serving on http://" + so.host + ":" + std::to_string(port) + " (runs " + so.runs.string() + ")");
    std::cout.flush();
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    int sig = 0;
    sigwait(&set, &sig);
    svc.stop();
  });

  app.add_flag("--allow-untrained", g.allow_untrained, "permit sampling with an untrained autoencoder");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << to_string(e.kind()) << ": " << msg << "\n";
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: internal: " << msg << "\n";
  }
  return 1;
}
