// Runs the shmt binary the way a user would.

#include <array>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "shmt/model_bundle.hpp"
#include "shmt/png_io.hpp"

#include "doctest.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status = 0;
  std::string out;
  std::string err;
};

const fs::path kWork = fs::temp_directory_path() / ("shmt-cli-" + std::to_string(::getpid()));

Run run_cli(const std::string& args) {
  const auto err_path = kWork / "stderr.txt";
  const std::string cmd = std::string(SHMT_CLI_PATH) + " " + args + " 2>" + err_path.string();
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (auto n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int rc = pclose(pipe);
  r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream in(err_path);
  r.err.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Workdir {
  Workdir() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};
const Workdir workdir;

}  // namespace

TEST_CASE("help works and errors are one line") {
  auto r = run_cli("--help");
  CHECK(r.status == 0);
  CHECK(r.out.find("synth-data") != std::string::npos);
  CHECK(r.out.find("serve") != std::string::npos);

  r = run_cli("transfer --help");
  CHECK(r.status == 0);
  CHECK(r.out.find("--reference") != std::string::npos);

  r = run_cli("--runs-dir " + (kWork / "runs").string() + " transfer --source 1000000 --reference 1000001 --model ghost --out " +
           (kWork / "o.png").string());
  CHECK(r.status == 1);
  CHECK(r.err.rfind("error: not_found: ", 0) == 0);
  CHECK(r.err.find((kWork / "runs" / "ghost").string()) != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

  r = run_cli("interpolate --source 1 --reference 2 --model m --out o.png --beta 2");
  CHECK(r.status == 2);
  CHECK(r.err.rfind("error: usage: ", 0) == 0);

  r = run_cli("--json evaluate --pairs " + (kWork / "none.json").string());
  CHECK(r.status == 1);
  CHECK(r.err.rfind("error: not_found: ", 0) == 0);
}

TEST_CASE("synth-data is reproducible") {
  const auto a = kWork / "a", b = kWork / "b";
  auto ra = run_cli("--json synth-data --out " + a.string() + " --n 5 --seed 9");
  auto rb = run_cli("--json synth-data --out " + b.string() + " --n 5 --seed 9");
  REQUIRE(ra.status == 0);
  REQUIRE(rb.status == 0);
  const auto ja = json::parse(ra.out), jb = json::parse(rb.out);
  CHECK(ja["hash"] == jb["hash"]);
  CHECK(ja["count"] == 5);
  for (const auto& name : {"9.png", "13.mask.png", "11.shape.png", "manifest.json"}) {
    CHECK(slurp(a / name) == slurp(b / name));
  }
}

TEST_CASE("transfer runs from files and sample ids, deterministically") {
  const auto runs = kWork / "runs";
  {
    shmt::pipeline::ModelConfig cfg;
    cfg.unet_widths = {16, 32, 32};
    cfg.condition_channels = 8;
    cfg.feature_dim = 16;
    shmt::diffusion::AutoencoderConfig ae;
    ae.width = 16;
    shmt::pipeline::ShmtModel model(cfg, shmt::diffusion::Autoencoder(ae));
    // the output layer starts at zero; give the conditioning something to move
    {
      torch::NoGradGuard no_grad;
      for (auto& p : model.trainable_parameters())
        if (p.abs().max().item<double>() == 0.0) p.normal_(0.0, 0.05);
    }
    model.save(runs / "tiny" / "checkpoints" / "step-0", {{"step", 0}});
  }
  const auto faces = kWork / "faces";
  REQUIRE(run_cli("synth-data --out " + faces.string() + " --n 2 --seed 1000000").status == 0);
  const std::string base = "--runs-dir " + runs.string() + " ";
  const std::string tail = " --model tiny --steps 2 --seed 4";

  // untrained autoencoder is refused unless explicitly allowed
  auto r = run_cli(base + "transfer --source 1000000 --reference 1000001 --out " + (kWork / "x.png").string() + tail);
  CHECK(r.status == 1);
  CHECK(r.err.rfind("error: untrained: ", 0) == 0);

  const std::string allow = base + "--allow-untrained ";
  const auto p1 = kWork / "t1.png", p2 = kWork / "t2.png", p3 = kWork / "t3.png";
  r = run_cli(allow + "--json transfer --source " + (faces / "1000000.png").string() + " --reference 1000001 --out " +
           p1.string() + tail);
  INFO(r.err);
  REQUIRE(r.status == 0);
  CHECK(json::parse(r.out)["summary"]["steps"] == 2);
  REQUIRE(run_cli(allow + "transfer --source 1000000 --reference 1000001 --out " + p2.string() + tail).status == 0);
  REQUIRE(run_cli(allow + "transfer --source 1000000 --reference 1000001 --out " + p3.string() + tail).status == 0);
  CHECK(slurp(p2) == slurp(p3));

  // outside the face mask the result is the source, exactly
  const auto src = shmt::png::read(faces / "1000000.png");
  const auto mask = shmt::png::read(faces / "1000000.mask.png");
  for (const auto& p : {p1, p2}) {
    const auto out = shmt::png::read(p);
    int differ = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (mask.at(0, y, x) < 0.5f && out.at(c, y, x) != src.at(c, y, x)) ++differ;
    CHECK(differ == 0);
  }
}

TEST_CASE("evaluate writes a report with zero FID for identical sets") {
  const auto dir = kWork / "eval";
  REQUIRE(run_cli("synth-data --out " + dir.string() + " --n 4 --seed 1000000").status == 0);
  json pairs = json::array();
  for (int i = 0; i < 4; ++i) {
    const auto name = std::to_string(1000000 + i) + ".png";
    const auto other = std::to_string(1000000 + (i + 1) % 4) + ".png";
    pairs.push_back({{"source", name}, {"reference", other}, {"result", other}});
  }
  std::ofstream(dir / "pairs.json") << pairs.dump();
  auto r = run_cli("--json evaluate --pairs " + (dir / "pairs.json").string() + " --extractor gradient");
  INFO(r.err);
  REQUIRE(r.status == 0);
  const auto report = json::parse(slurp(dir / "report.json"));
  CHECK(report["fid"].get<double>() <= 1e-6);
  CHECK(report["extractor"] == "gradient");
  CHECK(json::parse(r.out)["mean_key_sim"] == report["mean_key_sim"]);
}
