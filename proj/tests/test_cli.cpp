#include "compsplat/assets.hpp"

#include "recovery.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

using namespace compsplat;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("compsplat_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    OptimConfig c;
    c.total_iters = 30;
    c.initial_points = 300;
    c.point_budget = 600;
    c.densify.every = 10;
    c.densify.from = 10;
    c.seed = 5;
    bench::write_fixture(bench::make_benchmark(32), d, c);
    return d;
  }();
  static const struct Cleanup {
    ~Cleanup() { fs::remove_all(dir); }
  } cleanup;
  return dir;
}

int cli(const std::string& args, const std::string& env = {}) {
  const std::string cmd = env + (env.empty() ? "" : " ") + COMPSPLAT_CLI + std::string(" ") + args + " 2>" +
                          (workdir() / "stderr.txt").string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string w(const std::string& name) { return (workdir() / name).string(); }

}  // namespace

TEST_CASE("init, optimize, render, edit-add") {
  REQUIRE(cli("init --manifest " + w("manifest.json") + " --out " + w("scene.ply")) == 0);
  const Scene init = import_gaussians_ply(w("scene.ply"));
  CHECK(init.gaussians.size() == 300);
  CHECK(init.entities.size() == 3);

  REQUIRE(cli("optimize --manifest " + w("manifest.json") + " --scene " + w("scene.ply") + " --out " +
              w("trained.ply") + " --report " + w("report.csv")) == 0);
  const std::string report = slurp(w("report.csv"));
  CHECK(report.rfind("iteration,level,timestep,loss,psnr,gaussian_count\n", 0) == 0);
  CHECK(std::count(report.begin(), report.end(), '\n') == 31);
  CHECK(import_gaussians_ply(w("trained.ply")).gaussians.size() <= 600);

  REQUIRE(cli("render --scene " + w("trained.ply") + " --views turntable:3 --width 16 --height 12 --outdir " +
              w("frames")) == 0);
  CHECK(fs::exists(workdir() / "frames" / "frame_0002.ppm"));
  CHECK(read_ppm(workdir() / "frames" / "frame_0000.ppm").width == 16);
  REQUIRE(cli("render --scene " + w("trained.ply") + " --views turntable:1 --entity 3 --zoomed --outdir " +
              w("entity")) == 0);
  CHECK(fs::exists(workdir() / "entity" / "frame_0000.ppm"));

  REQUIRE(cli("edit-add --scene " + w("trained.ply") + " --mesh " + w("meshes/entity_3.ply") +
              " --prompt \"a second pinecone\" --id 9 --points 50 --freeze-existing --out " + w("edited.ply")) == 0);
  const Scene edited = import_gaussians_ply(w("edited.ply"));
  CHECK(edited.entity(9).prompt == "a second pinecone");
  CHECK(edited.entity(1).frozen);
  CHECK_FALSE(edited.entity(9).frozen);
}

TEST_CASE("ablations and flags run") {
  REQUIRE(cli("init --manifest " + w("manifest.json") + " --out " + w("scene.ply")) == 0);
  for (const char* extra : {"--ablate no_do", "--ablate no_vao", "--ablate random_init", "--freeze-bbox",
                            "--vao-positions-only --mask-by-containment"})
    CHECK_MESSAGE(cli("optimize --manifest " + w("manifest.json") + " --scene " + w("scene.ply") + " --out " +
                      w("abl.ply") + " --report " + w("abl.csv") + " --iters 5 " + extra) == 0,
                  extra);
}

TEST_CASE("identical seeds give identical reports in double precision") {
  REQUIRE(cli("init --manifest " + w("manifest.json") + " --out " + w("scene.ply")) == 0);
  const std::string base = "optimize --manifest " + w("manifest.json") + " --scene " + w("scene.ply") +
                           " --seed 11 --iters 20 --out " + w("d.ply");
  REQUIRE(cli(base + " --report " + w("a.csv"), "COMPSPLAT_PRECISION=f64") == 0);
  REQUIRE(cli(base + " --report " + w("b.csv"), "COMPSPLAT_PRECISION=f64 COMPSPLAT_THREADS=1") == 0);
  CHECK(slurp(w("a.csv")) == slurp(w("b.csv")));
}

TEST_CASE("usage and input errors exit non-zero") {
  CHECK(cli("") != 0);
  CHECK(cli("optimize --manifest " + w("nope.json")) != 0);
  CHECK(cli("render --scene " + w("missing.ply") + " --outdir " + w("x")) == 1);
  CHECK(slurp(workdir() / "stderr.txt").find("error:") != std::string::npos);
  CHECK(cli("init --manifest " + w("manifest.json") + " --out " + w("scene.ply"), "COMPSPLAT_PRECISION=f16") == 0);
  CHECK(cli("render --scene " + w("scene.ply") + " --views turntable:1 --outdir " + w("x"),
            "COMPSPLAT_PRECISION=f16") == 1);
  CHECK(cli("optimize --manifest " + w("manifest.json") + " --scene " + w("scene.ply") + " --out " + w("r.ply") +
            " --report " + w("r.csv") + " --guidance remote:127.0.0.1:1") == 1);
}
