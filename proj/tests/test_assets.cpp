#include "compsplat/assets.hpp"
#include "compsplat/error.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace compsplat;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("compsplat_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kCubePly =
    "ply\nformat ascii 1.0\nelement vertex 8\nproperty float x\nproperty float y\nproperty float z\n"
    "property uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\n"
    "property list uchar int vertex_indices\nend_header\n"
    "0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n1 1 0 255 255 0\n"
    "0 0 1 0 255 255\n1 0 1 255 0 255\n0 1 1 255 255 255\n1 1 1 0 0 0\n3 0 1 2\n";

}  // namespace

TEST_CASE("minimal manifest takes the defaults") {
  TempDir dir;
  write_text(dir / "cube.ply", kCubePly);
  write_text(dir / "m.json", R"({"composition_prompt": "a cube", "entities": [{"id": 1, "prompt": "cube", "mesh": "cube.ply"}]})");
  const SceneManifest m = load_manifest(dir / "m.json");
  CHECK(m.optim.position.start == 1e-3);
  CHECK(m.optim.position.end == 1e-5);
  CHECK(m.optim == OptimConfig{});
  CHECK(m.camera == CameraRanges{});
  CHECK(m.bbox_std == Aabb3::cube(0.5));
  CHECK(m.resolve("cube.ply") == dir / "cube.ply");
}

TEST_CASE("manifest errors") {
  TempDir dir;
  write_text(dir / "cube.ply", kCubePly);
  auto expect_error = [&](const std::string& text, const std::string& needle) {
    try {
      parse_manifest(text, dir.path);
      FAIL("expected a parse error for " << text);
    } catch (const ParseError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  expect_error(R"({"composition_prompt": "x", "entities": [{"id": 7, "prompt": "a", "mesh": "cube.ply"},
    {"id": 7, "prompt": "b", "mesh": "cube.ply"}]})", "7");
  expect_error(R"({"composition_prompt": "x", "entities": [{"id": 1, "prompt": "a", "mesh": "nope.ply"}]})", "nope.ply");
  expect_error(R"({"composition_prompt": "x", "entities": []})", "entities");
  expect_error(R"({"composition_prompt": "x", "entities": [{"id": 1, "prompt": "a", "mesh": "cube.ply"}],
    "optim": {"total_iters": "many"}})", "total_iters");
  expect_error(R"({"composition_prompt": "x", "entities": [{"id": 1, "prompt": "a", "mesh": "cube.ply"}],
    "optim": {"learning_rate": 1}})", "learning_rate");
  expect_error("{\n\"composition_prompt\": \"x\",\n  oops\n}", "line 3");
  CHECK_THROWS_AS(load_manifest(dir / "missing.json"), IoError);
}

TEST_CASE("manifest round trip") {
  TempDir dir;
  write_text(dir / "cube.ply", kCubePly);
  write_text(dir / "m.json", R"({
    "composition_prompt": "an owl on a branch",
    "entities": [
      {"id": 1, "prompt": "branch", "mesh": "cube.ply", "bbox": {"min": [-0.5, -0.2, -0.1], "max": [0.5, 0.0, 0.1]}},
      {"id": 3, "prompt": "owl", "mesh": "cube.ply"}],
    "bbox_std": {"min": [-1, -1, -1], "max": [1, 1, 1]},
    "optim": {"total_iters": 500, "lr": {"position": {"start": 0.002, "end": 0.0001}, "opacity": 0.01},
              "ablations": {"no_vao": true}, "rule": "adam", "densify": {"enabled": false, "every": 50},
              "timesteps": {"phase1": [0.1, 0.6], "switch_iter": 300}, "precision": "f64", "seed": 12},
    "camera": {"radius": [1.0, 1.5], "width": 64, "height": 48},
    "guidance": {"mode": "remote", "host": "localhost", "port": 5555}
  })");
  const SceneManifest m = load_manifest(dir / "m.json");
  CHECK(m.optim.total_iters == 500);
  CHECK(m.optim.position.end == 1e-4);
  CHECK(m.optim.opacity.start == 0.01);
  CHECK(m.optim.opacity.end == 0.01);
  CHECK(m.optim.ablations.no_vao);
  CHECK(m.optim.rule == UpdateRule::Adam);
  CHECK(m.optim.precision == Precision::Double);
  CHECK(m.camera.width == 64);
  CHECK(m.guidance.mode == GuidanceMode::Remote);
  CHECK(m.guidance.port == 5555);
  REQUIRE(m.entities[0].bbox.has_value());
  CHECK(m.entities[0].bbox->max == Vec3(0.5, 0.0, 0.1));

  save_manifest(m, dir / "again.json");
  const SceneManifest back = load_manifest(dir / "again.json");
  CHECK(back == m);
  CHECK(manifest_to_json(back) == manifest_to_json(m));
}

TEST_CASE("colored cube PLY") {
  TempDir dir;
  write_text(dir / "cube.ply", kCubePly);
  const EntityMesh m = load_mesh(dir / "cube.ply", 2, "cube");
  REQUIRE(m.vertices.size() == 8);
  CHECK(m.vertices[3] == Vec3(1, 1, 0));
  CHECK(m.colors[0] == Vec3(1, 0, 0));
  CHECK(m.colors[7] == Vec3(0, 0, 0));
  CHECK(m.entity_id == 2);

  save_mesh_ply(m, dir / "out.ply");
  const EntityMesh back = load_mesh(dir / "out.ply");
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(back.vertices[i] == m.vertices[i]);
    CHECK((back.colors[i] - m.colors[i]).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("binary PLY mesh") {
  TempDir dir;
  std::string bin = "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                    "property float z\nproperty float red\nproperty float green\nproperty float blue\nend_header\n";
  const float data[12] = {0.5f, -1.f, 2.f, 0.25f, 0.5f, 0.75f, 1.f, 2.f, 3.f, 1.f, 0.f, 0.f};
  bin.append(reinterpret_cast<const char*>(data), sizeof(data));
  write_text(dir / "b.ply", bin);
  const EntityMesh m = load_mesh(dir / "b.ply");
  REQUIRE(m.vertices.size() == 2);
  CHECK(m.vertices[0] == Vec3(0.5, -1, 2));
  CHECK(m.colors[0] == Vec3(0.25, 0.5, 0.75));
}

TEST_CASE("OBJ meshes need vertex colors") {
  TempDir dir;
  write_text(dir / "c.obj", "# tri\nv 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nf 1 2 3\n");
  const EntityMesh m = load_mesh(dir / "c.obj");
  CHECK(m.vertices.size() == 3);
  CHECK(m.colors[2] == Vec3(0, 0, 1));
  write_text(dir / "plain.obj", "v 0 0 0\nv 1 0 0\n");
  try {
    load_mesh(dir / "plain.obj");
    FAIL("expected missing colors");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("missing vertex colors") != std::string::npos);
  }
  write_text(dir / "x.stl", "solid");
  CHECK_THROWS_AS(load_mesh(dir / "x.stl"), ParseError);
  CHECK_THROWS_AS(load_mesh(dir / "absent.ply"), IoError);
}

TEST_CASE("Gaussian PLY round trip") {
  TempDir dir;
  Rng rng(3);
  Scene s = oracle::random_scene(rng, {.count = 40, .entities = 3});
  s.composition_prompt = "three \"quoted\" things";
  s.entity(2).frozen = true;
  s.entity(3).bbox_pinned = true;
  s.bbox_std = Aabb3::cube(0.75);
  export_gaussians_ply(s, dir / "s.ply");
  const Scene back = import_gaussians_ply(dir / "s.ply");
  REQUIRE(back.gaussians.size() == 40);
  CHECK(back.composition_prompt == s.composition_prompt);
  CHECK(back.gaussians.entity_tags == s.gaussians.entity_tags);
  CHECK(back.entities.size() == s.entities.size());
  CHECK(back.entity(2).frozen);
  CHECK(back.entity(3).bbox_pinned);
  CHECK(back.bbox_std == s.bbox_std);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK((back.gaussians.positions[i] - s.gaussians.positions[i]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.gaussians.log_scales[i] - s.gaussians.log_scales[i]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.gaussians.rotations[i] - s.gaussians.rotations[i]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.gaussians.colors[i] - s.gaussians.colors[i]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(back.gaussians.opacities[i] - s.gaussians.opacities[i]) < 1e-6);
  }
}

TEST_CASE("Gaussian PLY layout") {
  TempDir dir;
  Scene s;
  Gaussian g;
  g.opacity = 0.5;
  g.color = Vec3::Constant(0.5);
  s.gaussians.push_back(g);
  s.entities.push_back({1, "one", Aabb3::cube(0.1), false, false});
  export_gaussians_ply(s, dir / "one.ply");
  const std::string bytes = read_bytes(dir / "one.ply");
  const auto end = bytes.find("end_header\n");
  REQUIRE(end != std::string::npos);
  const std::string header = bytes.substr(0, end);
  CHECK(header.find("format binary_little_endian 1.0") != std::string::npos);
  CHECK(header.find("property float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\n"
                    "property float nz\nproperty float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n"
                    "property float opacity\nproperty float scale_0\nproperty float scale_1\n"
                    "property float scale_2\nproperty float rot_0\nproperty float rot_1\nproperty float rot_2\n"
                    "property float rot_3") != std::string::npos);
  const std::string body = bytes.substr(end + 11);
  REQUIRE(body.size() == 17 * 4);
  float fields[17];
  std::memcpy(fields, body.data(), sizeof(fields));
  CHECK(fields[6] == 0.0f);   // DC of 0.5
  CHECK(fields[9] == 0.0f);   // logit(0.5)
  CHECK(fields[13] == 1.0f);  // w

  Scene empty;
  export_gaussians_ply(empty, dir / "empty.ply");
  CHECK(read_bytes(dir / "empty.ply").find("element vertex 0\n") != std::string::npos);
  CHECK(import_gaussians_ply(dir / "empty.ply").gaussians.empty());
}

TEST_CASE("PPM bytes") {
  TempDir dir;
  auto payload = [](const RgbImage& img) {
    const auto b = encode_ppm(img);
    return std::vector<std::uint8_t>(b.end() - static_cast<std::ptrdiff_t>(img.data.size()), b.end());
  };
  for (auto v : payload(RgbImage(2, 2, 0.5))) CHECK(v == 128);
  for (auto v : payload(RgbImage(2, 2, 0.0))) CHECK(v == 0);
  for (auto v : payload(RgbImage(2, 2, 1.0))) CHECK(v == 255);
  for (auto v : payload(RgbImage(1, 1, 1.7))) CHECK(v == 255);
  for (auto v : payload(RgbImage(1, 1, -0.2))) CHECK(v == 0);
  const auto full = encode_ppm(RgbImage(3, 2, 0.5));
  CHECK(std::string(full.begin(), full.begin() + 11) == "P6\n3 2\n255\n");

  RgbImage img(5, 4);
  Rng rng(1);
  for (double& v : img.data) v = rng.index(256) / 255.0;
  write_image(img, dir / "a.ppm");
  const RgbImage back = read_ppm(dir / "a.ppm");
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) < 1e-12);

  RgbImage bad(1, 1, std::nan(""));
  CHECK_THROWS_AS(write_image(bad, dir / "bad.ppm"), InvalidArgument);
}

TEST_CASE("PFM and target views are float32 exact") {
  TempDir dir;
  Rng rng(4);
  std::vector<TargetView> views;
  for (int k = 0; k < 3; ++k) {
    RgbImage img(6, 4);
    for (double& v : img.data) v = static_cast<float>(rng.uniform());
    views.push_back({static_cast<std::uint32_t>(k), oracle::random_camera(rng, 6, 4), img});
  }
  write_pfm(views[0].image, dir / "x.pfm");
  CHECK(read_pfm(dir / "x.pfm").data == views[0].image.data);

  save_target_views(views, dir / "views");
  const auto back = load_target_views(dir / "views");
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back[k].prompt_id == views[k].prompt_id);
    CHECK(back[k].image.data == views[k].image.data);
    CHECK((back[k].camera.world_to_view - views[k].camera.world_to_view).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(back[k].camera.intr.fov_y_deg == views[k].camera.intr.fov_y_deg);
  }
  CHECK_THROWS_AS(load_target_views(dir / "nowhere"), IoError);
}

TEST_CASE("scene from manifest") {
  TempDir dir;
  write_text(dir / "cube.ply", kCubePly);
  write_text(dir / "m.json", R"({"composition_prompt": "cubes", "entities": [
      {"id": 1, "prompt": "a", "mesh": "cube.ply"},
      {"id": 2, "prompt": "b", "mesh": "cube.ply", "bbox": {"min": [-2, -2, -2], "max": [2, 2, 2]}}],
    "optim": {"initial_points": 16, "seed": 3}})");
  const SceneManifest m = load_manifest(dir / "m.json");
  const Scene s = init_scene_from_manifest(m);
  CHECK(s.gaussians.size() == 16);
  CHECK(s.composition_prompt == "cubes");
  CHECK(s.entity(2).bbox_pinned);
  CHECK(s.entity(1).bbox == Aabb3{Vec3::Zero(), Vec3::Ones()});
  CHECK(init_scene_from_manifest(m).gaussians == s.gaussians);
}
