#include "compsplat/assets.hpp"
#include "compsplat/error.hpp"
#include "compsplat/initializer.hpp"
#include "compsplat/optimizer.hpp"
#include "compsplat/protocol.hpp"
#include "compsplat/renderer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

using namespace compsplat;
namespace fs = std::filesystem;

namespace {

std::optional<Precision> precision_from_env() {
  const char* v = std::getenv("COMPSPLAT_PRECISION");
  if (!v || !*v) return std::nullopt;
  const std::string s(v);
  if (s == "f32") return Precision::Single;
  if (s == "f64") return Precision::Double;
  throw InvalidArgument("COMPSPLAT_PRECISION must be f32 or f64, got '" + s + "'");
}

struct RemoteTarget {
  std::string host;
  std::uint16_t port = 0;
};

std::optional<RemoteTarget> parse_guidance(const std::string& spec) {
  if (spec.empty() || spec == "photometric") return std::nullopt;
  if (spec.rfind("remote:", 0) != 0) throw InvalidArgument("--guidance must be photometric or remote:HOST:PORT");
  const std::string rest = spec.substr(7);
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0) throw InvalidArgument("--guidance remote needs HOST:PORT");
  const int port = std::stoi(rest.substr(colon + 1));
  if (port <= 0 || port > 65535) throw InvalidArgument("port out of range: " + rest.substr(colon + 1));
  return RemoteTarget{rest.substr(0, colon), static_cast<std::uint16_t>(port)};
}

int parse_turntable(const std::string& spec) {
  if (spec.rfind("turntable:", 0) != 0) throw InvalidArgument("--views must look like turntable:N");
  const int n = std::stoi(spec.substr(10));
  if (n < 1) throw InvalidArgument("turntable needs at least one view");
  return n;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

struct InitArgs {
  std::string manifest, out;
  std::optional<std::uint64_t> seed;
};

int run_init(const InitArgs& a) {
  const SceneManifest m = load_manifest(a.manifest);
  const Scene s = init_scene_from_manifest(m, a.seed);
  export_gaussians_ply(s, a.out);
  std::fprintf(stderr, "initialized %zu Gaussians over %zu entities\n", s.gaussians.size(), s.entities.size());
  return 0;
}

struct OptimizeArgs {
  std::string manifest, scene, out, report;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  std::vector<std::string> ablate;
  std::string guidance;
  bool freeze_bbox = false;
  bool vao_positions_only = false;
  bool mask_by_containment = false;
};

int run_optimize(const OptimizeArgs& a) {
  SceneManifest m = load_manifest(a.manifest);
  OptimConfig& c = m.optim;
  if (a.seed) c.seed = *a.seed;
  if (a.iters) c.total_iters = *a.iters;
  for (const auto& name : a.ablate) {
    if (name == "no_do") c.ablations.no_do = true;
    else if (name == "no_vao") c.ablations.no_vao = true;
    else if (name == "random_init") c.ablations.random_init = true;
    else throw InvalidArgument("unknown ablation '" + name + "'");
  }
  c.freeze_bbox = c.freeze_bbox || a.freeze_bbox;
  c.vao_positions_only = c.vao_positions_only || a.vao_positions_only;
  c.mask_by_containment = c.mask_by_containment || a.mask_by_containment;
  if (const auto p = precision_from_env()) c.precision = *p;

  Scene scene;
  if (c.ablations.random_init) {
    std::fprintf(stderr, "random_init: re-initializing entities uniformly in their boxes\n");
    scene = init_scene_from_manifest(m);
  } else {
    scene = import_gaussians_ply(a.scene);
  }

  std::unique_ptr<GuidanceProvider> provider;
  std::unique_ptr<ViewSampler> views;
  std::unique_ptr<PhotometricProvider> targets;
  std::optional<RemoteTarget> remote = parse_guidance(a.guidance);
  if (!remote && a.guidance.empty() && m.guidance.mode == GuidanceMode::Remote)
    remote = RemoteTarget{m.guidance.host, m.guidance.port};
  if (remote) {
    provider = std::make_unique<RemoteGuidanceProvider>(remote->host, remote->port);
    views = std::make_unique<RangeViewSampler>(m.camera);
  } else {
    if (m.guidance.target_views_dir.empty())
      throw InvalidArgument("photometric guidance needs guidance.target_views_dir in the manifest");
    auto stored = load_target_views(m.resolve(m.guidance.target_views_dir));
    if (c.ablations.no_vao) {
      // Entity targets live in the standardized frame; move their cameras
      // back to the world frame around the entity's current box.
      for (auto& v : stored)
        if (v.prompt_id != 0 && scene.has_entity(static_cast<int>(v.prompt_id))) {
          const EntityMeta& e = scene.entity(static_cast<int>(v.prompt_id));
          v.camera = unzoom_camera(v.camera, compute_zoom(e.bbox, scene.bbox_std, e.id));
        }
    }
    targets = std::make_unique<PhotometricProvider>(std::move(stored));
    views = std::make_unique<TargetViewSampler>(*targets, m.camera);
  }
  GuidanceProvider* p3 = remote ? provider.get() : targets.get();

  const OptimReport report = run_dynamic_optimization(scene, c, {nullptr, p3, views.get()});
  write_text(a.report, report.to_csv());
  export_gaussians_ply(scene, a.out);
  if (report.skipped_steps > 0) std::fprintf(stderr, "%d steps skipped on non-finite gradients\n", report.skipped_steps);
  if (report.aborted) {
    std::fprintf(stderr, "error: optimization stopped after %zu iterations: %s\n", report.trace.size(),
                 report.error.c_str());
    return 1;
  }
  return 0;
}

struct RenderArgs {
  std::string scene, views = "turntable:8", outdir;
  std::optional<int> entity;
  bool zoomed = false;
  double radius = 1.0, elevation = 15.0, fov = 40.0;
  int width = 256, height = 256;
};

int run_render(const RenderArgs& a) {
  Scene scene = import_gaussians_ply(a.scene);
  const int n = parse_turntable(a.views);
  Intrinsics intr;
  intr.width = a.width;
  intr.height = a.height;
  intr.fov_y_deg = a.fov;
  if (!intr.valid()) throw InvalidArgument("invalid image size or field of view");

  RenderOptions o;
  if (const auto p = precision_from_env()) o.precision = *p;
  Vec3 center = Vec3::Zero();
  std::vector<std::size_t> subset;
  GaussianSet* source = &scene.gaussians;
  GaussianSet zoomed;
  if (a.entity) {
    const EntityMeta& meta = scene.entity(*a.entity);
    subset = entity_members(scene, *a.entity);
    if (subset.empty()) throw EmptyEntityError("entity " + std::to_string(*a.entity) + " has no Gaussians");
    if (a.zoomed) {
      zoomed = zoom_in(scene.gaussians.select(subset), meta.bbox, scene.bbox_std, meta.id).first;
      source = &zoomed;
      subset.resize(zoomed.size());
      for (std::size_t i = 0; i < subset.size(); ++i) subset[i] = i;
      center = scene.bbox_std.center();
    } else {
      center = meta.bbox.center();
    }
  } else {
    subset.resize(scene.gaussians.size());
    for (std::size_t i = 0; i < subset.size(); ++i) subset[i] = i;
  }

  fs::create_directories(a.outdir);
  const auto cams = turntable(n, a.radius, a.elevation, intr, center);
  for (std::size_t k = 0; k < cams.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.ppm", k);
    write_image(render_subset(*source, subset, cams[k], o), fs::path(a.outdir) / name);
  }
  std::fprintf(stderr, "wrote %zu frames to %s\n", cams.size(), a.outdir.c_str());
  return 0;
}

struct EditArgs {
  std::string scene, mesh, prompt, out;
  std::optional<int> id;
  int points = 1000;
  bool freeze_existing = false;
  bool scalar_nn = false;
  std::uint64_t seed = 0;
};

int run_edit_add(const EditArgs& a) {
  Scene scene = import_gaussians_ply(a.scene);
  int id = 1;
  for (int existing : scene.entity_ids()) id = std::max(id, existing + 1);
  if (a.id) id = *a.id;
  const EntityMesh mesh = load_mesh(a.mesh, id, a.prompt);
  Rng rng(a.seed);
  add_entity(scene, mesh, static_cast<std::size_t>(a.points), rng, a.freeze_existing, a.scalar_nn);
  export_gaussians_ply(scene, a.out);
  std::fprintf(stderr, "added entity %d with %d Gaussians\n", id, a.points);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compositional Gaussian splatting: scene init, optimization, rendering and editing"};
  app.require_subcommand(1);

  InitArgs init;
  auto* ci = app.add_subcommand("init", "Initialize Gaussians from the manifest's entity meshes");
  ci->add_option("--manifest", init.manifest, "Scene manifest (JSON)")->required()->check(CLI::ExistingFile);
  ci->add_option("--out", init.out, "Output Gaussian PLY")->required();
  ci->add_option("--seed", init.seed, "Override the manifest seed");

  OptimizeArgs opt;
  auto* co = app.add_subcommand("optimize", "Run the decomposed optimization");
  co->add_option("--manifest", opt.manifest, "Scene manifest (JSON)")->required()->check(CLI::ExistingFile);
  co->add_option("--scene", opt.scene, "Initialized Gaussian PLY")->required();
  co->add_option("--out", opt.out, "Output Gaussian PLY")->required();
  co->add_option("--report", opt.report, "Per-iteration CSV report")->required();
  co->add_option("--seed", opt.seed, "Override the manifest seed");
  co->add_option("--iters", opt.iters, "Override the iteration count")->check(CLI::NonNegativeNumber);
  co->add_option("--ablate", opt.ablate, "no_do, no_vao or random_init (repeatable)")
      ->check(CLI::IsMember({"no_do", "no_vao", "random_init"}));
  co->add_option("--guidance", opt.guidance, "photometric or remote:HOST:PORT");
  co->add_flag("--freeze-bbox", opt.freeze_bbox, "Keep entity boxes at their initial values");
  co->add_flag("--vao-positions-only", opt.vao_positions_only, "Zoom moves centers only");
  co->add_flag("--mask-by-containment", opt.mask_by_containment, "Entity membership by box containment");

  RenderArgs ren;
  auto* cr = app.add_subcommand("render", "Render turntable frames as PPM");
  cr->add_option("--scene", ren.scene, "Gaussian PLY")->required();
  cr->add_option("--views", ren.views, "turntable:N")->capture_default_str();
  cr->add_option("--outdir", ren.outdir, "Output directory")->required();
  cr->add_option("--entity", ren.entity, "Render only this entity");
  cr->add_flag("--zoomed", ren.zoomed, "Render the entity in the standardized frame");
  cr->add_option("--radius", ren.radius, "Orbit radius")->capture_default_str();
  cr->add_option("--elevation", ren.elevation, "Orbit elevation in degrees")->capture_default_str();
  cr->add_option("--fov", ren.fov, "Vertical field of view in degrees")->capture_default_str();
  cr->add_option("--width", ren.width, "Image width")->capture_default_str();
  cr->add_option("--height", ren.height, "Image height")->capture_default_str();

  EditArgs ed;
  auto* ce = app.add_subcommand("edit-add", "Add a new entity to a trained scene");
  ce->add_option("--scene", ed.scene, "Gaussian PLY")->required();
  ce->add_option("--mesh", ed.mesh, "Colored mesh of the new entity (PLY or OBJ)")->required();
  ce->add_option("--prompt", ed.prompt, "Entity prompt")->required();
  ce->add_option("--out", ed.out, "Output Gaussian PLY")->required();
  ce->add_option("--id", ed.id, "Entity id (default: one past the largest)");
  ce->add_option("--points", ed.points, "Gaussians for the new entity")->capture_default_str()->check(CLI::PositiveNumber);
  ce->add_option("--seed", ed.seed, "Sampling seed")->capture_default_str();
  ce->add_flag("--freeze-existing", ed.freeze_existing, "Freeze every existing entity");
  ce->add_flag("--scalar-nn", ed.scalar_nn, "Initial scale from the global closest-pair distance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ci) return run_init(init);
    if (*co) return run_optimize(opt);
    if (*cr) return run_render(ren);
    if (*ce) return run_edit_add(ed);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
