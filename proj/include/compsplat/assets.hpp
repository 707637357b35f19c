#pragma once

#include "compsplat/camera.hpp"
#include "compsplat/guidance.hpp"
#include "compsplat/initializer.hpp"
#include "compsplat/optimizer.hpp"
#include "compsplat/renderer.hpp"
#include "compsplat/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace compsplat {

struct ManifestEntity {
  int id = 1;
  std::string prompt;
  std::string mesh;  // as written; relative paths resolve against the manifest directory
  std::optional<Aabb3> bbox;

  bool operator==(const ManifestEntity&) const = default;
};

enum class GuidanceMode { Photometric, Remote };

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::Photometric;
  std::string target_views_dir;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  bool operator==(const GuidanceSpec&) const = default;
};

struct SceneManifest {
  std::string composition_prompt;
  std::vector<ManifestEntity> entities;
  Aabb3 bbox_std = Aabb3::cube(0.5);
  OptimConfig optim;
  CameraRanges camera;
  GuidanceSpec guidance;
  /// Directory the manifest was read from; not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& relative) const;
  bool operator==(const SceneManifest&) const = default;
};

/// Parses and validates a manifest; omitted hyperparameters take the
/// defaults of OptimConfig / CameraRanges. ParseError names the line or the
/// offending field.
SceneManifest load_manifest(const std::filesystem::path& path);
SceneManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
std::string manifest_to_json(const SceneManifest& m);
void save_manifest(const SceneManifest& m, const std::filesystem::path& path);

/// OBJ with `v x y z r g b` lines or PLY (ascii / binary little-endian) with
/// red/green/blue vertex properties (uchar 0..255 or float 0..1).
EntityMesh load_mesh(const std::filesystem::path& path, int entity_id = 1, const std::string& prompt = {});
/// ASCII PLY with float colors.
void save_mesh_ply(const EntityMesh& mesh, const std::filesystem::path& path);

/// Builds the scene described by a manifest (meshes loaded, boxes overridden
/// where given).
Scene init_scene_from_manifest(const SceneManifest& m, std::optional<std::uint64_t> seed = std::nullopt);

/// Binary little-endian PLY in the usual splatting layout. Entity metadata,
/// tags and prompts travel in `comment compsplat ...` header lines.
void export_gaussians_ply(const Scene& scene, const std::filesystem::path& path);
Scene import_gaussians_ply(const std::filesystem::path& path);

/// Binary PPM (P6), byte = floor(255 v + 0.5) clamped to [0, 255].
void write_image(const RgbImage& img, const std::filesystem::path& path);
void write_image(const RenderedImage& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);

/// Little-endian float32 PFM, used for lossless target views.
void write_pfm(const RgbImage& img, const std::filesystem::path& path);
RgbImage read_pfm(const std::filesystem::path& path);

/// Directory of `views.json` plus one PFM per view.
void save_target_views(const std::vector<TargetView>& views, const std::filesystem::path& dir);
std::vector<TargetView> load_target_views(const std::filesystem::path& dir);

}  // namespace compsplat
