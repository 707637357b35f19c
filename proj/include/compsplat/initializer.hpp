#pragma once

#include "compsplat/math.hpp"
#include "compsplat/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace compsplat {

/// Colored point geometry of one entity, in the shared world frame.
struct EntityMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> colors;  // per vertex, in [0, 1]
  int entity_id = 1;
  std::string prompt;
};

/// Distance from each point to its nearest other point (uniform-grid search).
/// Fewer than two points: 0.01 for each, with a warning on stderr.
std::vector<double> nearest_neighbor_distance(std::span<const Vec3> points);

/// Smallest pairwise distance, i.e. the minimum of nearest_neighbor_distance.
double min_pair_distance(std::span<const Vec3> points);

/// N Gaussians drawn from the mesh vertices: without replacement when
/// N <= M, otherwise every vertex plus resampled vertices jittered by
/// 0.5 x their nearest-neighbour distance. Scale from the NN distance
/// (per point, or the global minimum with scalar_nn), opacity 0.1.
GaussianSet init_entity_from_mesh(const EntityMesh& mesh, std::size_t n, Rng& rng, bool scalar_nn = false);

/// Uniform positions and colors in the box, log-scale ln(0.05 x mean extent).
GaussianSet random_init_in_bbox(const Aabb3& bbox, std::size_t n, Rng& rng, int entity_id = 1);

/// Splits `total` proportionally to `weights` by largest remainder (ties go
/// to the earlier entry).
std::vector<std::size_t> proportional_allocation(std::span<const std::size_t> weights, std::size_t total);

struct EntitySpec {
  EntityMesh mesh;
  /// Layout box; when set the entity box is pinned to it.
  std::optional<Aabb3> bbox_override;
};

struct InitOptions {
  std::size_t total_points = 1000;
  bool scalar_nn = false;
  bool random_init = false;  // uniform Gaussians in each entity box instead of mesh points
  std::uint64_t seed = 0;
};

/// Entity-by-entity initialization in the given order, boxes computed from
/// the initialized positions unless overridden.
Scene init_scene(std::span<const EntitySpec> entities, const std::string& composition_prompt, const Aabb3& bbox_std,
                 const InitOptions& options);

/// Appends a new entity built from `mesh`. Existing Gaussians are untouched;
/// freeze_existing marks every previous entity frozen. Throws InvalidArgument
/// for a duplicate id.
void add_entity(Scene& scene, const EntityMesh& mesh, std::size_t n, Rng& rng, bool freeze_existing,
                bool scalar_nn = false);

}  // namespace compsplat
