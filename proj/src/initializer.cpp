#include "compsplat/initializer.hpp"

#include "compsplat/error.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace compsplat {

namespace {

constexpr double kFallbackNn = 0.01;
constexpr double kMinNn = 1e-7;

void check_mesh(const EntityMesh& mesh) {
  if (mesh.vertices.empty())
    throw EmptyEntityError("mesh of entity " + std::to_string(mesh.entity_id) + " has no vertices");
  if (mesh.colors.size() != mesh.vertices.size())
    throw InvalidArgument("mesh of entity " + std::to_string(mesh.entity_id) + " has " +
                          std::to_string(mesh.colors.size()) + " colors for " +
                          std::to_string(mesh.vertices.size()) + " vertices");
  for (const auto& v : mesh.vertices)
    if (!v.allFinite()) throw InvalidArgument("mesh vertex is not finite");
  for (const auto& c : mesh.colors)
    if (!c.allFinite() || (c.array() < 0.0).any() || (c.array() > 1.0).any())
      throw InvalidArgument("mesh color outside [0, 1]");
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

std::vector<double> nearest_neighbor_distance(std::span<const Vec3> points) {
  const std::size_t m = points.size();
  if (m < 2) {
    std::cerr << "warning: nearest-neighbour distance needs at least two points; using " << kFallbackNn << "\n";
    return std::vector<double>(m, kFallbackNn);
  }

  Aabb3 box{points[0], points[0]};
  for (const auto& p : points) box.expand(p);
  const double max_ext = box.extent().maxCoeff();
  double cell = max_ext / std::cbrt(static_cast<double>(m));
  if (!(cell > 0.0)) cell = 1.0;  // every point coincides

  auto key_of = [&](const Vec3& p) {
    const Vec3 q = (p - box.min) / cell;
    return CellKey{static_cast<std::int64_t>(std::floor(q.x())), static_cast<std::int64_t>(std::floor(q.y())),
                   static_cast<std::int64_t>(std::floor(q.z()))};
  };
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid;
  grid.reserve(m);
  for (std::size_t i = 0; i < m; ++i) grid[key_of(points[i])].push_back(i);
  const auto max_ring = static_cast<std::int64_t>(std::ceil(max_ext / cell)) + 1;

  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const CellKey c = key_of(points[i]);
    double best2 = std::numeric_limits<double>::infinity();
    for (std::int64_t r = 0; r <= max_ring; ++r) {
      // Visit only the shell of cells at Chebyshev distance r.
      for (std::int64_t dx = -r; dx <= r; ++dx)
        for (std::int64_t dy = -r; dy <= r; ++dy)
          for (std::int64_t dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
            if (it == grid.end()) continue;
            for (std::size_t j : it->second) {
              if (j == i) continue;
              best2 = std::min(best2, (points[i] - points[j]).squaredNorm());
            }
          }
      // Anything outside the visited cube is farther than r cells.
      const double reach = static_cast<double>(r) * cell;
      if (best2 <= reach * reach) break;
    }
    out[i] = std::sqrt(best2);
  }
  return out;
}

double min_pair_distance(std::span<const Vec3> points) {
  const auto nn = nearest_neighbor_distance(points);
  return nn.empty() ? kFallbackNn : *std::min_element(nn.begin(), nn.end());
}

GaussianSet init_entity_from_mesh(const EntityMesh& mesh, std::size_t n, Rng& rng, bool scalar_nn) {
  check_mesh(mesh);
  if (n < 1) throw InvalidArgument("entity needs at least one Gaussian");
  const std::size_t m = mesh.vertices.size();
  std::vector<double> nn = nearest_neighbor_distance(mesh.vertices);
  if (scalar_nn) std::fill(nn.begin(), nn.end(), *std::min_element(nn.begin(), nn.end()));
  for (double& d : nn) d = std::max(d, kMinNn);

  GaussianSet out;
  out.reserve(n);
  auto emit = [&](std::size_t v, const Vec3& position) {
    Gaussian g;
    g.position = position;
    g.color = mesh.colors[v];
    g.log_scale = Vec3::Constant(std::log(nn[v]));
    g.opacity = 0.1;
    g.entity = mesh.entity_id;
    out.push_back(g);
  };

  if (n <= m) {
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng.index(m - k));
      std::swap(order[k], order[j]);
      emit(order[k], mesh.vertices[order[k]]);
    }
  } else {
    for (std::size_t v = 0; v < m; ++v) emit(v, mesh.vertices[v]);
    for (std::size_t k = m; k < n; ++k) {
      const auto v = static_cast<std::size_t>(rng.index(m));
      const Vec3 jitter(rng.normal(), rng.normal(), rng.normal());
      emit(v, mesh.vertices[v] + 0.5 * nn[v] * jitter);
    }
  }
  return out;
}

GaussianSet random_init_in_bbox(const Aabb3& bbox, std::size_t n, Rng& rng, int entity_id) {
  const Vec3 ext = bbox.extent();
  if (!bbox.valid() || !(ext.array() > 0.0).all())
    throw DegenerateEntityError("random init box of entity " + std::to_string(entity_id) +
                                " has a zero-extent axis");
  const double log_s = std::log(0.05 * ext.mean());
  GaussianSet out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Gaussian g;
    for (int a = 0; a < 3; ++a) g.position[a] = rng.uniform(bbox.min[a], bbox.max[a]);
    for (int a = 0; a < 3; ++a) g.color[a] = rng.uniform();
    g.log_scale = Vec3::Constant(log_s);
    g.opacity = 0.1;
    g.entity = entity_id;
    out.push_back(g);
  }
  return out;
}

std::vector<std::size_t> proportional_allocation(std::span<const std::size_t> weights, std::size_t total) {
  const std::size_t sum = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  if (weights.empty() || sum == 0) throw InvalidArgument("proportional allocation needs positive weights");
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder numerator, index)
  std::size_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const unsigned __int128 num = static_cast<unsigned __int128>(total) * weights[i];
    out[i] = static_cast<std::size_t>(num / sum);
    remainders.emplace_back(static_cast<std::size_t>(num % sum), i);
    given += out[i];
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < total; ++k, ++given) ++out[remainders[k].second];
  return out;
}

Scene init_scene(std::span<const EntitySpec> entities, const std::string& composition_prompt, const Aabb3& bbox_std,
                 const InitOptions& options) {
  if (entities.empty()) throw InvalidArgument("scene needs at least one entity");
  if (options.total_points < entities.size())
    throw InvalidArgument("total points " + std::to_string(options.total_points) + " is fewer than the " +
                          std::to_string(entities.size()) + " entities");
  std::vector<std::size_t> weights;
  for (const auto& e : entities) {
    check_mesh(e.mesh);
    weights.push_back(e.mesh.vertices.size());
  }
  auto counts = proportional_allocation(weights, options.total_points);
  for (auto& c : counts) c = std::max<std::size_t>(c, 1);

  Scene scene;
  scene.composition_prompt = composition_prompt;
  scene.bbox_std = bbox_std;
  Rng rng(options.seed);
  for (std::size_t k = 0; k < entities.size(); ++k) {
    const EntitySpec& spec = entities[k];
    if (scene.has_entity(spec.mesh.entity_id))
      throw InvalidArgument("duplicate entity id " + std::to_string(spec.mesh.entity_id));
    EntityMeta meta;
    meta.id = spec.mesh.entity_id;
    meta.prompt = spec.mesh.prompt;
    GaussianSet slice;
    if (options.random_init) {
      Aabb3 box{spec.mesh.vertices[0], spec.mesh.vertices[0]};
      for (const auto& v : spec.mesh.vertices) box.expand(v);
      slice = random_init_in_bbox(spec.bbox_override.value_or(box), counts[k], rng, meta.id);
    } else {
      slice = init_entity_from_mesh(spec.mesh, counts[k], rng, options.scalar_nn);
    }
    scene.gaussians.append(slice);
    scene.entities.push_back(meta);
    if (spec.bbox_override) {
      scene.entities.back().bbox = *spec.bbox_override;
      scene.entities.back().bbox_pinned = true;
    } else {
      compute_entity_bbox(scene, meta.id);
    }
  }
  return scene;
}

void add_entity(Scene& scene, const EntityMesh& mesh, std::size_t n, Rng& rng, bool freeze_existing,
                bool scalar_nn) {
  if (scene.has_entity(mesh.entity_id))
    throw InvalidArgument("duplicate entity id " + std::to_string(mesh.entity_id));
  GaussianSet slice = init_entity_from_mesh(mesh, n, rng, scalar_nn);
  if (freeze_existing)
    for (auto& e : scene.entities) e.frozen = true;
  scene.gaussians.append(slice);
  EntityMeta meta;
  meta.id = mesh.entity_id;
  meta.prompt = mesh.prompt;
  scene.entities.push_back(meta);
  compute_entity_bbox(scene, meta.id);
}

}  // namespace compsplat
