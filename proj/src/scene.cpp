#include "compsplat/scene.hpp"

#include "compsplat/error.hpp"

#include <algorithm>
#include <set>

namespace compsplat {

void GaussianSet::reserve(std::size_t n) {
  positions.reserve(n);
  rotations.reserve(n);
  log_scales.reserve(n);
  opacities.reserve(n);
  colors.reserve(n);
  entity_tags.reserve(n);
}

void GaussianSet::push_back(const Gaussian& g) {
  positions.push_back(g.position);
  rotations.push_back(g.rotation);
  log_scales.push_back(g.log_scale);
  opacities.push_back(g.opacity);
  colors.push_back(g.color);
  entity_tags.push_back(g.entity);
}

Gaussian GaussianSet::at(std::size_t i) const {
  return {positions[i], rotations[i], log_scales[i], opacities[i], colors[i], entity_tags[i]};
}

void GaussianSet::set(std::size_t i, const Gaussian& g) {
  positions[i] = g.position;
  rotations[i] = g.rotation;
  log_scales[i] = g.log_scale;
  opacities[i] = g.opacity;
  colors[i] = g.color;
  entity_tags[i] = g.entity;
}

void GaussianSet::append(const GaussianSet& other) {
  reserve(size() + other.size());
  for (std::size_t i = 0; i < other.size(); ++i) push_back(other.at(i));
}

GaussianSet GaussianSet::select(std::span<const std::size_t> indices) const {
  GaussianSet out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(at(i));
  return out;
}

Mat3 GaussianSet::covariance(std::size_t i) const {
  const Vec4 q = rotations[i].normalized();
  const Mat3 m = rotation_from_quaternion<double>(q) * log_scales[i].array().exp().matrix().asDiagonal();
  return m * m.transpose();
}

bool Scene::has_entity(int id) const {
  return std::any_of(entities.begin(), entities.end(), [id](const EntityMeta& e) { return e.id == id; });
}

const EntityMeta& Scene::entity(int id) const {
  for (const auto& e : entities)
    if (e.id == id) return e;
  throw LookupError("unknown entity id " + std::to_string(id));
}

EntityMeta& Scene::entity(int id) {
  for (auto& e : entities)
    if (e.id == id) return e;
  throw LookupError("unknown entity id " + std::to_string(id));
}

std::vector<int> Scene::entity_ids() const {
  std::vector<int> ids;
  ids.reserve(entities.size());
  for (const auto& e : entities) ids.push_back(e.id);
  return ids;
}

Aabb3 entity_bbox(const Scene& scene, int entity_id) {
  (void)scene.entity(entity_id);
  const auto& g = scene.gaussians;
  bool found = false;
  Aabb3 box;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.entity_tags[i] != entity_id) continue;
    if (!found) {
      box = {g.positions[i], g.positions[i]};
      found = true;
    } else {
      box.expand(g.positions[i]);
    }
  }
  if (!found) throw EmptyEntityError("entity " + std::to_string(entity_id) + " has no Gaussians");
  return box;
}

Aabb3 compute_entity_bbox(Scene& scene, int entity_id) {
  Aabb3 box = entity_bbox(scene, entity_id);
  scene.entity(entity_id).bbox = box;
  return box;
}

void refresh_entity_bboxes(Scene& scene) {
  std::vector<bool> seen(scene.entities.size(), false);
  std::vector<Aabb3> boxes(scene.entities.size());
  const auto& g = scene.gaussians;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t e = 0; e < scene.entities.size(); ++e) {
      if (scene.entities[e].id != g.entity_tags[i]) continue;
      if (!seen[e]) {
        boxes[e] = {g.positions[i], g.positions[i]};
        seen[e] = true;
      } else {
        boxes[e].expand(g.positions[i]);
      }
      break;
    }
  }
  for (std::size_t e = 0; e < scene.entities.size(); ++e)
    if (seen[e] && !scene.entities[e].bbox_pinned) scene.entities[e].bbox = boxes[e];
}

EntitySlice entity_slice(const Scene& scene, int entity_id) {
  (void)scene.entity(entity_id);
  std::vector<std::size_t> idx;
  const auto& tags = scene.gaussians.entity_tags;
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == entity_id) idx.push_back(i);
  return EntitySlice(scene.gaussians, std::move(idx));
}

namespace {

bool finite(const auto& v) { return v.allFinite(); }

}  // namespace

std::vector<Violation> validate_scene(const Scene& scene) {
  std::vector<Violation> out;
  const auto& g = scene.gaussians;
  const std::size_t n = g.size();

  if (g.rotations.size() != n || g.log_scales.size() != n || g.opacities.size() != n ||
      g.colors.size() != n || g.entity_tags.size() != n) {
    out.push_back({0, "gaussians", "per-Gaussian arrays have inconsistent lengths"});
    return out;
  }
  if (scene.entities.empty()) out.push_back({0, "entities", "scene has no entities"});

  std::set<int> ids;
  for (std::size_t e = 0; e < scene.entities.size(); ++e) {
    const auto& meta = scene.entities[e];
    if (!ids.insert(meta.id).second)
      out.push_back({e, "entity.id", "duplicate entity id " + std::to_string(meta.id)});
    if (meta.id < 1) out.push_back({e, "entity.id", "entity id must be >= 1"});
    if (!meta.bbox.valid()) out.push_back({e, "entity.bbox", "bbox min exceeds max"});
  }
  if (!scene.bbox_std.valid()) out.push_back({0, "bbox_std", "bbox min exceeds max"});

  for (std::size_t i = 0; i < n; ++i) {
    if (!finite(g.positions[i])) out.push_back({i, "position", "non-finite position"});
    const double qn = g.rotations[i].norm();
    if (!std::isfinite(qn) || std::abs(qn - 1.0) > 1e-6)
      out.push_back({i, "rotation", "quaternion not normalized (norm " + std::to_string(qn) + ")"});
    if (!finite(g.log_scales[i])) out.push_back({i, "log_scale", "non-finite log scale"});
    const double a = g.opacities[i];
    if (!(a >= 0.0 && a <= 1.0)) out.push_back({i, "opacity", "opacity outside [0,1]"});
    const auto& c = g.colors[i];
    if (!((c.array() >= 0.0).all() && (c.array() <= 1.0).all()))
      out.push_back({i, "color", "color outside [0,1]"});
    if (!ids.contains(g.entity_tags[i]))
      out.push_back({i, "entity_tag", "tag " + std::to_string(g.entity_tags[i]) + " names no entity"});
  }
  return out;
}

}  // namespace compsplat
