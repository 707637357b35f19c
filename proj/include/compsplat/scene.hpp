#pragma once

#include "compsplat/math.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace compsplat {

struct Aabb3 {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  bool valid() const { return (min.array() <= max.array()).all(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool intersects(const Aabb3& o) const {
    return (min.array() <= o.max.array()).all() && (o.min.array() <= max.array()).all();
  }
  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  bool operator==(const Aabb3&) const = default;

  static Aabb3 cube(double half) { return {Vec3::Constant(-half), Vec3::Constant(half)}; }
};

/// One Gaussian, used when moving single elements in and out of a GaussianSet.
struct Gaussian {
  Vec3 position = Vec3::Zero();
  Vec4 rotation{1.0, 0.0, 0.0, 0.0};  // (w, x, y, z)
  Vec3 log_scale = Vec3::Zero();
  double opacity = 0.1;
  Vec3 color = Vec3::Constant(0.5);
  int entity = 1;
};

/// Structure-of-arrays storage for N anisotropic Gaussians.
///
/// Covariance is carried as a unit quaternion plus per-axis log standard
/// deviations: Sigma = R S S^T R^T with S = diag(exp(log_scales)).
struct GaussianSet {
  std::vector<Vec3> positions;
  std::vector<Vec4> rotations;
  std::vector<Vec3> log_scales;
  std::vector<double> opacities;
  std::vector<Vec3> colors;
  std::vector<int> entity_tags;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  void reserve(std::size_t n);
  void push_back(const Gaussian& g);
  Gaussian at(std::size_t i) const;
  void set(std::size_t i, const Gaussian& g);
  void append(const GaussianSet& other);
  /// Elements at `indices`, in that order.
  GaussianSet select(std::span<const std::size_t> indices) const;

  Mat3 covariance(std::size_t i) const;

  bool operator==(const GaussianSet&) const = default;
};

struct EntityMeta {
  int id = 1;
  std::string prompt;
  Aabb3 bbox;
  bool frozen = false;
  /// Box supplied by the layout (manifest override); never refreshed from positions.
  bool bbox_pinned = false;

  bool operator==(const EntityMeta&) const = default;
};

struct Scene {
  GaussianSet gaussians;
  std::vector<EntityMeta> entities;
  std::string composition_prompt;
  Aabb3 bbox_std = Aabb3::cube(0.5);

  bool has_entity(int id) const;
  const EntityMeta& entity(int id) const;
  EntityMeta& entity(int id);
  std::vector<int> entity_ids() const;
};

/// Read-only, order-stable view of the Gaussians carrying one entity tag.
class EntitySlice {
 public:
  EntitySlice(const GaussianSet& set, std::vector<std::size_t> indices)
      : set_(&set), indices_(std::move(indices)) {}

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  /// Index into the owning GaussianSet of the k-th slice element.
  std::size_t source_index(std::size_t k) const { return indices_[k]; }
  const std::vector<std::size_t>& indices() const { return indices_; }
  Gaussian operator[](std::size_t k) const { return set_->at(indices_[k]); }
  GaussianSet materialize() const { return set_->select(indices_); }

 private:
  const GaussianSet* set_;
  std::vector<std::size_t> indices_;
};

/// Min/max of the positions tagged `entity_id`; the result is stored in the
/// entity's metadata. Throws LookupError / EmptyEntityError.
Aabb3 compute_entity_bbox(Scene& scene, int entity_id);

/// Same box without touching the scene.
Aabb3 entity_bbox(const Scene& scene, int entity_id);

/// Recompute every unpinned, non-empty entity box from its tagged positions.
void refresh_entity_bboxes(Scene& scene);

EntitySlice entity_slice(const Scene& scene, int entity_id);

struct Violation {
  std::size_t index = 0;  // Gaussian index, or entity position for entity-level fields
  std::string field;
  std::string message;
};

/// Checks every scene invariant. Reports rather than throws.
std::vector<Violation> validate_scene(const Scene& scene);

}  // namespace compsplat
