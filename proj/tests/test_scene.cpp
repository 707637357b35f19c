#include "compsplat/error.hpp"
#include "compsplat/scene.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace compsplat;

namespace {

Scene scene_with(const std::vector<std::pair<Vec3, int>>& points, int entities) {
  Scene s;
  for (const auto& [p, tag] : points) {
    Gaussian g;
    g.position = p;
    g.entity = tag;
    s.gaussians.push_back(g);
  }
  for (int id = 1; id <= entities; ++id) s.entities.push_back({id, "e" + std::to_string(id), {}, false, false});
  return s;
}

}  // namespace

TEST_CASE("entity bbox of a single point is degenerate at that point") {
  Scene s = scene_with({{Vec3(0.1, 0.2, 0.3), 1}}, 1);
  const Aabb3 b = compute_entity_bbox(s, 1);
  CHECK(b.min == Vec3(0.1, 0.2, 0.3));
  CHECK(b.max == Vec3(0.1, 0.2, 0.3));
  CHECK(s.entity(1).bbox == b);
}

TEST_CASE("entity bbox spans the extreme positions") {
  Scene s = scene_with({{Vec3(-1, 0, 0), 1}, {Vec3(1, 2, 3), 1}}, 1);
  const Aabb3 b = compute_entity_bbox(s, 1);
  CHECK(b.min == Vec3(-1, 0, 0));
  CHECK(b.max == Vec3(1, 2, 3));
}

TEST_CASE("entity bbox matches a brute-force min/max scan and ignores other tags") {
  Rng rng(3);
  std::vector<std::pair<Vec3, int>> pts;
  for (int i = 0; i < 100; ++i)
    pts.push_back({Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)), 1 + int(rng.index(2))});
  Scene s = scene_with(pts, 2);
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& [p, tag] : pts)
    if (tag == 2)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
  const Aabb3 b = compute_entity_bbox(s, 2);
  CHECK(b.min == lo);
  CHECK(b.max == hi);

  SUBCASE("idempotent and order independent") {
    CHECK(compute_entity_bbox(s, 2) == b);
    std::vector<std::size_t> perm(s.gaussians.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    Scene shuffled = s;
    shuffled.gaussians = s.gaussians.select(perm);
    CHECK(compute_entity_bbox(shuffled, 2) == b);
  }
  SUBCASE("moving a point outside grows the box to contain it") {
    const auto slice = entity_slice(s, 2);
    const std::size_t i = slice.source_index(0);
    s.gaussians.positions[i] = b.max + Vec3(0.5, 0.0, 1.0);
    const Aabb3 grown = compute_entity_bbox(s, 2);
    CHECK(grown.contains(s.gaussians.positions[i]));
    CHECK(grown.contains(b.min));
  }
}

TEST_CASE("entity bbox errors") {
  Scene s = scene_with({{Vec3::Zero(), 1}}, 2);
  CHECK_THROWS_AS(compute_entity_bbox(s, 7), LookupError);
  CHECK_THROWS_AS(compute_entity_bbox(s, 2), EmptyEntityError);
}

TEST_CASE("entity slices partition the set") {
  std::vector<std::pair<Vec3, int>> pts;
  const int tags[] = {1, 2, 2, 1, 2, 2, 1, 2, 1, 2};
  for (int i = 0; i < 10; ++i) pts.push_back({Vec3(i, 0, 0), tags[i]});
  Scene s = scene_with(pts, 2);

  const auto two = entity_slice(s, 2);
  CHECK(two.size() == 6);
  CHECK(entity_slice(s, 1).size() == 4);
  for (std::size_t k = 1; k < two.size(); ++k) CHECK(two.source_index(k - 1) < two.source_index(k));
  CHECK_THROWS_AS(entity_slice(s, 5), LookupError);

  std::vector<std::size_t> all;
  for (int id : s.entity_ids()) {
    const auto sl = entity_slice(s, id);
    all.insert(all.end(), sl.indices().begin(), sl.indices().end());
  }
  std::sort(all.begin(), all.end());
  CHECK(s.gaussians.select(all) == s.gaussians);

  Scene single = scene_with({{Vec3::Zero(), 1}, {Vec3::Ones(), 1}}, 1);
  CHECK(entity_slice(single, 1).materialize() == single.gaussians);
}

TEST_CASE("validate_scene reports injected faults by index and field") {
  Rng rng(1);
  Scene s = oracle::random_scene(rng, {.count = 10, .entities = 2});
  CHECK(validate_scene(s).empty());

  Scene bad = s;
  bad.gaussians.opacities[3] = 1.5;
  auto v = validate_scene(bad);
  REQUIRE(v.size() == 1);
  CHECK(v[0].index == 3);
  CHECK(v[0].field == "opacity");

  bad = s;
  bad.gaussians.rotations[5] *= 2.0;
  v = validate_scene(bad);
  REQUIRE(v.size() == 1);
  CHECK(v[0].index == 5);
  CHECK(v[0].field == "rotation");
  CHECK(v[0].message.find("normalized") != std::string::npos);

  bad = s;
  bad.gaussians.entity_tags[0] = 9;
  v = validate_scene(bad);
  REQUIRE(v.size() == 1);
  CHECK(v[0].field == "entity_tag");

  bad = s;
  bad.entities.push_back(bad.entities[0]);
  CHECK_FALSE(validate_scene(bad).empty());
}

TEST_CASE("covariance is R S S^T R^T") {
  GaussianSet g;
  Gaussian x;
  const double h = std::sqrt(0.5);
  x.rotation = Vec4(h, 0, 0, h);  // 90 degrees about z
  x.log_scale = Vec3(std::log(2.0), std::log(1.0), std::log(0.5));
  g.push_back(x);
  const Mat3 c = g.covariance(0);
  CHECK(c(0, 0) == doctest::Approx(1.0));
  CHECK(c(1, 1) == doctest::Approx(4.0));
  CHECK(c(2, 2) == doctest::Approx(0.25));
  CHECK(std::abs(c(0, 1)) < 1e-12);
}
