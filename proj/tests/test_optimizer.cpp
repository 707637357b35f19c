#include "compsplat/error.hpp"
#include "compsplat/optimizer.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <map>

using namespace compsplat;

namespace {

class FlatTarget : public GuidanceProvider {
 public:
  explicit FlatTarget(double level = 0.2) : level_(level) {}
  GuidanceResponse guide(const GuidanceRequest& req) override {
    prompts.push_back(req.prompt_id);
    GuidanceResponse r;
    r.residual = req.image;
    for (double& v : r.residual.data) v -= level_;
    return r;
  }
  std::string name() const override { return "flat"; }
  std::vector<std::uint32_t> prompts;

 private:
  double level_;
};

Scene three_entities(Rng& rng, std::size_t per = 12) {
  Scene s;
  const std::array<Vec3, 3> centers{Vec3(-0.25, 0, 0), Vec3(0.2, 0.1, 0), Vec3(0.05, -0.25, 0.1)};
  for (int e = 0; e < 3; ++e) {
    GaussianSet g = oracle::random_gaussians(rng, {.count = per, .spread = 0.1});
    for (std::size_t i = 0; i < g.size(); ++i) {
      g.positions[i] += centers[e];
      g.entity_tags[i] = e + 1;
    }
    s.gaussians.append(g);
    s.entities.push_back({e + 1, "entity " + std::to_string(e + 1), {}, false, false});
    compute_entity_bbox(s, e + 1);
  }
  return s;
}

OptimConfig small_config(int iters, std::uint64_t seed = 1) {
  OptimConfig c;
  c.total_iters = iters;
  c.seed = seed;
  c.batch_views = 1;
  c.densify.enabled = false;
  return c;
}

RangeViewSampler small_views() {
  CameraRanges r;
  r.width = r.height = 24;
  return RangeViewSampler(r);
}

bool same_gaussian(const GaussianSet& a, const GaussianSet& b, std::size_t i) {
  return a.positions[i] == b.positions[i] && a.rotations[i] == b.rotations[i] &&
         a.log_scales[i] == b.log_scales[i] && a.opacities[i] == b.opacities[i] && a.colors[i] == b.colors[i] &&
         a.entity_tags[i] == b.entity_tags[i];
}

}  // namespace

TEST_CASE("learning rate schedules hit their endpoints") {
  const OptimConfig c;
  CHECK(c.position.at(0, 2000) == 1e-3);
  CHECK(c.position.at(1999, 2000) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(c.scale.at(0, 2000) == 1e-2);
  CHECK(c.scale.at(1999, 2000) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(c.color.at(1999, 2000) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(c.opacity.at(0, 2000) == 0.05);
  CHECK(c.opacity.at(1999, 2000) == 0.05);
  CHECK(c.rotation.at(1000, 2000) == 1e-3);
  CHECK(c.position.at(5000, 2000) == c.position.at(1999, 2000));
  CHECK(c.position.at(0, 1) == 1e-3);
  CHECK(c.validate().empty());
  CHECK(c.rule == UpdateRule::Sgd);
  CHECK(c.point_budget == 10000);
}

TEST_CASE("config validation") {
  OptimConfig c;
  c.batch_views = 0;
  CHECK_FALSE(c.validate().empty());
  c = OptimConfig{};
  c.position.end = 0.0;
  CHECK_FALSE(c.validate().empty());
  c = OptimConfig{};
  c.timesteps.phase1 = {0.5, 0.1};
  CHECK_FALSE(c.validate().empty());
}

TEST_CASE("zoom worked example") {
  const Aabb3 box{Vec3::Constant(0.2), Vec3::Constant(0.4)};
  const ZoomState z = compute_zoom(box, Aabb3::cube(0.5));
  CHECK((z.beta - Vec3::Constant(0.3)).cwiseAbs().maxCoeff() <= 1e-16);
  CHECK(z.lam == 5.0);

  GaussianSet g;
  Gaussian x;
  x.position = Vec3(0.4, 0.2, 0.3);
  x.log_scale = Vec3::Constant(std::log(0.01));
  g.push_back(x);
  const auto [zoomed, state] = zoom_in(g, box, Aabb3::cube(0.5));
  CHECK((zoomed.positions[0] - Vec3(0.5, -0.5, 0.0)).norm() < 1e-15);
  CHECK(std::exp(zoomed.log_scales[0][0]) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(zoomed.opacities == g.opacities);
  CHECK(zoomed.colors == g.colors);
  CHECK(zoomed.rotations == g.rotations);

  const auto [pos_only, s2] = zoom_in(g, box, Aabb3::cube(0.5), 0, false);
  CHECK(pos_only.log_scales == g.log_scales);
  CHECK(zoom_back(pos_only, s2) == g);
}

TEST_CASE("zoom picks the limiting axis and rejects flat boxes") {
  const Aabb3 box{Vec3(0, 0, 0), Vec3(0.5, 0.1, 0.2)};
  CHECK(compute_zoom(box, Aabb3::cube(0.5)).lam == 2.0);
  CHECK_THROWS_AS(compute_zoom({Vec3(0, 0, 0), Vec3(1, 0, 1)}, Aabb3::cube(0.5)), DegenerateEntityError);
  ZoomState bad;
  bad.lam = 0.0;
  CHECK_THROWS_AS(zoom_back(GaussianSet{}, bad), InvalidArgument);
}

TEST_CASE("zoom round trip over random entities") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    GaussianSet g = oracle::random_gaussians(rng, {.count = 1 + rng.index(20), .spread = rng.uniform(0.01, 3.0)});
    for (auto& p : g.positions) p += Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    Aabb3 box{g.positions[0], g.positions[0]};
    for (const auto& p : g.positions) box.expand(p);
    box.min.array() -= 1e-3;
    box.max.array() += 1e-3;
    const auto [zoomed, z] = zoom_in(g, box, Aabb3::cube(0.5));
    for (const auto& p : zoomed.positions) CHECK(p.cwiseAbs().maxCoeff() <= 0.5 + 1e-12);
    const GaussianSet back = zoom_back(zoomed, z);
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK((back.positions[i] - g.positions[i]).norm() <= 1e-9 * std::max(1.0, g.positions[i].norm()));
      CHECK((back.log_scales[i] - g.log_scales[i]).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, g.log_scales[i].norm()));
    }
  }
}

TEST_CASE("select_level transcript and frequencies") {
  Rng rng(7);
  const std::vector<int> expected{3, 3, 0, 3, 0, 0, 3, 3, 1, 2};
  for (int e : expected) CHECK(select_level(rng, 3) == e);

  Rng r2(123);
  std::array<int, 4> counts{};
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[select_level(r2, 3)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
  CHECK(chi2 < 16.27);  // 3 dof, p = 0.001
  CHECK_THROWS_AS(select_level(r2, 0), InvalidArgument);
}

TEST_CASE("gradient masking keeps only the target entity") {
  Rng rng(3);
  Scene s = three_entities(rng);
  GradientBuffer grads(s.gaussians.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    grads.d_positions[i] = Vec3::Constant(1.0);
    grads.d_opacities[i] = 2.0;
  }
  const GradientBuffer m = mask_gradients(grads, s, 2);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (s.gaussians.entity_tags[i] == 2) {
      CHECK(m.d_opacities[i] == 2.0);
    } else {
      CHECK(m.d_positions[i] == Vec3::Zero());
      CHECK(m.d_opacities[i] == 0.0);
    }
  }
}

TEST_CASE("containment membership skips frozen entities") {
  Scene s;
  Gaussian a;
  a.position = Vec3(0.1, 0, 0);
  a.entity = 1;
  Gaussian b = a;
  b.entity = 2;
  Gaussian c = a;
  c.position = Vec3(3, 0, 0);
  c.entity = 1;
  s.gaussians.push_back(a);
  s.gaussians.push_back(b);
  s.gaussians.push_back(c);
  s.entities = {{1, "a", Aabb3::cube(0.5), false, true}, {2, "b", Aabb3::cube(0.5), false, true}};
  CHECK(entity_members(s, 1) == std::vector<std::size_t>{0, 2});
  CHECK(entity_members(s, 1, true) == std::vector<std::size_t>{0, 1});
  s.entity(2).frozen = true;
  CHECK(entity_members(s, 1, true) == std::vector<std::size_t>{0});
}

TEST_CASE("sgd update clamps and renormalizes") {
  Scene s;
  Gaussian x;
  x.opacity = 0.99;
  x.color = Vec3(0.999, 0.5, 0.001);
  s.gaussians.push_back(x);
  s.entities.push_back({1, "e", Aabb3::cube(0.5), false, true});
  GradientBuffer grads(1);
  grads.d_opacities[0] = -10.0;
  grads.d_colors[0] = Vec3(-10, 0, 10);
  grads.d_rotations[0] = Vec4(0, -100, 0, 0);
  OptimConfig c;
  apply_update(s, grads, 0, c);
  CHECK(s.gaussians.opacities[0] <= 1.0);
  CHECK(s.gaussians.colors[0][0] <= 1.0);
  CHECK(s.gaussians.colors[0][2] >= 0.0);
  CHECK(s.gaussians.rotations[0].norm() == doctest::Approx(1.0).epsilon(1e-14));

  const Scene before = s;
  grads.d_positions[0] = Vec3(std::nan(""), 0, 0);
  CHECK_THROWS_AS(apply_update(s, grads, 1, c), NumericError);
  CHECK(s.gaussians == before.gaussians);

  s.entity(1).frozen = true;
  grads.d_positions[0] = Vec3(1, 1, 1);
  apply_update(s, grads, 2, c);
  CHECK(s.gaussians == before.gaussians);
}

TEST_CASE("stateful optimizer only touches active Gaussians") {
  Rng rng(11);
  for (UpdateRule rule : {UpdateRule::Sgd, UpdateRule::Momentum, UpdateRule::Adam}) {
    OptimConfig c;
    c.rule = rule;
    GaussianSet g = oracle::random_gaussians(rng, {.count = 6});
    ParamOptimizer opt(c, g.size());
    GradientBuffer grads(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) grads.d_positions[i] = Vec3(1, -1, 0.5);
    const GaussianSet before = g;
    const std::vector<std::size_t> active{1, 4};
    opt.step(g, grads, 0, active);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool is_active = i == 1 || i == 4;
      CHECK(same_gaussian(g, before, i) != is_active);
    }
    CHECK(g.positions[1].x() < before.positions[1].x());

    const std::vector<std::ptrdiff_t> source{4, -1, 0};
    opt.remap(source);
    CHECK(opt.size() == 3);
  }
}

TEST_CASE("densification respects thresholds and the budget") {
  Rng rng(5);
  Scene s = three_entities(rng, 10);
  OptimConfig c;
  c.point_budget = 34;
  DensifyStats stats;
  stats.reset(s.gaussians.size());
  GradientBuffer grads(s.gaussians.size());
  for (std::size_t i = 0; i < grads.size(); ++i) grads.d_positions[i] = Vec3(1, 0, 0);
  std::vector<std::size_t> all(grads.size());
  std::iota(all.begin(), all.end(), 0);
  stats.accumulate(grads, all);
  s.gaussians.opacities[0] = 0.001;
  s.gaussians.log_scales[1] = Vec3(std::log(0.2), std::log(0.01), std::log(0.01));
  const std::vector<int> tags = s.gaussians.entity_tags;
  const auto source = densify_and_prune(s, stats, c, rng);
  CHECK(s.gaussians.size() == 34);
  CHECK(source.size() == 34);
  CHECK(std::count(source.begin(), source.end(), 0) == 0);  // pruned
  CHECK(validate_scene(s).empty());
  for (std::size_t i = 0; i < source.size(); ++i)
    if (source[i] >= 0) CHECK(s.gaussians.entity_tags[i] == tags[static_cast<std::size_t>(source[i])]);

  SUBCASE("no-op thresholds leave the set unchanged") {
    Rng r2(6);
    Scene t = three_entities(r2, 10);
    const Scene before = t;
    DensifyStats quiet;
    quiet.reset(t.gaussians.size());
    OptimConfig loose;
    loose.densify.size_threshold = 1e9;
    densify_and_prune(t, quiet, loose, r2);
    CHECK(t.gaussians == before.gaussians);
  }
}

TEST_CASE("split halves the major axis") {
  Scene s;
  Gaussian x;
  x.log_scale = Vec3(std::log(0.2), std::log(0.01), std::log(0.01));
  x.opacity = 0.5;
  s.gaussians.push_back(x);
  s.entities.push_back({1, "e", Aabb3::cube(1.0), false, true});
  DensifyStats stats;
  stats.reset(1);
  Rng rng(1);
  OptimConfig c;
  densify_and_prune(s, stats, c, rng);
  REQUIRE(s.gaussians.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::exp(s.gaussians.log_scales[i][0]) == doctest::Approx(0.1));
    CHECK(std::abs(s.gaussians.positions[i].x()) == doctest::Approx(0.1));
  }
  CHECK(s.gaussians.positions[0].x() == doctest::Approx(-s.gaussians.positions[1].x()));
}

TEST_CASE("entity steps never touch other entities") {
  Rng rng(21);
  for (int schedule = 0; schedule < 10; ++schedule) {
    Scene s = three_entities(rng, 8);
    if (schedule % 3 == 1) s.entity(2).frozen = true;
    OptimConfig c = small_config(50, 100 + schedule);
    c.composition_probability = 0.0;
    c.rule = schedule % 2 ? UpdateRule::Adam : UpdateRule::Sgd;
    c.mask_by_containment = schedule % 4 == 3;
    FlatTarget provider;
    auto views = small_views();
    DynamicOptimizer opt(s, c, {nullptr, &provider, &views});
    for (int it = 0; it < 50; ++it) {
      const GaussianSet before = s.gaussians;
      const TraceRow row = opt.step(it);
      REQUIRE(row.level >= 1);
      for (std::size_t i = 0; i < before.size(); ++i)
        if (before.entity_tags[i] != row.level) REQUIRE(same_gaussian(s.gaussians, before, i));
    }
  }
}

TEST_CASE("frozen entities are rendered but never updated") {
  Rng rng(2);
  Scene s = three_entities(rng, 8);
  s.entity(1).frozen = true;
  const Scene before = s;
  OptimConfig c = small_config(30);
  FlatTarget provider;
  auto views = small_views();
  const auto report = run_dynamic_optimization(s, c, {nullptr, &provider, &views});
  CHECK_FALSE(report.aborted);
  for (std::size_t i = 0; i < s.gaussians.size(); ++i)
    if (s.gaussians.entity_tags[i] == 1) CHECK(same_gaussian(s.gaussians, before.gaussians, i));
  for (const auto& row : report.trace) CHECK(row.level != 1);
}

TEST_CASE("no_do only issues composition prompts") {
  Rng rng(4);
  Scene s = three_entities(rng, 6);
  OptimConfig c = small_config(25);
  c.ablations.no_do = true;
  c.batch_views = 2;
  FlatTarget provider;
  auto views = small_views();
  const auto report = run_dynamic_optimization(s, c, {nullptr, &provider, &views});
  CHECK(provider.prompts.size() == 50);
  for (auto p : provider.prompts) CHECK(p == 0);
  for (const auto& row : report.trace) CHECK(row.level == 0);
}

TEST_CASE("both providers answer at the composition level") {
  Rng rng(4);
  Scene s = three_entities(rng, 6);
  OptimConfig c = small_config(20);
  c.composition_probability = 1.0;
  FlatTarget p2, p3;
  auto views = small_views();
  run_dynamic_optimization(s, c, {&p2, &p3, &views});
  CHECK(p2.prompts.size() == 20);
  CHECK(p3.prompts.size() == 20);
}

TEST_CASE("zero iterations leave the scene untouched") {
  Rng rng(8);
  Scene s = three_entities(rng, 5);
  const Scene before = s;
  OptimConfig c = small_config(0);
  FlatTarget provider;
  auto views = small_views();
  const auto report = run_dynamic_optimization(s, c, {nullptr, &provider, &views});
  CHECK(report.trace.empty());
  CHECK(s.gaussians == before.gaussians);
  CHECK(report.to_csv() == "iteration,level,timestep,loss,psnr,gaussian_count\n");
}

TEST_CASE("optimization reduces the loss and keeps the count within budget") {
  Rng rng(9);
  Scene s = three_entities(rng, 10);
  OptimConfig c = small_config(300);
  c.batch_views = 2;
  c.densify.enabled = true;
  c.densify.every = 50;
  c.densify.from = 50;
  c.densify.grad_threshold = 0.0;
  c.point_budget = 60;
  FlatTarget provider(0.8);
  auto views = small_views();
  std::map<int, std::vector<double>> losses;
  const auto report = run_dynamic_optimization(s, c, {nullptr, &provider, &views});
  for (const auto& row : report.trace) {
    CHECK(row.gaussian_count <= 60);
    losses[row.level].push_back(row.loss);
  }
  CHECK(s.gaussians.size() == 60);
  CHECK(validate_scene(s).empty());
  const auto& comp = losses[0];
  REQUIRE(comp.size() > 20);
  const double head = std::accumulate(comp.begin(), comp.begin() + 10, 0.0);
  const double tail = std::accumulate(comp.end() - 10, comp.end(), 0.0);
  CHECK(tail < 0.5 * head);
}

TEST_CASE("same seed, same trace") {
  auto once = [] {
    Rng rng(12);
    Scene s = three_entities(rng, 6);
    OptimConfig c = small_config(40, 77);
    FlatTarget provider;
    auto views = small_views();
    return run_dynamic_optimization(s, c, {nullptr, &provider, &views}).to_csv();
  };
  const std::string a = once();
  CHECK(a == once());
  CHECK(std::count(a.begin(), a.end(), '\n') == 41);
}

TEST_CASE("optimizer construction errors") {
  Rng rng(1);
  Scene s = three_entities(rng, 3);
  FlatTarget provider;
  auto views = small_views();
  CHECK_THROWS_AS(DynamicOptimizer(s, small_config(1), {nullptr, nullptr, &views}), InvalidArgument);
  OptimConfig bad = small_config(1);
  bad.batch_views = 0;
  CHECK_THROWS_AS(DynamicOptimizer(s, bad, {nullptr, &provider, &views}), InvalidArgument);
  Scene empty;
  CHECK_THROWS_AS(DynamicOptimizer(empty, small_config(1), {nullptr, &provider, &views}), InvalidArgument);
}

TEST_CASE("guidance errors end the run with a partial report") {
  class Failing : public GuidanceProvider {
   public:
    GuidanceResponse guide(const GuidanceRequest&) override {
      if (++calls > 5) throw TransportError("gone");
      GuidanceResponse r;
      r.residual = RgbImage(24, 24);
      return r;
    }
    std::string name() const override { return "failing"; }
    int calls = 0;
  } provider;
  Rng rng(1);
  Scene s = three_entities(rng, 3);
  auto views = small_views();
  const auto report = run_dynamic_optimization(s, small_config(20), {nullptr, &provider, &views});
  CHECK(report.aborted);
  CHECK(report.trace.size() == 5);
  CHECK(report.error.find("gone") != std::string::npos);
}

TEST_CASE("unzoomed camera sees the original Gaussians like the zoomed camera sees the zoomed ones") {
  Rng rng(30);
  GaussianSet g = oracle::random_gaussians(rng, {.count = 12, .spread = 0.05});
  for (auto& p : g.positions) p += Vec3(0.3, -0.2, 0.1);
  Aabb3 box{g.positions[0], g.positions[0]};
  for (const auto& p : g.positions) box.expand(p);
  const auto [zoomed, z] = zoom_in(g, box, Aabb3::cube(0.5));
  const Camera cam = oracle::random_camera(rng, 32, 32, 1.0);
  RenderOptions o;
  o.precision = Precision::Double;
  const RgbImage a = render(zoomed, cam, o).rgb;
  const RgbImage b = render(g, unzoom_camera(cam, z), o).rgb;
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-9);
}
