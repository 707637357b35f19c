#pragma once

#include "compsplat/camera.hpp"
#include "compsplat/guidance.hpp"
#include "compsplat/renderer.hpp"
#include "compsplat/scene.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace compsplat {

/// Linear interpolation from `start` (iteration 0) to `end` (last iteration).
struct LrSchedule {
  double start = 1e-3;
  double end = 1e-3;

  double at(int iteration, int total_iters) const;
  bool operator==(const LrSchedule&) const = default;
};

struct DensifyConfig {
  bool enabled = true;
  double grad_threshold = 2e-4;  // mean position-gradient norm that triggers a clone
  double size_threshold = 0.05;  // largest axis std-dev (world units) that triggers a split
  double prune_opacity = 0.005;
  int every = 200;
  int from = 200;
  int until = -1;  // last densification iteration, -1 for no limit

  bool operator==(const DensifyConfig&) const = default;
};

struct Ablations {
  bool no_do = false;        // composition level only
  bool no_vao = false;       // entity steps in the original frame
  bool random_init = false;  // uniform Gaussians in each entity box

  bool operator==(const Ablations&) const = default;
};

enum class UpdateRule { Sgd, Momentum, Adam };

struct OptimConfig {
  int total_iters = 2000;
  LrSchedule position{1e-3, 1e-5};
  LrSchedule scale{1e-2, 1e-3};
  LrSchedule color{1e-2, 1e-3};
  LrSchedule opacity{0.05, 0.05};
  LrSchedule rotation{1e-3, 1e-3};
  int initial_points = 1000;
  int point_budget = 10000;
  int batch_views = 4;
  Ablations ablations;
  int bbox_refresh_every = 100;
  bool freeze_bbox = false;
  /// Zoom moves centers only (scales are left in the original frame).
  bool vao_positions_only = false;
  /// Entity membership by containment in the entity box instead of tags.
  bool mask_by_containment = false;
  /// Initial scale from the global closest-pair distance instead of per point.
  bool scalar_nn = false;
  /// Probability of the composition level; negative means uniform over L+1 levels.
  double composition_probability = -1.0;
  UpdateRule rule = UpdateRule::Sgd;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-15;
  DensifyConfig densify;
  TimestepSchedule timesteps;
  Precision precision = Precision::Single;
  Vec3 background = Vec3::Constant(0.5);
  std::uint64_t seed = 0;

  /// Empty string when valid, otherwise the first problem found.
  std::string validate() const;
  bool operator==(const OptimConfig&) const = default;
};

/// Zoom of one entity into the standardized box: mu_hat = lam (mu - beta).
struct ZoomState {
  Vec3 beta = Vec3::Zero();
  double lam = 1.0;
  int entity_id = 0;
  bool scales = true;  // log-scales shifted by ln(lam)
};

/// Uniform draw from {0..L}; 0 is the composition level.
int select_level(Rng& rng, int num_entities);

/// beta = centre of bbox_l; lam = min over axes of extent(bbox_std) / extent(bbox_l).
/// Throws DegenerateEntityError when an axis of bbox_l has zero extent.
ZoomState compute_zoom(const Aabb3& bbox_l, const Aabb3& bbox_std, int entity_id = 0, bool scales = true);

std::pair<GaussianSet, ZoomState> zoom_in(const GaussianSet& entity, const Aabb3& bbox_l, const Aabb3& bbox_std,
                                          int entity_id = 0, bool scales = true);
/// Exact inverse of zoom_in. Throws InvalidArgument for lam <= 0.
GaussianSet zoom_back(const GaussianSet& transformed, const ZoomState& state);

/// Rigid world-frame camera that sees the un-zoomed Gaussians exactly as
/// `cam` sees the zoomed ones (view-space coordinates divided by lam).
Camera unzoom_camera(const Camera& cam, const ZoomState& state);

void zoom_in_place(GaussianSet& g, std::span<const std::size_t> indices, const ZoomState& state);
void zoom_back_in_place(GaussianSet& g, std::span<const std::size_t> indices, const ZoomState& state);

/// Gaussians that belong to entity_id: by tag, or by containment in its box
/// (never including frozen entities' Gaussians).
std::vector<std::size_t> entity_members(const Scene& scene, int entity_id, bool by_containment = false);

/// Entries outside entity_id's membership set to exactly zero.
GradientBuffer mask_gradients(const GradientBuffer& grads, const Scene& scene, int entity_id,
                              bool by_containment = false);

/// One plain SGD step over every non-frozen Gaussian with the scheduled
/// per-group rates, then clamping and quaternion renormalization. Throws
/// NumericError (without touching the scene) on non-finite gradients.
void apply_update(Scene& scene, const GradientBuffer& grads, int iteration, const OptimConfig& config);

/// Stateful per-parameter-group update (SGD, momentum or Adam). Only the
/// `active` Gaussians are read, written or have their state advanced.
class ParamOptimizer {
 public:
  explicit ParamOptimizer(const OptimConfig& config, std::size_t n = 0);

  void step(GaussianSet& g, const GradientBuffer& grads, int iteration, std::span<const std::size_t> active);
  /// Re-index state after densification: new[i] takes old[source[i]], or
  /// fresh state when source[i] < 0.
  void remap(std::span<const std::ptrdiff_t> source);
  std::size_t size() const { return steps_.size(); }
  int skipped_steps() const { return skipped_; }

 private:
  struct Moments {
    std::vector<double> first, second;  // 14 values per Gaussian
  };
  void resize(std::size_t n);

  const OptimConfig* config_;
  Moments m_;
  std::vector<std::uint32_t> steps_;
  int skipped_ = 0;
};

/// Running mean of position-gradient norms per Gaussian between densifications.
struct DensifyStats {
  std::vector<double> grad_norm_sum;
  std::vector<std::uint32_t> count;

  void reset(std::size_t n);
  void accumulate(const GradientBuffer& grads, std::span<const std::size_t> active);
  double mean(std::size_t i) const { return count[i] ? grad_norm_sum[i] / count[i] : 0.0; }
};

/// Prune, split and clone (in that order) over non-frozen Gaussians without
/// exceeding the point budget. Returns, for every Gaussian of the new set,
/// the index it came from (-1 for newly created ones).
std::vector<std::ptrdiff_t> densify_and_prune(Scene& scene, const DensifyStats& stats, const OptimConfig& config,
                                              Rng& rng);

struct TraceRow {
  int iteration = 0;
  int level = 0;
  double timestep = 0.0;
  double loss = 0.0;
  double psnr = 0.0;
  std::size_t gaussian_count = 0;
};

struct OptimReport {
  std::vector<TraceRow> trace;
  bool aborted = false;
  std::string error;
  int skipped_steps = 0;

  /// "iteration,level,timestep,loss,psnr,gaussian_count" plus one row per step.
  std::string to_csv() const;
};

/// Training-camera source for a prompt. For entity prompts with VAO the
/// camera lives in the standardized frame around bbox_std.
class ViewSampler {
 public:
  virtual ~ViewSampler() = default;
  virtual Camera sample(Rng& rng, std::uint32_t prompt_id) = 0;
};

class RangeViewSampler : public ViewSampler {
 public:
  explicit RangeViewSampler(CameraRanges ranges) : ranges_(ranges) {}
  Camera sample(Rng& rng, std::uint32_t prompt_id) override;

 private:
  CameraRanges ranges_;
};

/// Draws uniformly among the stored target cameras of the prompt, falling
/// back to `fallback` ranges for prompts without targets.
class TargetViewSampler : public ViewSampler {
 public:
  TargetViewSampler(const PhotometricProvider& targets, CameraRanges fallback)
      : targets_(&targets), fallback_(fallback) {}
  Camera sample(Rng& rng, std::uint32_t prompt_id) override;

 private:
  const PhotometricProvider* targets_;
  RangeViewSampler fallback_;
};

struct Providers {
  GuidanceProvider* provider_2d = nullptr;  // composition level only; may be null
  GuidanceProvider* provider_3d = nullptr;  // both levels; required
  ViewSampler* views = nullptr;             // required
};

/// The decomposed / volume-adaptive optimization loop over an owned scene.
class DynamicOptimizer {
 public:
  DynamicOptimizer(Scene& scene, OptimConfig config, Providers providers);

  /// Runs one iteration: level choice, guidance, update, bbox refresh and
  /// densification as scheduled. Guidance errors propagate.
  TraceRow step(int iteration);
  /// step() for every iteration; guidance/transport errors end the run with
  /// a partial report.
  OptimReport run(const std::function<void(const TraceRow&)>& on_step = {});

  const OptimConfig& config() const { return config_; }
  int skipped_steps() const { return optimizer_.skipped_steps(); }

 private:
  int choose_level();
  double composition_step(int iteration, double t);
  double entity_step(int iteration, double t, int entity_id);
  void commit(int iteration, const GradientBuffer& grads, std::span<const std::size_t> active);

  Scene& scene_;
  OptimConfig config_;
  Providers providers_;
  Rng rng_;
  ParamOptimizer optimizer_;
  DensifyStats stats_;
  RenderOptions render_opts_;
};

OptimReport run_dynamic_optimization(Scene& scene, const OptimConfig& config, const Providers& providers);

}  // namespace compsplat
