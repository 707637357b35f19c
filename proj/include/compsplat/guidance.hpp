#pragma once

#include "compsplat/camera.hpp"
#include "compsplat/renderer.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace compsplat {

/// Diffusion timestep law: uniform in phase1 before `phase_switch_iter`,
/// uniform in phase2 from then on. t is normalized to (0, 1).
struct TimestepSchedule {
  Range phase1{0.02, 0.55};
  Range phase2{0.02, 0.15};
  int phase_switch_iter = 1000;

  bool valid() const;
  bool operator==(const TimestepSchedule&) const = default;
};

double sample_timestep(int iteration, const TimestepSchedule& sched, Rng& rng);

/// w(t). NoiseVariance is sigma_t^2 = 1 - alpha_bar(t) under a cosine
/// schedule, alpha_bar(t) = cos^2(pi t / 2).
enum class Weighting { Constant, NoiseVariance };

double timestep_weight(Weighting w, double t);

struct GuidanceRequest {
  std::uint32_t iteration = 0;
  double timestep = 0.5;
  /// 0 is the composition prompt, l >= 1 the entity prompt.
  std::uint32_t prompt_id = 0;
  Camera camera;
  RgbImage image;
};

/// residual plays (eps_hat - eps); weight plays w(t). cfg_scale is metadata:
/// classifier-free guidance is applied provider-side.
struct GuidanceResponse {
  RgbImage residual;
  double weight = 1.0;
  double cfg_scale = 50.0;
};

class GuidanceProvider {
 public:
  virtual ~GuidanceProvider() = default;
  virtual GuidanceResponse guide(const GuidanceRequest& req) = 0;
  virtual std::string name() const = 0;
};

/// residual = rendered - target, weight as given. Throws InvalidArgument on
/// a shape mismatch.
GuidanceResponse photometric_residual(const RgbImage& rendered, const RgbImage& target, double weight = 1.0);
GuidanceResponse photometric_residual(const RenderedImage& rendered, const RenderedImage& target,
                                      double weight = 1.0);

struct TargetView {
  std::uint32_t prompt_id = 0;
  Camera camera;
  RgbImage image;
};

/// Deterministic stand-in for a diffusion prior: compares the rendered view
/// with the stored target whose camera is closest (smallest rotation angle,
/// then eye distance) among the views registered for the request's prompt.
class PhotometricProvider : public GuidanceProvider {
 public:
  PhotometricProvider() = default;
  explicit PhotometricProvider(std::vector<TargetView> views) : views_(std::move(views)) {}

  void add_view(TargetView v) { views_.push_back(std::move(v)); }
  const std::vector<TargetView>& views() const { return views_; }
  std::vector<const TargetView*> views_for(std::uint32_t prompt_id) const;
  /// Throws LookupError when the prompt has no stored views.
  const TargetView& nearest(std::uint32_t prompt_id, const Camera& cam) const;

  void set_weighting(Weighting w) { weighting_ = w; }
  void set_cfg_scale(double s) { cfg_scale_ = s; }

  GuidanceResponse guide(const GuidanceRequest& req) override;
  std::string name() const override { return "photometric"; }

 private:
  std::vector<TargetView> views_;
  Weighting weighting_ = Weighting::Constant;
  double cfg_scale_ = 50.0;
};

/// w(t) * residual pushed through render_backward: the per-view score
/// distillation gradient. `indices` selects the rendered Gaussians.
GradientBuffer assemble_sds_gradient(const GuidanceResponse& resp, const GaussianSet& gaussians,
                                     std::span<const std::size_t> indices, const Camera& cam,
                                     const RenderOptions& opts);
/// Subset taken from opts.entity (all Gaussians when unset).
GradientBuffer assemble_sds_gradient(const GuidanceResponse& resp, const Scene& scene, const Camera& cam,
                                     const RenderOptions& opts);

/// Mean squared residual, the photometric loss reported in traces.
double residual_mse(const RgbImage& residual);
/// 10 log10(1 / mse) for images in [0, 1]; capped at 100 dB for mse == 0.
double psnr_from_mse(double mse);
double psnr(const RgbImage& a, const RgbImage& b);

}  // namespace compsplat
