#include "compsplat/guidance.hpp"

#include "compsplat/error.hpp"

#include <cmath>
#include <numbers>
#include <limits>

namespace compsplat {

bool TimestepSchedule::valid() const {
  auto ok = [](const Range& r) { return r.lo > 0.0 && r.hi < 1.0 && r.lo <= r.hi; };
  return ok(phase1) && ok(phase2) && phase_switch_iter >= 0;
}

double sample_timestep(int iteration, const TimestepSchedule& sched, Rng& rng) {
  if (iteration < 0) throw InvalidArgument("iteration must be non-negative");
  const Range& r = iteration < sched.phase_switch_iter ? sched.phase1 : sched.phase2;
  return rng.uniform(r.lo, r.hi);
}

double timestep_weight(Weighting w, double t) {
  switch (w) {
    case Weighting::Constant:
      return 1.0;
    case Weighting::NoiseVariance: {
      const double s = std::sin(0.5 * std::numbers::pi * t);
      return s * s;
    }
  }
  return 1.0;
}

GuidanceResponse photometric_residual(const RgbImage& rendered, const RgbImage& target, double weight) {
  if (!rendered.same_shape(target) || rendered.data.size() != target.data.size())
    throw InvalidArgument("photometric residual: rendered " + std::to_string(rendered.width) + "x" +
                          std::to_string(rendered.height) + " vs target " + std::to_string(target.width) + "x" +
                          std::to_string(target.height));
  GuidanceResponse resp;
  resp.residual = RgbImage(rendered.width, rendered.height);
  for (std::size_t i = 0; i < rendered.data.size(); ++i) resp.residual.data[i] = rendered.data[i] - target.data[i];
  resp.weight = weight;
  return resp;
}

GuidanceResponse photometric_residual(const RenderedImage& rendered, const RenderedImage& target, double weight) {
  return photometric_residual(rendered.rgb, target.rgb, weight);
}

std::vector<const TargetView*> PhotometricProvider::views_for(std::uint32_t prompt_id) const {
  std::vector<const TargetView*> out;
  for (const auto& v : views_)
    if (v.prompt_id == prompt_id) out.push_back(&v);
  return out;
}

const TargetView& PhotometricProvider::nearest(std::uint32_t prompt_id, const Camera& cam) const {
  const TargetView* best = nullptr;
  double best_angle = std::numeric_limits<double>::infinity();
  double best_dist = std::numeric_limits<double>::infinity();
  const Vec3 eye = cam.eye();
  for (const auto& v : views_) {
    if (v.prompt_id != prompt_id) continue;
    const double angle = rotation_angle_between(v.camera.world_to_view, cam.world_to_view);
    const double dist = (v.camera.eye() - eye).norm();
    if (angle < best_angle - 1e-12 || (std::abs(angle - best_angle) <= 1e-12 && dist < best_dist)) {
      best = &v;
      best_angle = angle;
      best_dist = dist;
    }
  }
  if (!best) throw LookupError("no target view stored for prompt " + std::to_string(prompt_id));
  return *best;
}

GuidanceResponse PhotometricProvider::guide(const GuidanceRequest& req) {
  const TargetView& target = nearest(req.prompt_id, req.camera);
  auto resp = photometric_residual(req.image, target.image, timestep_weight(weighting_, req.timestep));
  resp.cfg_scale = cfg_scale_;
  return resp;
}

GradientBuffer assemble_sds_gradient(const GuidanceResponse& resp, const GaussianSet& gaussians,
                                     std::span<const std::size_t> indices, const Camera& cam,
                                     const RenderOptions& opts) {
  if (resp.residual.width != cam.intr.width || resp.residual.height != cam.intr.height)
    throw InvalidArgument("guidance residual does not match the render size");
  if (resp.weight == 0.0) return GradientBuffer(gaussians.size());
  RgbImage upstream = resp.residual;
  if (resp.weight != 1.0)
    for (double& v : upstream.data) v *= resp.weight;
  return render_backward_subset(gaussians, indices, cam, upstream, opts);
}

GradientBuffer assemble_sds_gradient(const GuidanceResponse& resp, const Scene& scene, const Camera& cam,
                                     const RenderOptions& opts) {
  std::vector<std::size_t> idx;
  const auto& g = scene.gaussians;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!opts.entity || g.entity_tags[i] == *opts.entity) idx.push_back(i);
  return assemble_sds_gradient(resp, g, idx, cam, opts);
}

double residual_mse(const RgbImage& residual) {
  if (residual.data.empty()) return 0.0;
  double s = 0.0;
  for (double v : residual.data) s += v * v;
  return s / static_cast<double>(residual.data.size());
}

double psnr_from_mse(double mse) {
  if (mse <= 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const RgbImage& a, const RgbImage& b) {
  return psnr_from_mse(residual_mse(photometric_residual(a, b).residual));
}

}  // namespace compsplat
