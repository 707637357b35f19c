#include "compsplat/optimizer.hpp"

#include "compsplat/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace compsplat {

double LrSchedule::at(int iteration, int total_iters) const {
  if (total_iters <= 1) return start;
  const double p = std::clamp(static_cast<double>(iteration) / (total_iters - 1), 0.0, 1.0);
  return start + (end - start) * p;
}

std::string OptimConfig::validate() const {
  if (total_iters < 0) return "total_iters must be >= 0";
  for (const auto* s : {&position, &scale, &color, &opacity, &rotation})
    if (!(s->start > 0.0) || !(s->end > 0.0)) return "learning rates must be positive";
  if (batch_views < 1) return "batch_views must be >= 1";
  if (point_budget < 1) return "point_budget must be >= 1";
  if (initial_points < 1) return "initial_points must be >= 1";
  if (bbox_refresh_every < 0) return "bbox_refresh_every must be >= 0";
  if (composition_probability > 1.0) return "composition_probability must be <= 1";
  if (!timesteps.valid()) return "invalid timestep schedule";
  if (densify.every < 1) return "densify.every must be >= 1";
  return {};
}

int select_level(Rng& rng, int num_entities) {
  if (num_entities < 1) throw InvalidArgument("select_level needs at least one entity");
  return static_cast<int>(rng.index(static_cast<std::uint64_t>(num_entities) + 1));
}

ZoomState compute_zoom(const Aabb3& bbox_l, const Aabb3& bbox_std, int entity_id, bool scales) {
  const Vec3 ext = bbox_l.extent();
  if (!(ext.array() > 0.0).all())
    throw DegenerateEntityError("entity " + std::to_string(entity_id) + " bbox has a zero-extent axis");
  ZoomState z;
  z.beta = bbox_l.center();
  z.lam = (bbox_std.extent().array() / ext.array()).minCoeff();
  z.entity_id = entity_id;
  z.scales = scales;
  return z;
}

void zoom_in_place(GaussianSet& g, std::span<const std::size_t> indices, const ZoomState& z) {
  const double ln_lam = std::log(z.lam);
  for (std::size_t i : indices) {
    g.positions[i] = z.lam * (g.positions[i] - z.beta);
    if (z.scales) g.log_scales[i].array() += ln_lam;
  }
}

void zoom_back_in_place(GaussianSet& g, std::span<const std::size_t> indices, const ZoomState& z) {
  if (!(z.lam > 0.0)) throw InvalidArgument("zoom scale must be positive");
  const double ln_lam = std::log(z.lam);
  for (std::size_t i : indices) {
    g.positions[i] = g.positions[i] / z.lam + z.beta;
    if (z.scales) g.log_scales[i].array() -= ln_lam;
  }
}

Camera unzoom_camera(const Camera& cam, const ZoomState& z) {
  if (!(z.lam > 0.0)) throw InvalidArgument("zoom scale must be positive");
  Camera out = cam;
  const Mat3 R = cam.world_to_view.topLeftCorner<3, 3>();
  out.world_to_view.topRightCorner<3, 1>() = cam.world_to_view.topRightCorner<3, 1>() / z.lam - R * z.beta;
  return out;
}

std::pair<GaussianSet, ZoomState> zoom_in(const GaussianSet& entity, const Aabb3& bbox_l, const Aabb3& bbox_std,
                                          int entity_id, bool scales) {
  const ZoomState z = compute_zoom(bbox_l, bbox_std, entity_id, scales);
  GaussianSet out = entity;
  std::vector<std::size_t> all(out.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  zoom_in_place(out, all, z);
  return {std::move(out), z};
}

GaussianSet zoom_back(const GaussianSet& transformed, const ZoomState& state) {
  GaussianSet out = transformed;
  std::vector<std::size_t> all(out.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  zoom_back_in_place(out, all, state);
  return out;
}

std::vector<std::size_t> entity_members(const Scene& scene, int entity_id, bool by_containment) {
  const EntityMeta& meta = scene.entity(entity_id);
  const auto& g = scene.gaussians;
  std::vector<std::size_t> out;
  if (!by_containment) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g.entity_tags[i] == entity_id) out.push_back(i);
    return out;
  }
  std::vector<int> frozen;
  for (const auto& e : scene.entities)
    if (e.frozen && e.id != entity_id) frozen.push_back(e.id);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::find(frozen.begin(), frozen.end(), g.entity_tags[i]) != frozen.end()) continue;
    if (meta.bbox.contains(g.positions[i])) out.push_back(i);
  }
  return out;
}

GradientBuffer mask_gradients(const GradientBuffer& grads, const Scene& scene, int entity_id, bool by_containment) {
  if (grads.size() != scene.gaussians.size()) throw InvalidArgument("gradient buffer does not match the scene");
  const auto members = entity_members(scene, entity_id, by_containment);
  GradientBuffer out(grads.size());
  for (std::size_t i : members) {
    out.d_positions[i] = grads.d_positions[i];
    out.d_rotations[i] = grads.d_rotations[i];
    out.d_log_scales[i] = grads.d_log_scales[i];
    out.d_opacities[i] = grads.d_opacities[i];
    out.d_colors[i] = grads.d_colors[i];
  }
  return out;
}

namespace {

bool entry_finite(const GradientBuffer& g, std::size_t i) {
  return g.d_positions[i].allFinite() && g.d_rotations[i].allFinite() && g.d_log_scales[i].allFinite() &&
         std::isfinite(g.d_opacities[i]) && g.d_colors[i].allFinite();
}

void project_to_valid(GaussianSet& g, std::size_t i) {
  g.opacities[i] = std::clamp(g.opacities[i], 0.0, 1.0);
  g.colors[i] = g.colors[i].cwiseMax(0.0).cwiseMin(1.0);
  const double n = g.rotations[i].norm();
  if (n > 0.0 && std::isfinite(n))
    g.rotations[i] /= n;
  else
    g.rotations[i] = Vec4(1.0, 0.0, 0.0, 0.0);
}

std::vector<std::size_t> unfrozen_indices(const Scene& scene) {
  std::vector<int> frozen;
  for (const auto& e : scene.entities)
    if (e.frozen) frozen.push_back(e.id);
  std::vector<std::size_t> out;
  const auto& tags = scene.gaussians.entity_tags;
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (std::find(frozen.begin(), frozen.end(), tags[i]) == frozen.end()) out.push_back(i);
  return out;
}

constexpr int kParamsPerGaussian = 14;  // 3 position, 4 rotation, 3 log-scale, 1 opacity, 3 color

}  // namespace

void apply_update(Scene& scene, const GradientBuffer& grads, int iteration, const OptimConfig& config) {
  auto& g = scene.gaussians;
  if (grads.size() != g.size()) throw InvalidArgument("gradient buffer does not match the scene");
  const auto active = unfrozen_indices(scene);
  for (std::size_t i : active)
    if (!entry_finite(grads, i)) throw NumericError("non-finite gradient at Gaussian " + std::to_string(i));
  const int T = config.total_iters;
  const double lp = config.position.at(iteration, T), lr = config.rotation.at(iteration, T);
  const double ls = config.scale.at(iteration, T), lo = config.opacity.at(iteration, T);
  const double lc = config.color.at(iteration, T);
  for (std::size_t i : active) {
    g.positions[i] -= lp * grads.d_positions[i];
    g.rotations[i] -= lr * grads.d_rotations[i];
    g.log_scales[i] -= ls * grads.d_log_scales[i];
    g.opacities[i] -= lo * grads.d_opacities[i];
    g.colors[i] -= lc * grads.d_colors[i];
    project_to_valid(g, i);
  }
}

ParamOptimizer::ParamOptimizer(const OptimConfig& config, std::size_t n) : config_(&config) { resize(n); }

void ParamOptimizer::resize(std::size_t n) {
  m_.first.resize(n * kParamsPerGaussian, 0.0);
  m_.second.resize(n * kParamsPerGaussian, 0.0);
  steps_.resize(n, 0);
}

void ParamOptimizer::remap(std::span<const std::ptrdiff_t> source) {
  Moments m;
  m.first.assign(source.size() * kParamsPerGaussian, 0.0);
  m.second.assign(source.size() * kParamsPerGaussian, 0.0);
  std::vector<std::uint32_t> steps(source.size(), 0);
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i] < 0) continue;
    const auto s = static_cast<std::size_t>(source[i]);
    std::copy_n(m_.first.begin() + s * kParamsPerGaussian, kParamsPerGaussian, m.first.begin() + i * kParamsPerGaussian);
    std::copy_n(m_.second.begin() + s * kParamsPerGaussian, kParamsPerGaussian,
                m.second.begin() + i * kParamsPerGaussian);
    steps[i] = steps_[s];
  }
  m_ = std::move(m);
  steps_ = std::move(steps);
}

void ParamOptimizer::step(GaussianSet& g, const GradientBuffer& grads, int iteration,
                          std::span<const std::size_t> active) {
  if (grads.size() != g.size()) throw InvalidArgument("gradient buffer does not match the Gaussian set");
  if (steps_.size() < g.size()) resize(g.size());
  for (std::size_t i : active) {
    if (!entry_finite(grads, i)) {
      ++skipped_;
      throw NumericError("non-finite gradient at Gaussian " + std::to_string(i) + "; step skipped");
    }
  }

  const OptimConfig& c = *config_;
  const int T = c.total_iters;
  double lr[kParamsPerGaussian];
  std::fill_n(lr + 0, 3, c.position.at(iteration, T));
  std::fill_n(lr + 3, 4, c.rotation.at(iteration, T));
  std::fill_n(lr + 7, 3, c.scale.at(iteration, T));
  lr[10] = c.opacity.at(iteration, T);
  std::fill_n(lr + 11, 3, c.color.at(iteration, T));

  double param[kParamsPerGaussian];
  double grad[kParamsPerGaussian];
  for (std::size_t i : active) {
    Eigen::Map<Vec3>(param + 0) = g.positions[i];
    Eigen::Map<Vec4>(param + 3) = g.rotations[i];
    Eigen::Map<Vec3>(param + 7) = g.log_scales[i];
    param[10] = g.opacities[i];
    Eigen::Map<Vec3>(param + 11) = g.colors[i];
    Eigen::Map<Vec3>(grad + 0) = grads.d_positions[i];
    Eigen::Map<Vec4>(grad + 3) = grads.d_rotations[i];
    Eigen::Map<Vec3>(grad + 7) = grads.d_log_scales[i];
    grad[10] = grads.d_opacities[i];
    Eigen::Map<Vec3>(grad + 11) = grads.d_colors[i];

    double* m1 = m_.first.data() + i * kParamsPerGaussian;
    double* m2 = m_.second.data() + i * kParamsPerGaussian;
    const std::uint32_t t = ++steps_[i];
    switch (c.rule) {
      case UpdateRule::Sgd:
        for (int k = 0; k < kParamsPerGaussian; ++k) param[k] -= lr[k] * grad[k];
        break;
      case UpdateRule::Momentum:
        for (int k = 0; k < kParamsPerGaussian; ++k) {
          m1[k] = c.momentum * m1[k] + grad[k];
          param[k] -= lr[k] * m1[k];
        }
        break;
      case UpdateRule::Adam: {
        const double bc1 = 1.0 - std::pow(c.adam_beta1, t);
        const double bc2 = 1.0 - std::pow(c.adam_beta2, t);
        for (int k = 0; k < kParamsPerGaussian; ++k) {
          m1[k] = c.adam_beta1 * m1[k] + (1.0 - c.adam_beta1) * grad[k];
          m2[k] = c.adam_beta2 * m2[k] + (1.0 - c.adam_beta2) * grad[k] * grad[k];
          param[k] -= lr[k] * (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + c.adam_eps);
        }
        break;
      }
    }

    g.positions[i] = Eigen::Map<const Vec3>(param + 0);
    g.rotations[i] = Eigen::Map<const Vec4>(param + 3);
    g.log_scales[i] = Eigen::Map<const Vec3>(param + 7);
    g.opacities[i] = param[10];
    g.colors[i] = Eigen::Map<const Vec3>(param + 11);
    project_to_valid(g, i);
  }
}

void DensifyStats::reset(std::size_t n) {
  grad_norm_sum.assign(n, 0.0);
  count.assign(n, 0);
}

void DensifyStats::accumulate(const GradientBuffer& grads, std::span<const std::size_t> active) {
  if (grad_norm_sum.size() < grads.size()) {
    grad_norm_sum.resize(grads.size(), 0.0);
    count.resize(grads.size(), 0);
  }
  for (std::size_t i : active) {
    const double n = grads.d_positions[i].norm();
    if (n == 0.0) continue;
    grad_norm_sum[i] += n;
    ++count[i];
  }
}

std::vector<std::ptrdiff_t> densify_and_prune(Scene& scene, const DensifyStats& stats, const OptimConfig& config,
                                              Rng& rng) {
  auto& g = scene.gaussians;
  const DensifyConfig& d = config.densify;
  std::vector<bool> frozen_tag;
  auto is_frozen = [&](int tag) {
    for (const auto& e : scene.entities)
      if (e.id == tag) return e.frozen;
    return false;
  };

  std::vector<std::size_t> kept;
  kept.reserve(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (is_frozen(g.entity_tags[i]) || g.opacities[i] >= d.prune_opacity) kept.push_back(i);

  GaussianSet next = g.select(kept);
  std::vector<std::ptrdiff_t> source(kept.begin(), kept.end());
  const auto budget = static_cast<std::size_t>(std::max(config.point_budget, 0));
  const double ln2 = std::log(2.0);

  const std::size_t base = next.size();
  for (std::size_t k = 0; k < base && next.size() < budget; ++k) {
    if (is_frozen(next.entity_tags[k])) continue;
    const std::size_t old = kept[k];
    const Vec3 s = next.log_scales[k].array().exp();
    Eigen::Index axis = 0;
    const double smax = s.maxCoeff(&axis);
    const Mat3 R = rotation_from_quaternion<double>(next.rotations[k].normalized());
    if (smax > d.size_threshold) {
      // Two children half the size, half a std-dev either side along the major axis.
      const Vec3 offset = 0.5 * smax * R.col(axis);
      Gaussian child = next.at(k);
      child.log_scale.array() -= ln2;
      next.log_scales[k] = child.log_scale;
      next.positions[k] -= offset;
      child.position += offset;
      next.push_back(child);
      source.push_back(-1);
    } else if (stats.count.size() > old && stats.mean(old) > d.grad_threshold) {
      Gaussian clone = next.at(k);
      const Vec3 n(rng.normal(), rng.normal(), rng.normal());
      clone.position += R * (0.1 * s.cwiseProduct(n));
      next.push_back(clone);
      source.push_back(-1);
    }
  }
  g = std::move(next);
  return source;
}

std::string OptimReport::to_csv() const {
  std::string out = "iteration,level,timestep,loss,psnr,gaussian_count\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%zu\n", r.iteration, r.level, r.timestep, r.loss, r.psnr,
                  r.gaussian_count);
    out += buf;
  }
  return out;
}

Camera RangeViewSampler::sample(Rng& rng, std::uint32_t) {
  auto [pose, intr] = sample_training_camera(rng, ranges_);
  return make_camera(pose, intr);
}

Camera TargetViewSampler::sample(Rng& rng, std::uint32_t prompt_id) {
  const auto views = targets_->views_for(prompt_id);
  if (views.empty()) return fallback_.sample(rng, prompt_id);
  return views[rng.index(views.size())]->camera;
}

DynamicOptimizer::DynamicOptimizer(Scene& scene, OptimConfig config, Providers providers)
    : scene_(scene),
      config_(std::move(config)),
      providers_(providers),
      rng_(config_.seed),
      optimizer_(config_, scene.gaussians.size()) {
  if (const auto err = config_.validate(); !err.empty()) throw InvalidArgument(err);
  if (!providers_.provider_3d || !providers_.views) throw InvalidArgument("optimizer needs a 3D provider and a view sampler");
  if (scene_.entities.empty()) throw InvalidArgument("scene has no entities");
  stats_.reset(scene_.gaussians.size());
  render_opts_.mode = RenderMode::Tiled;
  render_opts_.precision = config_.precision;
  render_opts_.background = config_.background;
}

int DynamicOptimizer::choose_level() {
  if (config_.ablations.no_do) return 0;
  std::vector<int> active;
  for (const auto& e : scene_.entities)
    if (!e.frozen) active.push_back(e.id);
  if (active.empty()) return 0;
  if (config_.composition_probability >= 0.0) {
    if (rng_.uniform() < config_.composition_probability) return 0;
    return active[rng_.index(active.size())];
  }
  const int k = select_level(rng_, static_cast<int>(active.size()));
  return k == 0 ? 0 : active[static_cast<std::size_t>(k - 1)];
}

void DynamicOptimizer::commit(int iteration, const GradientBuffer& grads, std::span<const std::size_t> active) {
  optimizer_.step(scene_.gaussians, grads, iteration, active);
  stats_.accumulate(grads, active);
}

double DynamicOptimizer::composition_step(int iteration, double t) {
  auto& g = scene_.gaussians;
  const auto active = unfrozen_indices(scene_);
  std::vector<std::size_t> all(g.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  GradientBuffer total(g.size());
  double loss = 0.0;
  int responses = 0;
  for (int v = 0; v < config_.batch_views; ++v) {
    const Camera cam = providers_.views->sample(rng_, 0);
    const RenderedImage img = render_subset(g, all, cam, render_opts_);
    GuidanceRequest req{static_cast<std::uint32_t>(iteration), t, 0u, cam, img.rgb};
    for (GuidanceProvider* p : {providers_.provider_2d, providers_.provider_3d}) {
      if (!p) continue;
      const GuidanceResponse resp = p->guide(req);
      total += assemble_sds_gradient(resp, g, all, cam, render_opts_);
      loss += residual_mse(resp.residual);
      ++responses;
    }
  }
  total *= 1.0 / config_.batch_views;
  // Frozen entities are visible but never updated.
  GradientBuffer masked(g.size());
  for (std::size_t i : active) {
    masked.d_positions[i] = total.d_positions[i];
    masked.d_rotations[i] = total.d_rotations[i];
    masked.d_log_scales[i] = total.d_log_scales[i];
    masked.d_opacities[i] = total.d_opacities[i];
    masked.d_colors[i] = total.d_colors[i];
  }
  commit(iteration, masked, active);
  return loss / std::max(responses, 1);
}

double DynamicOptimizer::entity_step(int iteration, double t, int entity_id) {
  auto& g = scene_.gaussians;
  EntityMeta& meta = scene_.entity(entity_id);
  if (!config_.freeze_bbox && !meta.bbox_pinned && !config_.mask_by_containment) {
    const auto tagged = entity_slice(scene_, entity_id);
    if (!tagged.empty()) compute_entity_bbox(scene_, entity_id);
  }
  const auto members = entity_members(scene_, entity_id, config_.mask_by_containment);
  if (members.empty()) return std::numeric_limits<double>::quiet_NaN();

  const bool zoom = !config_.ablations.no_vao;
  ZoomState z;
  if (zoom) {
    z = compute_zoom(meta.bbox, scene_.bbox_std, entity_id, !config_.vao_positions_only);
    zoom_in_place(g, members, z);
  }

  GradientBuffer total(g.size());
  double loss = 0.0;
  try {
    for (int v = 0; v < config_.batch_views; ++v) {
      const Camera cam = providers_.views->sample(rng_, static_cast<std::uint32_t>(entity_id));
      const RenderedImage img = render_subset(g, members, cam, render_opts_);
      GuidanceRequest req{static_cast<std::uint32_t>(iteration), t, static_cast<std::uint32_t>(entity_id), cam,
                          img.rgb};
      const GuidanceResponse resp = providers_.provider_3d->guide(req);
      total += assemble_sds_gradient(resp, g, members, cam, render_opts_);
      loss += residual_mse(resp.residual);
    }
    total *= 1.0 / config_.batch_views;
    const GradientBuffer masked = mask_gradients(total, scene_, entity_id, config_.mask_by_containment);
    commit(iteration, masked, members);
  } catch (...) {
    if (zoom) zoom_back_in_place(g, members, z);
    throw;
  }
  if (zoom) zoom_back_in_place(g, members, z);
  return loss / config_.batch_views;
}

TraceRow DynamicOptimizer::step(int iteration) {
  TraceRow row;
  row.iteration = iteration;
  row.level = choose_level();
  row.timestep = sample_timestep(iteration, config_.timesteps, rng_);
  try {
    row.loss = row.level == 0 ? composition_step(iteration, row.timestep)
                              : entity_step(iteration, row.timestep, row.level);
  } catch (const NumericError&) {
    row.loss = std::numeric_limits<double>::quiet_NaN();
  }
  row.psnr = std::isnan(row.loss) ? row.loss : psnr_from_mse(row.loss);

  const int next = iteration + 1;
  if (!config_.freeze_bbox && config_.bbox_refresh_every > 0 && next % config_.bbox_refresh_every == 0)
    refresh_entity_bboxes(scene_);
  const auto& d = config_.densify;
  if (d.enabled && next >= d.from && next % d.every == 0 && (d.until < 0 || next <= d.until) &&
      next < config_.total_iters) {
    const auto source = densify_and_prune(scene_, stats_, config_, rng_);
    optimizer_.remap(source);
    stats_.reset(scene_.gaussians.size());
  }
  row.gaussian_count = scene_.gaussians.size();
  return row;
}

OptimReport DynamicOptimizer::run(const std::function<void(const TraceRow&)>& on_step) {
  OptimReport report;
  for (int it = 0; it < config_.total_iters; ++it) {
    try {
      report.trace.push_back(step(it));
    } catch (const Error& e) {
      report.aborted = true;
      report.error = e.what();
      break;
    }
    if (on_step) on_step(report.trace.back());
  }
  report.skipped_steps = optimizer_.skipped_steps();
  return report;
}

OptimReport run_dynamic_optimization(Scene& scene, const OptimConfig& config, const Providers& providers) {
  DynamicOptimizer opt(scene, config, providers);
  return opt.run();
}

}  // namespace compsplat
