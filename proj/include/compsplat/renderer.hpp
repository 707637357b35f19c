#pragma once

#include "compsplat/camera.hpp"
#include "compsplat/scene.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace compsplat {

/// Anti-aliasing dilation added to the projected covariance diagonal (px^2).
inline constexpr double kLowPassDilation = 0.3;
/// Squared Mahalanobis radius beyond which a splat contributes nothing.
inline constexpr double kSupportMaha2 = 16.0;
/// Compositing stops once transmittance falls below this value.
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr int kTileSize = 16;

/// Row-major H x W x 3 image of doubles.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  RgbImage() = default;
  RgbImage(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t offset(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 3; }
  double& at(int x, int y, int c) { return data[offset(x, y) + c]; }
  double at(int x, int y, int c) const { return data[offset(x, y) + c]; }
  Vec3 pixel(int x, int y) const {
    const auto o = offset(x, y);
    return {data[o], data[o + 1], data[o + 2]};
  }
  bool same_shape(const RgbImage& o) const { return width == o.width && height == o.height; }
  bool all_finite() const;
};

struct RenderedImage {
  RgbImage rgb;
  /// Final prod(1 - sigma_j) per pixel, row-major.
  std::vector<double> transmittance;
  /// Sum of compositing weights sigma_i * prod_{j<i}(1 - sigma_j) per pixel.
  std::vector<double> weight_sum;

  int width() const { return rgb.width; }
  int height() const { return rgb.height; }
};

struct GradientBuffer {
  std::vector<Vec3> d_positions;
  std::vector<Vec4> d_rotations;
  std::vector<Vec3> d_log_scales;
  std::vector<double> d_opacities;
  std::vector<Vec3> d_colors;

  GradientBuffer() = default;
  explicit GradientBuffer(std::size_t n) { resize(n); }

  std::size_t size() const { return d_positions.size(); }
  void resize(std::size_t n);
  void set_zero();
  void zero_entry(std::size_t i);
  bool all_finite() const;

  GradientBuffer& operator+=(const GradientBuffer& o);
  GradientBuffer& operator*=(double s);
  bool operator==(const GradientBuffer&) const = default;
};

/// A Gaussian projected to the image plane.
struct Splat2D {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  std::size_t source_index = 0;
};

/// EWA projection of one Gaussian: pinhole mean, (J W) cov (J W)^T plus the
/// low-pass dilation. Returns nullopt (culled) when the center is not beyond
/// the near plane or, with `footprint_cull`, the support ellipse misses the
/// image entirely.
std::optional<Splat2D> ewa_project(const Vec3& mu, const Mat3& cov3d, const Camera& cam,
                                   bool footprint_cull = true);

/// alpha * exp(-0.5 (p - mean)^T cov^-1 (p - mean)).
double sigma_at(const Vec2& pixel, const Splat2D& splat);

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  double transmittance = 1.0;
};

/// Front-to-back compositing of (color, sigma) pairs over a background.
CompositeResult composite_pixel(std::span<const std::pair<Vec3, double>> splats_front_to_back,
                                const Vec3& background = Vec3::Constant(0.5), bool early_exit = true);

enum class RenderMode { Reference, Tiled };
enum class Precision { Single, Double };

struct RenderOptions {
  RenderMode mode = RenderMode::Tiled;
  Precision precision = Precision::Single;
  Vec3 background = Vec3::Constant(0.5);
  bool early_exit = true;
  /// Limit splats to their kSupportMaha2 ellipse. Off gives infinite support
  /// (used by finite-difference checks, where the cut would be a discontinuity).
  bool support_cutoff = true;
  /// Restrict input to one entity tag.
  std::optional<int> entity;
};

/// Forward render of the whole set (or `opts.entity`).
RenderedImage render(const GaussianSet& gaussians, const Camera& cam, const RenderOptions& opts = {});
RenderedImage render(const Scene& scene, const Camera& cam, const RenderOptions& opts = {});
/// Forward render of an explicit subset of indices.
RenderedImage render_subset(const GaussianSet& gaussians, std::span<const std::size_t> indices,
                            const Camera& cam, const RenderOptions& opts = {});

/// upstream^T * d(image)/d(params), analytic. Gaussians outside the rendered
/// subset (or culled) get zero entries. Throws NumericError on non-finite
/// upstream and InvalidArgument on a shape mismatch.
GradientBuffer render_backward(const GaussianSet& gaussians, const Camera& cam, const RgbImage& upstream,
                               const RenderOptions& opts = {});
GradientBuffer render_backward(const Scene& scene, const Camera& cam, const RgbImage& upstream,
                               const RenderOptions& opts = {});
GradientBuffer render_backward_subset(const GaussianSet& gaussians, std::span<const std::size_t> indices,
                                      const Camera& cam, const RgbImage& upstream,
                                      const RenderOptions& opts = {});

}  // namespace compsplat
