#include "compsplat/renderer.hpp"

#include "compsplat/error.hpp"
#include "compsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace compsplat {

bool RgbImage::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void GradientBuffer::resize(std::size_t n) {
  d_positions.assign(n, Vec3::Zero());
  d_rotations.assign(n, Vec4::Zero());
  d_log_scales.assign(n, Vec3::Zero());
  d_opacities.assign(n, 0.0);
  d_colors.assign(n, Vec3::Zero());
}

void GradientBuffer::set_zero() { resize(size()); }

void GradientBuffer::zero_entry(std::size_t i) {
  d_positions[i].setZero();
  d_rotations[i].setZero();
  d_log_scales[i].setZero();
  d_opacities[i] = 0.0;
  d_colors[i].setZero();
}

bool GradientBuffer::all_finite() const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (!d_positions[i].allFinite() || !d_rotations[i].allFinite() || !d_log_scales[i].allFinite() ||
        !std::isfinite(d_opacities[i]) || !d_colors[i].allFinite())
      return false;
  }
  return true;
}

GradientBuffer& GradientBuffer::operator+=(const GradientBuffer& o) {
  if (o.size() != size()) throw InvalidArgument("gradient buffer size mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    d_positions[i] += o.d_positions[i];
    d_rotations[i] += o.d_rotations[i];
    d_log_scales[i] += o.d_log_scales[i];
    d_opacities[i] += o.d_opacities[i];
    d_colors[i] += o.d_colors[i];
  }
  return *this;
}

GradientBuffer& GradientBuffer::operator*=(double s) {
  for (std::size_t i = 0; i < size(); ++i) {
    d_positions[i] *= s;
    d_rotations[i] *= s;
    d_log_scales[i] *= s;
    d_opacities[i] *= s;
    d_colors[i] *= s;
  }
  return *this;
}

namespace {

template <typename T>
using V2 = Eigen::Matrix<T, 2, 1>;
template <typename T>
using V3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using V4 = Eigen::Matrix<T, 4, 1>;
template <typename T>
using M2 = Eigen::Matrix<T, 2, 2>;
template <typename T>
using M3 = Eigen::Matrix<T, 3, 3>;
template <typename T>
using M23 = Eigen::Matrix<T, 2, 3>;

template <typename T>
struct CamT {
  M3<T> rot;
  V3<T> trans;
  T f, cx, cy, near;
  int width, height;

  explicit CamT(const Camera& c)
      : rot(c.world_to_view.topLeftCorner<3, 3>().cast<T>()),
        trans(c.world_to_view.topRightCorner<3, 1>().cast<T>()),
        f(static_cast<T>(c.intr.focal())),
        cx(static_cast<T>(c.intr.cx())),
        cy(static_cast<T>(c.intr.cy())),
        near(static_cast<T>(c.intr.near)),
        width(c.intr.width),
        height(c.intr.height) {}
};

// Forward intermediates of one Gaussian, kept for the adjoint.
template <typename T>
struct Projected {
  T q_norm;
  V4<T> q;
  M3<T> R;
  V3<T> s;
  M3<T> M;
  M3<T> cov3;
  V3<T> t;
  M23<T> TW;
  M2<T> cov2;
  T A, B, C;  // conic = cov2^-1
  V2<T> mean;
};

template <typename T>
bool project_cov(const V3<T>& mu, const M3<T>& cov3, const CamT<T>& cam, Projected<T>& p) {
  p.t = cam.rot * mu + cam.trans;
  if (!(p.t.z() > cam.near)) return false;
  const T iz = T(1) / p.t.z();
  M23<T> J;
  J << cam.f * iz, T(0), -cam.f * p.t.x() * iz * iz, T(0), cam.f * iz, -cam.f * p.t.y() * iz * iz;
  p.TW = J * cam.rot;
  p.cov3 = cov3;
  p.cov2 = p.TW * cov3 * p.TW.transpose();
  p.cov2(0, 0) += static_cast<T>(kLowPassDilation);
  p.cov2(1, 1) += static_cast<T>(kLowPassDilation);
  const T a = p.cov2(0, 0), b = p.cov2(0, 1), c = p.cov2(1, 1);
  const T inv_det = T(1) / (a * c - b * b);
  p.A = c * inv_det;
  p.B = -b * inv_det;
  p.C = a * inv_det;
  p.mean = V2<T>(cam.f * p.t.x() * iz + cam.cx, cam.f * p.t.y() * iz + cam.cy);
  return true;
}

template <typename T>
bool project_full(const V3<T>& mu, const V4<T>& q_raw, const V3<T>& log_s, const CamT<T>& cam,
                  Projected<T>& p) {
  p.q_norm = q_raw.norm();
  p.q = q_raw / p.q_norm;
  p.R = rotation_from_quaternion<T>(p.q);
  p.s = log_s.array().exp().matrix();
  p.M = p.R * p.s.asDiagonal();
  return project_cov<T>(mu, p.M * p.M.transpose(), cam, p);
}

// Adjoint of project_full given gradients w.r.t. the 2D mean and the conic
// entries (gB is the derivative w.r.t. the single off-diagonal value B).
template <typename T>
void backward_projection(const Projected<T>& p, const CamT<T>& cam, const V2<T>& g_mean, T gA, T gB, T gC,
                         V3<T>& g_mu, V4<T>& g_q_raw, V3<T>& g_log_s) {
  M2<T> Q;
  Q << p.A, p.B, p.B, p.C;
  M2<T> GQ;
  GQ << gA, T(0.5) * gB, T(0.5) * gB, gC;
  const M2<T> G2 = -(Q * GQ * Q);

  const M3<T> G3 = p.TW.transpose() * G2 * p.TW;
  const M23<T> gTW = T(2) * G2 * p.TW * p.cov3;
  const M23<T> gJ = gTW * cam.rot.transpose();

  const T tx = p.t.x(), ty = p.t.y(), tz = p.t.z();
  const T iz = T(1) / tz, iz2 = iz * iz, iz3 = iz2 * iz;
  const T f = cam.f;
  V3<T> gt;
  gt.x() = g_mean.x() * f * iz - gJ(0, 2) * f * iz2;
  gt.y() = g_mean.y() * f * iz - gJ(1, 2) * f * iz2;
  gt.z() = -g_mean.x() * f * tx * iz2 - g_mean.y() * f * ty * iz2 - gJ(0, 0) * f * iz2 - gJ(1, 1) * f * iz2 +
           gJ(0, 2) * T(2) * f * tx * iz3 + gJ(1, 2) * T(2) * f * ty * iz3;
  g_mu = cam.rot.transpose() * gt;

  const M3<T> gM = T(2) * G3 * p.M;
  for (int j = 0; j < 3; ++j) {
    T gs = T(0);
    for (int i = 0; i < 3; ++i) gs += gM(i, j) * p.R(i, j);
    g_log_s[j] = gs * p.s[j];
  }
  const M3<T> G = gM * p.s.asDiagonal();  // dL/dR

  const T w = p.q[0], x = p.q[1], y = p.q[2], z = p.q[3];
  V4<T> gq;
  gq[0] = T(2) * (z * (G(1, 0) - G(0, 1)) + y * (G(0, 2) - G(2, 0)) + x * (G(2, 1) - G(1, 2)));
  gq[1] = T(2) * (y * (G(1, 0) + G(0, 1)) + z * (G(2, 0) + G(0, 2)) + w * (G(2, 1) - G(1, 2))) -
          T(4) * x * (G(1, 1) + G(2, 2));
  gq[2] = T(2) * (x * (G(1, 0) + G(0, 1)) + w * (G(0, 2) - G(2, 0)) + z * (G(2, 1) + G(1, 2))) -
          T(4) * y * (G(0, 0) + G(2, 2));
  gq[3] = T(2) * (w * (G(1, 0) - G(0, 1)) + x * (G(2, 0) + G(0, 2)) + y * (G(2, 1) + G(1, 2))) -
          T(4) * z * (G(0, 0) + G(1, 1));
  g_q_raw = (gq - p.q * p.q.dot(gq)) / p.q_norm;
}

// Image-plane data used by the rasterizer.
template <typename T>
struct RasterSplat {
  T mx, my, A, B, C, alpha;
  T color[3];
  T depth;
  std::uint32_t source;
  int x0, y0, x1, y1;
};

template <typename T>
bool splat_before(const RasterSplat<T>& a, const RasterSplat<T>& b) {
  if (a.depth != b.depth) return a.depth < b.depth;
  return a.source < b.source;
}

// Inclusive pixel rectangle that covers the support ellipse with a one-pixel
// margin; false if it misses the image.
template <typename T>
bool footprint_rect(const V2<T>& mean, const M2<T>& cov2, bool cutoff, int width, int height, int& x0, int& y0,
                    int& x1, int& y1) {
  if (!cutoff) {
    x0 = 0, y0 = 0, x1 = width - 1, y1 = height - 1;
    return true;
  }
  const double rx = std::sqrt(kSupportMaha2 * static_cast<double>(cov2(0, 0)));
  const double ry = std::sqrt(kSupportMaha2 * static_cast<double>(cov2(1, 1)));
  const double mx = static_cast<double>(mean.x()), my = static_cast<double>(mean.y());
  const double fx0 = std::floor(mx - rx - 0.5) - 1.0, fx1 = std::ceil(mx + rx - 0.5) + 1.0;
  const double fy0 = std::floor(my - ry - 0.5) - 1.0, fy1 = std::ceil(my + ry - 0.5) + 1.0;
  if (!(fx1 >= 0.0 && fy1 >= 0.0 && fx0 <= width - 1.0 && fy0 <= height - 1.0)) return false;
  x0 = static_cast<int>(std::max(fx0, 0.0));
  y0 = static_cast<int>(std::max(fy0, 0.0));
  x1 = static_cast<int>(std::min(fx1, width - 1.0));
  y1 = static_cast<int>(std::min(fy1, height - 1.0));
  return true;
}

template <typename T>
std::vector<RasterSplat<T>> prepare(const GaussianSet& g, std::span<const std::size_t> indices, const CamT<T>& cam,
                                    const RenderOptions& opts) {
  std::vector<RasterSplat<T>> out;
  out.reserve(indices.size());
  Projected<T> p;
  for (std::size_t idx : indices) {
    if (!project_full<T>(g.positions[idx].cast<T>(), g.rotations[idx].cast<T>(), g.log_scales[idx].cast<T>(), cam,
                         p))
      continue;
    RasterSplat<T> r;
    if (!footprint_rect<T>(p.mean, p.cov2, opts.support_cutoff, cam.width, cam.height, r.x0, r.y0, r.x1, r.y1))
      continue;
    r.mx = p.mean.x();
    r.my = p.mean.y();
    r.A = p.A;
    r.B = p.B;
    r.C = p.C;
    r.alpha = static_cast<T>(g.opacities[idx]);
    for (int c = 0; c < 3; ++c) r.color[c] = static_cast<T>(g.colors[idx][c]);
    r.depth = p.t.z();
    r.source = static_cast<std::uint32_t>(idx);
    out.push_back(r);
  }
  return out;
}

// Per-tile lists of positions into the prepared splat array, each sorted
// front to back. Reference mode uses one "tile" covering the whole image.
struct Binning {
  int tiles_x = 1, tiles_y = 1, tile = 0;
  std::vector<std::vector<std::uint32_t>> lists;
};

template <typename T>
Binning bin_splats(const std::vector<RasterSplat<T>>& splats, int width, int height, RenderMode mode) {
  Binning b;
  auto before = [&](std::uint32_t a, std::uint32_t c) { return splat_before(splats[a], splats[c]); };
  if (mode == RenderMode::Reference) {
    b.lists.resize(1);
    b.lists[0].resize(splats.size());
    std::iota(b.lists[0].begin(), b.lists[0].end(), 0u);
    std::sort(b.lists[0].begin(), b.lists[0].end(), before);
    return b;
  }
  b.tile = kTileSize;
  b.tiles_x = (width + kTileSize - 1) / kTileSize;
  b.tiles_y = (height + kTileSize - 1) / kTileSize;
  b.lists.resize(static_cast<std::size_t>(b.tiles_x) * b.tiles_y);
  for (std::uint32_t k = 0; k < splats.size(); ++k) {
    const auto& s = splats[k];
    for (int ty = s.y0 / kTileSize; ty <= s.y1 / kTileSize; ++ty)
      for (int tx = s.x0 / kTileSize; tx <= s.x1 / kTileSize; ++tx)
        b.lists[static_cast<std::size_t>(ty) * b.tiles_x + tx].push_back(k);
  }
  for (auto& list : b.lists) std::sort(list.begin(), list.end(), before);
  return b;
}

struct PixelRange {
  int x0, y0, x1, y1;  // half-open
};

PixelRange tile_pixels(const Binning& b, std::size_t tile, int width, int height) {
  if (b.tile == 0) return {0, 0, width, height};
  const int tx = static_cast<int>(tile % b.tiles_x), ty = static_cast<int>(tile / b.tiles_x);
  return {tx * b.tile, ty * b.tile, std::min((tx + 1) * b.tile, width), std::min((ty + 1) * b.tile, height)};
}

template <typename T>
struct PixelEval {
  bool inside;
  T sigma, gauss, dx, dy;
};

template <typename T>
inline PixelEval<T> eval_splat(const RasterSplat<T>& s, T px, T py, bool cutoff) {
  const T dx = px - s.mx, dy = py - s.my;
  const T maha2 = s.A * dx * dx + T(2) * s.B * dx * dy + s.C * dy * dy;
  if (cutoff && maha2 > static_cast<T>(kSupportMaha2)) return {false, T(0), T(0), dx, dy};
  const T gauss = std::exp(T(-0.5) * maha2);
  return {true, s.alpha * gauss, gauss, dx, dy};
}

template <typename T>
RenderedImage forward_impl(const GaussianSet& g, std::span<const std::size_t> indices, const Camera& camera,
                           const RenderOptions& opts) {
  const CamT<T> cam(camera);
  const int W = camera.intr.width, H = camera.intr.height;
  const auto splats = prepare<T>(g, indices, cam, opts);
  const Binning bins = bin_splats<T>(splats, W, H, opts.mode);

  RenderedImage img;
  img.rgb = RgbImage(W, H);
  img.transmittance.assign(static_cast<std::size_t>(W) * H, 1.0);
  img.weight_sum.assign(static_cast<std::size_t>(W) * H, 0.0);
  const T bg[3] = {static_cast<T>(opts.background[0]), static_cast<T>(opts.background[1]),
                   static_cast<T>(opts.background[2])};
  const T min_trans = static_cast<T>(kMinTransmittance);

  auto shade_row = [&](const std::vector<std::uint32_t>& list, int y, int x0, int x1) {
    for (int x = x0; x < x1; ++x) {
      const T px = static_cast<T>(x) + T(0.5), py = static_cast<T>(y) + T(0.5);
      T trans = T(1), wsum = T(0);
      T col[3] = {T(0), T(0), T(0)};
      for (std::uint32_t k : list) {
        const auto& s = splats[k];
        const auto e = eval_splat<T>(s, px, py, opts.support_cutoff);
        if (!e.inside) continue;
        const T w = e.sigma * trans;
        for (int c = 0; c < 3; ++c) col[c] += w * s.color[c];
        wsum += w;
        trans *= T(1) - e.sigma;
        if (opts.early_exit && trans < min_trans) break;
      }
      const std::size_t pix = static_cast<std::size_t>(y) * W + x;
      for (int c = 0; c < 3; ++c) img.rgb.data[pix * 3 + c] = static_cast<double>(col[c] + trans * bg[c]);
      img.transmittance[pix] = static_cast<double>(trans);
      img.weight_sum[pix] = static_cast<double>(wsum);
    }
  };

  if (opts.mode == RenderMode::Reference) {
    parallel_for(static_cast<std::size_t>(H), [&](std::size_t y) { shade_row(bins.lists[0], static_cast<int>(y), 0, W); });
  } else {
    parallel_for(bins.lists.size(), [&](std::size_t t) {
      const auto r = tile_pixels(bins, t, W, H);
      for (int y = r.y0; y < r.y1; ++y) shade_row(bins.lists[t], y, r.x0, r.x1);
    });
  }
  return img;
}

// 2D gradients per prepared splat.
template <typename T>
struct Grad2D {
  T mx = 0, my = 0, A = 0, B = 0, C = 0, alpha = 0;
  T color[3] = {0, 0, 0};

  Grad2D& operator+=(const Grad2D& o) {
    mx += o.mx, my += o.my, A += o.A, B += o.B, C += o.C, alpha += o.alpha;
    for (int c = 0; c < 3; ++c) color[c] += o.color[c];
    return *this;
  }
};

template <typename T>
struct Contribution {
  std::uint32_t slot;  // position in the tile list
  T sigma, gauss, trans_before, dx, dy;
};

template <typename T>
GradientBuffer backward_impl(const GaussianSet& g, std::span<const std::size_t> indices, const Camera& camera,
                             const RgbImage& upstream, const RenderOptions& opts) {
  const CamT<T> cam(camera);
  const int W = camera.intr.width, H = camera.intr.height;
  const auto splats = prepare<T>(g, indices, cam, opts);
  const Binning bins = bin_splats<T>(splats, W, H, opts.mode);
  const T bg[3] = {static_cast<T>(opts.background[0]), static_cast<T>(opts.background[1]),
                   static_cast<T>(opts.background[2])};
  const T min_trans = static_cast<T>(kMinTransmittance);

  // Tile-local accumulation, merged below in tile order for determinism.
  std::vector<std::vector<Grad2D<T>>> tile_grads(bins.lists.size());

  auto process_tile = [&](std::size_t t) {
    const auto& list = bins.lists[t];
    auto& acc = tile_grads[t];
    acc.assign(list.size(), Grad2D<T>{});
    std::vector<Contribution<T>> contribs;
    const auto r = tile_pixels(bins, t, W, H);
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        const T px = static_cast<T>(x) + T(0.5), py = static_cast<T>(y) + T(0.5);
        contribs.clear();
        T trans = T(1);
        for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
          const auto& s = splats[list[slot]];
          const auto e = eval_splat<T>(s, px, py, opts.support_cutoff);
          if (!e.inside) continue;
          contribs.push_back({slot, e.sigma, e.gauss, trans, e.dx, e.dy});
          trans *= T(1) - e.sigma;
          if (opts.early_exit && trans < min_trans) break;
        }
        if (contribs.empty()) continue;

        const std::size_t o = upstream.offset(x, y);
        const T up[3] = {static_cast<T>(upstream.data[o]), static_cast<T>(upstream.data[o + 1]),
                         static_cast<T>(upstream.data[o + 2])};
        // Color seen behind the current splat, accumulated back to front.
        T behind[3] = {bg[0], bg[1], bg[2]};
        for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
          const auto& s = splats[list[it->slot]];
          auto& gacc = acc[it->slot];
          const T w = it->sigma * it->trans_before;
          T g_sigma = T(0);
          for (int c = 0; c < 3; ++c) {
            gacc.color[c] += up[c] * w;
            g_sigma += up[c] * (s.color[c] - behind[c]);
          }
          g_sigma *= it->trans_before;
          for (int c = 0; c < 3; ++c) behind[c] = s.color[c] * it->sigma + (T(1) - it->sigma) * behind[c];

          gacc.alpha += g_sigma * it->gauss;
          const T g_power = g_sigma * it->sigma;
          const T dx = it->dx, dy = it->dy;
          gacc.A += T(-0.5) * g_power * dx * dx;
          gacc.B += -g_power * dx * dy;
          gacc.C += T(-0.5) * g_power * dy * dy;
          gacc.mx += g_power * (s.A * dx + s.B * dy);
          gacc.my += g_power * (s.B * dx + s.C * dy);
        }
      }
    }
  };

  if (opts.mode == RenderMode::Reference)
    process_tile(0);
  else
    parallel_for(bins.lists.size(), process_tile);

  std::vector<Grad2D<T>> grads(splats.size());
  for (std::size_t t = 0; t < bins.lists.size(); ++t)
    for (std::size_t slot = 0; slot < bins.lists[t].size(); ++slot) grads[bins.lists[t][slot]] += tile_grads[t][slot];

  GradientBuffer out(g.size());
  Projected<T> p;
  for (std::size_t k = 0; k < splats.size(); ++k) {
    const std::size_t idx = splats[k].source;
    const auto& gr = grads[k];
    project_full<T>(g.positions[idx].cast<T>(), g.rotations[idx].cast<T>(), g.log_scales[idx].cast<T>(), cam, p);
    V3<T> g_mu;
    V4<T> g_q;
    V3<T> g_ls;
    backward_projection<T>(p, cam, V2<T>(gr.mx, gr.my), gr.A, gr.B, gr.C, g_mu, g_q, g_ls);
    out.d_positions[idx] = g_mu.template cast<double>();
    out.d_rotations[idx] = g_q.template cast<double>();
    out.d_log_scales[idx] = g_ls.template cast<double>();
    out.d_opacities[idx] = static_cast<double>(gr.alpha);
    out.d_colors[idx] = Vec3(gr.color[0], gr.color[1], gr.color[2]);
  }
  return out;
}

std::vector<std::size_t> select_indices(const GaussianSet& g, const std::optional<int>& entity) {
  std::vector<std::size_t> idx;
  idx.reserve(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!entity || g.entity_tags[i] == *entity) idx.push_back(i);
  return idx;
}

void check_camera(const Camera& cam) {
  if (!cam.intr.valid()) throw InvalidArgument("invalid camera intrinsics");
}

}  // namespace

std::optional<Splat2D> ewa_project(const Vec3& mu, const Mat3& cov3d, const Camera& cam, bool footprint_cull) {
  const CamT<double> c(cam);
  Projected<double> p;
  if (!project_cov<double>(mu, cov3d, c, p)) return std::nullopt;
  int x0, y0, x1, y1;
  if (footprint_cull && !footprint_rect<double>(p.mean, p.cov2, true, c.width, c.height, x0, y0, x1, y1))
    return std::nullopt;
  Splat2D s;
  s.mean2d = p.mean;
  s.cov2d = p.cov2;
  s.cov2d(1, 0) = s.cov2d(0, 1);
  s.depth = p.t.z();
  return s;
}

double sigma_at(const Vec2& pixel, const Splat2D& splat) {
  const double det = splat.cov2d.determinant();
  if (!(det > 0.0)) throw NumericError("projected covariance is singular");
  const Vec2 d = pixel - splat.mean2d;
  const double maha2 = d.dot(splat.cov2d.inverse() * d);
  return splat.opacity * std::exp(-0.5 * maha2);
}

CompositeResult composite_pixel(std::span<const std::pair<Vec3, double>> splats, const Vec3& background,
                                bool early_exit) {
  CompositeResult r;
  for (const auto& [color, sigma] : splats) {
    r.color += sigma * r.transmittance * color;
    r.transmittance *= 1.0 - sigma;
    if (early_exit && r.transmittance < kMinTransmittance) break;
  }
  r.color += r.transmittance * background;
  return r;
}

RenderedImage render_subset(const GaussianSet& gaussians, std::span<const std::size_t> indices, const Camera& cam,
                            const RenderOptions& opts) {
  check_camera(cam);
  if (opts.precision == Precision::Double) return forward_impl<double>(gaussians, indices, cam, opts);
  return forward_impl<float>(gaussians, indices, cam, opts);
}

RenderedImage render(const GaussianSet& gaussians, const Camera& cam, const RenderOptions& opts) {
  const auto idx = select_indices(gaussians, opts.entity);
  return render_subset(gaussians, idx, cam, opts);
}

RenderedImage render(const Scene& scene, const Camera& cam, const RenderOptions& opts) {
  return render(scene.gaussians, cam, opts);
}

GradientBuffer render_backward_subset(const GaussianSet& gaussians, std::span<const std::size_t> indices,
                                      const Camera& cam, const RgbImage& upstream, const RenderOptions& opts) {
  check_camera(cam);
  if (upstream.width != cam.intr.width || upstream.height != cam.intr.height ||
      upstream.data.size() != static_cast<std::size_t>(upstream.width) * upstream.height * 3)
    throw InvalidArgument("upstream gradient shape does not match the camera");
  if (!upstream.all_finite()) throw NumericError("non-finite upstream gradient");
  if (opts.precision == Precision::Double) return backward_impl<double>(gaussians, indices, cam, upstream, opts);
  return backward_impl<float>(gaussians, indices, cam, upstream, opts);
}

GradientBuffer render_backward(const GaussianSet& gaussians, const Camera& cam, const RgbImage& upstream,
                               const RenderOptions& opts) {
  const auto idx = select_indices(gaussians, opts.entity);
  return render_backward_subset(gaussians, idx, cam, upstream, opts);
}

GradientBuffer render_backward(const Scene& scene, const Camera& cam, const RgbImage& upstream,
                               const RenderOptions& opts) {
  return render_backward(scene.gaussians, cam, upstream, opts);
}

}  // namespace compsplat
