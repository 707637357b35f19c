#include "compsplat/camera.hpp"

#include "compsplat/error.hpp"

#include <algorithm>
#include <cmath>

namespace compsplat {

Mat4 CameraPose::view_matrix() const {
  const Vec3 dir = look_at - eye;
  if (dir.norm() == 0.0) throw InvalidArgument("camera eye coincides with look_at");
  const Vec3 forward = dir.normalized();
  const Vec3 right_raw = forward.cross(up);
  if (right_raw.norm() < 1e-12) throw InvalidArgument("camera up vector is parallel to the view direction");
  const Vec3 right = right_raw.normalized();
  const Vec3 down = forward.cross(right);

  Mat3 rot;
  rot.row(0) = right.transpose();
  rot.row(1) = down.transpose();
  rot.row(2) = forward.transpose();

  Mat4 v = Mat4::Identity();
  v.topLeftCorner<3, 3>() = rot;
  v.topRightCorner<3, 1>() = -rot * eye;
  return v;
}

double Intrinsics::focal() const { return 0.5 * height / std::tan(0.5 * deg_to_rad(fov_y_deg)); }

bool Intrinsics::valid() const {
  return fov_y_deg > 0.0 && fov_y_deg < 180.0 && near > 0.0 && near < far && width >= 1 && height >= 1;
}

Vec3 Camera::eye() const {
  const Mat3 r = world_to_view.topLeftCorner<3, 3>();
  return -r.transpose() * world_to_view.topRightCorner<3, 1>();
}

Camera make_camera(const CameraPose& pose, const Intrinsics& intr) { return {pose.view_matrix(), intr}; }

bool CameraRanges::valid() const {
  return radius.valid() && fov_y.valid() && elevation.valid() && azimuth.valid() && radius.lo > 0.0 &&
         fov_y.lo > 0.0 && fov_y.hi < 180.0 && width >= 1 && height >= 1;
}

Vec3 orbit_eye(double radius, double elevation_deg, double azimuth_deg, const Vec3& center) {
  const double el = deg_to_rad(elevation_deg);
  const double az = deg_to_rad(azimuth_deg);
  return center + radius * Vec3(std::cos(el) * std::cos(az), std::sin(el), -std::cos(el) * std::sin(az));
}

std::pair<CameraPose, Intrinsics> sample_training_camera(Rng& rng, const CameraRanges& ranges) {
  if (!ranges.valid()) throw InvalidArgument("invalid camera ranges");
  const double radius = rng.uniform(ranges.radius.lo, ranges.radius.hi);
  const double fov = rng.uniform(ranges.fov_y.lo, ranges.fov_y.hi);
  const double elevation = rng.uniform(ranges.elevation.lo, ranges.elevation.hi);
  const double azimuth = rng.uniform(ranges.azimuth.lo, ranges.azimuth.hi);

  CameraPose pose;
  pose.eye = orbit_eye(radius, elevation, azimuth);
  pose.look_at = Vec3::Zero();
  pose.up = Vec3::UnitY();
  Intrinsics intr;
  intr.fov_y_deg = fov;
  intr.width = ranges.width;
  intr.height = ranges.height;
  return {pose, intr};
}

std::vector<Camera> turntable(int count, double radius, double elevation_deg, const Intrinsics& intr,
                              const Vec3& center, double azimuth_offset_deg) {
  std::vector<Camera> cams;
  cams.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int k = 0; k < count; ++k) {
    const double az = azimuth_offset_deg + 360.0 * k / count;
    CameraPose pose{orbit_eye(radius, elevation_deg, az, center), center, Vec3::UnitY()};
    cams.push_back(make_camera(pose, intr));
  }
  return cams;
}

Mat4 projection_matrix(const Intrinsics& intr) {
  const double f = intr.focal();
  const double a = intr.far / (intr.far - intr.near);
  const double b = -intr.far * intr.near / (intr.far - intr.near);
  Mat4 p = Mat4::Zero();
  p(0, 0) = f;
  p(0, 2) = intr.cx();
  p(1, 1) = f;
  p(1, 2) = intr.cy();
  p(2, 2) = a;
  p(2, 3) = b;
  p(3, 2) = 1.0;
  return p;
}

Mat4 view_projection(const CameraPose& pose, const Intrinsics& intr) {
  return projection_matrix(intr) * pose.view_matrix();
}

Mat4 inverse_view_projection(const CameraPose& pose, const Intrinsics& intr) {
  const double f = intr.focal();
  const double a = intr.far / (intr.far - intr.near);
  const double b = -intr.far * intr.near / (intr.far - intr.near);
  Mat4 p_inv = Mat4::Zero();
  p_inv(0, 0) = 1.0 / f;
  p_inv(0, 3) = -intr.cx() / f;
  p_inv(1, 1) = 1.0 / f;
  p_inv(1, 3) = -intr.cy() / f;
  p_inv(2, 3) = 1.0;
  p_inv(3, 2) = 1.0 / b;
  p_inv(3, 3) = -a / b;

  const Mat4 v = pose.view_matrix();
  const Mat3 r = v.topLeftCorner<3, 3>();
  Mat4 v_inv = Mat4::Identity();
  v_inv.topLeftCorner<3, 3>() = r.transpose();
  v_inv.topRightCorner<3, 1>() = pose.eye;
  return v_inv * p_inv;
}

Vec3 project_point(const Camera& cam, const Vec3& world) {
  const Vec3 t = cam.world_to_view.topLeftCorner<3, 3>() * world + cam.world_to_view.topRightCorner<3, 1>();
  const double f = cam.intr.focal();
  return {f * t.x() / t.z() + cam.intr.cx(), f * t.y() / t.z() + cam.intr.cy(), t.z()};
}

double rotation_angle_between(const Mat4& view_a, const Mat4& view_b) {
  const Mat3 ra = view_a.topLeftCorner<3, 3>();
  const Mat3 rb = view_b.topLeftCorner<3, 3>();
  const double c = std::clamp(0.5 * ((ra * rb.transpose()).trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

}  // namespace compsplat
