#pragma once

#include "compsplat/math.hpp"

#include <utility>
#include <vector>

namespace compsplat {

/// Look-at extrinsics. View space is x right, y down, z forward (depth).
struct CameraPose {
  Vec3 eye{0.0, 0.0, 3.5};
  Vec3 look_at = Vec3::Zero();
  Vec3 up = Vec3::UnitY();

  /// Rigid world-to-view transform. Throws InvalidArgument when eye == look_at
  /// or up is parallel to the viewing direction.
  Mat4 view_matrix() const;
};

/// Pinhole with square pixels; fov_y is the full vertical angle in degrees.
struct Intrinsics {
  double fov_y_deg = 40.0;
  int width = 128;
  int height = 128;
  double near = 0.01;
  double far = 100.0;

  double focal() const;  // pixels
  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }
  bool valid() const;
};

/// A render-ready camera: world-to-view transform plus intrinsics. The view
/// matrix need not come from a CameraPose (guidance requests carry raw ones).
struct Camera {
  Mat4 world_to_view = Mat4::Identity();
  Intrinsics intr;

  Vec3 eye() const;
};

Camera make_camera(const CameraPose& pose, const Intrinsics& intr);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool valid() const { return lo <= hi; }
  bool operator==(const Range&) const = default;
};

struct CameraRanges {
  Range radius{0.8, 1.0};
  Range fov_y{15.0, 60.0};
  Range elevation{0.0, 30.0};
  Range azimuth{0.0, 360.0};
  int width = 128;
  int height = 128;

  bool valid() const;
  bool operator==(const CameraRanges&) const = default;
};

/// Point on the orbit sphere. Azimuth 0 lies on +X and increases
/// counter-clockwise seen from +Y; elevation is measured from the XZ plane.
Vec3 orbit_eye(double radius, double elevation_deg, double azimuth_deg, const Vec3& center = Vec3::Zero());

/// Draws radius, fov, elevation, azimuth (in that order) uniformly from their
/// ranges and places the eye on the orbit around the origin.
std::pair<CameraPose, Intrinsics> sample_training_camera(Rng& rng, const CameraRanges& ranges);

/// Evenly spaced azimuths at a fixed radius/elevation (test and turntable views).
std::vector<Camera> turntable(int count, double radius, double elevation_deg, const Intrinsics& intr,
                              const Vec3& center = Vec3::Zero(), double azimuth_offset_deg = 0.0);

/// Perspective projection of view-space points: (x, y, z, 1) maps to
/// (u z, v z, d z, z) where (u, v) are pixel coordinates and d in [0, 1]
/// between near and far.
Mat4 projection_matrix(const Intrinsics& intr);
Mat4 view_projection(const CameraPose& pose, const Intrinsics& intr);
/// Closed-form inverse of view_projection.
Mat4 inverse_view_projection(const CameraPose& pose, const Intrinsics& intr);

/// Pixel coordinates (continuous; pixel i spans [i, i+1]) and view depth.
Vec3 project_point(const Camera& cam, const Vec3& world);

/// Angle in radians between the viewing rotations of two cameras.
double rotation_angle_between(const Mat4& view_a, const Mat4& view_b);

}  // namespace compsplat
