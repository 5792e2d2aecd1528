#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace decorfuse {

/// A lidar return in the lidar frame (meters); r is reflectance in [0,1].
struct LidarPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double r = 0.0;

  bool operator==(const LidarPoint&) const = default;
};

using Mat3x4 = std::array<double, 12>;  // row-major
using Mat4 = std::array<double, 16>;    // row-major

Mat4 identity4();
Mat4 mul4(const Mat4& a, const Mat4& b);
Mat3x4 mul34(const Mat3x4& a, const Mat4& b);

/// Camera/lidar calibration. cam_from_lidar is always
/// p_rect * r_rect * velo_to_cam; use make() or recompose() to keep it so.
struct CalibRig {
  Mat3x4 p_rect{};
  Mat4 r_rect{};
  Mat4 velo_to_cam{};
  Mat3x4 cam_from_lidar{};

  static CalibRig make(const Mat3x4& p_rect, const Mat4& r_rect, const Mat4& velo_to_cam);
  void recompose();

  /// Throws InvalidConfig when the rigid block is not a proper rotation
  /// (1e-6), a homogeneous bottom row is wrong, or the composition is stale.
  void validate() const;

  bool operator==(const CalibRig&) const = default;
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

inline constexpr double kMinDepth = 1e-6;

/// nullopt means the point is at or behind the camera plane.
std::optional<PixelCoord> project(const LidarPoint& p, const Mat3x4& cam_from_lidar);
inline std::optional<PixelCoord> project(const LidarPoint& p, const CalibRig& rig) {
  return project(p, rig.cam_from_lidar);
}

/// Inverse of project for an invertible left 3x3 block: returns lidar (x,y,z).
std::array<double, 3> unproject(const PixelCoord& px, const Mat3x4& cam_from_lidar);

CalibRig parse_kitti_calib(std::string_view text);
std::string serialize_kitti_calib(const CalibRig& rig);

std::vector<LidarPoint> read_kitti_bin(std::span<const std::byte> bytes);
std::vector<std::byte> write_kitti_bin(std::span<const LidarPoint> points);

}  // namespace decorfuse
