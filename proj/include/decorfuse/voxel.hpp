#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "decorfuse/decoration.hpp"

namespace decorfuse {

/// Axis-aligned voxel grid over a half-open range [lo, hi) per axis.
struct VoxelGridSpec {
  std::array<double, 3> voxel_size{};
  std::array<double, 3> lo{};
  std::array<double, 3> hi{};

  /// floor((hi - lo) / size) per axis.
  std::array<int, 3> dims() const;
  void validate() const;

  static VoxelGridSpec kitti();
  static VoxelGridSpec waymo();
  /// 64 x 64 x 8 cells of 0.5 m; laptop-scale default.
  static VoxelGridSpec desk();
  /// "kitti", "waymo" or "desk"; throws InvalidConfig otherwise.
  static VoxelGridSpec preset(const std::string& name);

  bool operator==(const VoxelGridSpec&) const = default;
};

using VoxelCoord = std::array<int, 3>;

/// Point indices per voxel, ordered lexicographically by coordinate.
using VoxelGroups = std::map<VoxelCoord, std::vector<std::size_t>>;

/// Assigns in-range points to voxels; out-of-range points are dropped.
/// max_points_per_voxel = 0 means unlimited; otherwise later points in input
/// order are dropped.
VoxelGroups voxelize(std::span<const LidarPoint> points, const VoxelGridSpec& spec,
                     std::size_t max_points_per_voxel = 0);

/// Active voxels with one feature row each. coords are unique and sorted.
struct SparseTensor3D {
  std::array<int, 3> dims{};
  int channels = 0;
  std::vector<VoxelCoord> coords;
  std::vector<double> features;

  std::size_t size() const { return coords.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * channels, static_cast<std::size_t>(channels)};
  }
  std::span<double> row(std::size_t i) {
    return {features.data() + i * channels, static_cast<std::size_t>(channels)};
  }
  /// Index of coordinate c, or -1 when inactive.
  std::ptrdiff_t find(const VoxelCoord& c) const;
  /// Throws ShapeMismatch when uniqueness/order/row count is violated.
  void check_canonical() const;
};

struct VoxelFeatures {
  SparseTensor3D lidar;   // mean offset from voxel center (dx, dy, dz) and mean r
  SparseTensor3D camera;  // mean decoration feature
};

VoxelFeatures build_voxel_features(const VoxelGroups& groups, const DecoratedCloud& cloud,
                                   const VoxelGridSpec& spec);

/// Per-point feature cotangent (rows of cloud channels) from a camera-stream
/// cotangent; each voxel's cotangent is shared equally among its points.
std::vector<double> camera_features_backward(const VoxelGroups& groups, std::size_t num_points,
                                             const SparseTensor3D& camera_cotangent);

}  // namespace decorfuse
