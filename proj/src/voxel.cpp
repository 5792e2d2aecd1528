#include "decorfuse/voxel.hpp"

#include <algorithm>
#include <cmath>

#include "decorfuse/error.hpp"

namespace decorfuse {

std::array<int, 3> VoxelGridSpec::dims() const {
  std::array<int, 3> d{};
  for (int a = 0; a < 3; ++a)
    d[a] = static_cast<int>(std::floor((hi[a] - lo[a]) / voxel_size[a] + 1e-9));
  return d;
}

void VoxelGridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(voxel_size[a] > 0.0)) throw Error(ErrorKind::InvalidConfig, "voxel size must be > 0");
    if (!(hi[a] > lo[a])) throw Error(ErrorKind::InvalidConfig, "range must satisfy hi > lo");
  }
  for (int d : dims())
    if (d < 1) throw Error(ErrorKind::InvalidConfig, "grid has an empty axis");
}

VoxelGridSpec VoxelGridSpec::kitti() { return {{0.05, 0.05, 0.1}, {0.0, -40.0, -3.0}, {70.4, 40.0, 1.0}}; }

VoxelGridSpec VoxelGridSpec::waymo() {
  return {{0.1, 0.1, 0.15}, {-75.2, -75.2, -2.0}, {75.2, 75.2, 4.0}};
}

VoxelGridSpec VoxelGridSpec::desk() { return {{0.5, 0.5, 0.5}, {0.0, -16.0, -2.0}, {32.0, 16.0, 2.0}}; }

VoxelGridSpec VoxelGridSpec::preset(const std::string& name) {
  if (name == "kitti") return kitti();
  if (name == "waymo") return waymo();
  if (name == "desk") return desk();
  throw Error(ErrorKind::InvalidConfig, "unknown grid preset '" + name + "'");
}

VoxelGroups voxelize(std::span<const LidarPoint> points, const VoxelGridSpec& spec,
                     std::size_t max_points_per_voxel) {
  const auto dims = spec.dims();
  VoxelGroups groups;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double p[3] = {points[i].x, points[i].y, points[i].z};
    VoxelCoord c{};
    bool inside = true;
    for (int a = 0; a < 3 && inside; ++a) {
      if (!(p[a] >= spec.lo[a] && p[a] < spec.hi[a])) {
        inside = false;
        break;
      }
      c[a] = static_cast<int>(std::floor((p[a] - spec.lo[a]) / spec.voxel_size[a]));
      // hi may not be an exact multiple of the voxel size.
      if (c[a] >= dims[a]) inside = false;
    }
    if (!inside) continue;
    auto& members = groups[c];
    if (max_points_per_voxel == 0 || members.size() < max_points_per_voxel) members.push_back(i);
  }
  return groups;
}

std::ptrdiff_t SparseTensor3D::find(const VoxelCoord& c) const {
  auto it = std::lower_bound(coords.begin(), coords.end(), c);
  if (it == coords.end() || *it != c) return -1;
  return it - coords.begin();
}

void SparseTensor3D::check_canonical() const {
  if (features.size() != coords.size() * static_cast<std::size_t>(channels))
    throw Error(ErrorKind::ShapeMismatch, "feature rows do not match coordinates");
  for (std::size_t i = 1; i < coords.size(); ++i)
    if (!(coords[i - 1] < coords[i]))
      throw Error(ErrorKind::ShapeMismatch, "coordinates not unique and sorted");
  for (const auto& c : coords)
    for (int a = 0; a < 3; ++a)
      if (c[a] < 0 || c[a] >= dims[a]) throw Error(ErrorKind::ShapeMismatch, "coordinate out of grid");
}

VoxelFeatures build_voxel_features(const VoxelGroups& groups, const DecoratedCloud& cloud,
                                   const VoxelGridSpec& spec) {
  VoxelFeatures out;
  out.lidar.dims = out.camera.dims = spec.dims();
  out.lidar.channels = 4;
  out.camera.channels = cloud.channels;
  out.lidar.coords.reserve(groups.size());
  out.lidar.features.reserve(groups.size() * 4);
  out.camera.features.reserve(groups.size() * cloud.channels);
  for (const auto& [coord, members] : groups) {
    out.lidar.coords.push_back(coord);
    double center[3];
    for (int a = 0; a < 3; ++a) center[a] = spec.lo[a] + (coord[a] + 0.5) * spec.voxel_size[a];
    double acc[4] = {0, 0, 0, 0};
    std::vector<double> cam(static_cast<std::size_t>(cloud.channels), 0.0);
    for (std::size_t idx : members) {
      const auto& p = cloud.points[idx];
      acc[0] += p.x - center[0];
      acc[1] += p.y - center[1];
      acc[2] += p.z - center[2];
      acc[3] += p.r;
      const auto f = cloud.feature(idx);
      for (int c = 0; c < cloud.channels; ++c) cam[c] += f[c];
    }
    const double n = static_cast<double>(members.size());
    for (double v : acc) out.lidar.features.push_back(v / n);
    for (double v : cam) out.camera.features.push_back(v / n);
  }
  out.camera.coords = out.lidar.coords;
  return out;
}

std::vector<double> camera_features_backward(const VoxelGroups& groups, std::size_t num_points,
                                             const SparseTensor3D& cot) {
  if (cot.size() != groups.size()) throw Error(ErrorKind::ShapeMismatch, "camera cotangent rows");
  const int ch = cot.channels;
  std::vector<double> g(num_points * ch, 0.0);
  std::size_t row = 0;
  for (const auto& [coord, members] : groups) {
    const auto c = cot.row(row++);
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t idx : members)
      for (int k = 0; k < ch; ++k) g[idx * ch + k] += c[k] * inv;
  }
  return g;
}

}  // namespace decorfuse
