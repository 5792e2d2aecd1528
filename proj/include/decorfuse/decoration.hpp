#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decorfuse/geometry.hpp"
#include "decorfuse/tensor.hpp"

namespace decorfuse {

/// Lidar points (x,y,z,r) each carrying an image feature vector f.
/// Features are stored contiguously, one row of `channels` per point.
struct DecoratedCloud {
  std::vector<LidarPoint> points;
  int channels = 0;
  std::vector<double> features;

  std::size_t size() const { return points.size(); }
  std::span<const double> feature(std::size_t i) const {
    return {features.data() + i * channels, static_cast<std::size_t>(channels)};
  }
  std::span<double> feature(std::size_t i) {
    return {features.data() + i * channels, static_cast<std::size_t>(channels)};
  }

  /// All-zero features: the lidar-only degenerate case.
  static DecoratedCloud undecorated(std::vector<LidarPoint> points, int channels);
};

/// Bilinear interpolation on feature-map coordinates (u = column, v = row),
/// clamped to [0, dim-1] first.
std::vector<double> bilinear_sample(const Grid2D& fmap, double u, double v);

/// Adjoint of bilinear_sample: scatters cotangent into fmap_cotangent.
void bilinear_sample_adjoint(Grid2D& fmap_cotangent, double u, double v,
                             std::span<const double> cotangent);

/// Where each point was sampled on the feature map; invalid points got zeros.
struct SampleSite {
  bool valid = false;
  double u = 0.0;
  double v = 0.0;
};

/// Projects each point, samples fmap at (u/4, v/4) when the pixel lies in
/// [0,W)x[0,H) and in front of the camera, else attaches a zero vector.
/// Throws StrideMismatch if fmap is not image/4.
DecoratedCloud decorate(std::span<const LidarPoint> points, const Grid2D& fmap,
                        const CalibRig& rig, int image_height, int image_width,
                        std::vector<SampleSite>* sites = nullptr);

/// Feature-map cotangent given per-point feature cotangents (rows of
/// fmap.channels). Projection coordinates are treated as constants.
Grid2D decorate_backward(std::span<const SampleSite> sites, int fmap_height, int fmap_width,
                         int channels, std::span<const double> feature_cotangent);

/// Dump layout: 16-byte header (magic "DFPC", u32 version, u32 point count,
/// u32 channels), then little-endian float32 rows of 4 + channels.
inline constexpr std::uint32_t kDecoratedDumpVersion = 1;
std::string write_decorated_dump(const DecoratedCloud& cloud);
DecoratedCloud read_decorated_dump(std::string_view bytes);

}  // namespace decorfuse
