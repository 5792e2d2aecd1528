#include "decorfuse/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "decorfuse/error.hpp"
#include "decorfuse/eval_metrics.hpp"

namespace decorfuse {

CalibRig desk_camera(const Config& config) {
  const double f = config.scene.focal;
  const double cu = config.image_width / 2.0;
  const double cv = config.image_height / 2.0;
  const Mat3x4 p{f, 0, cu, 0, 0, f, cv, 0, 0, 0, 1, 0};
  // lidar (x fwd, y left, z up) -> camera (x right, y down, z fwd)
  const Mat4 t{0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0, 0, 0, 0, 1};
  return CalibRig::make(p, identity4(), t);
}

std::array<double, 3> class_color(int class_id) {
  static constexpr std::array<std::array<double, 3>, 6> kPalette = {{
      {0.9, 0.1, 0.1},
      {0.1, 0.2, 0.9},
      {0.1, 0.8, 0.2},
      {0.9, 0.8, 0.1},
      {0.8, 0.1, 0.8},
      {0.1, 0.8, 0.8},
  }};
  return kPalette[static_cast<std::size_t>(class_id) % kPalette.size()];
}

namespace {

constexpr double kBackground = 0.5;

std::array<LidarPoint, 8> box_corners_3d(const Box3D& b) {
  const auto foot = bev_corners(b);
  std::array<LidarPoint, 8> out{};
  for (int k = 0; k < 4; ++k) {
    out[k] = {foot[k].x, foot[k].y, b.cz - 0.5 * b.h, 0.0};
    out[k + 4] = {foot[k].x, foot[k].y, b.cz + 0.5 * b.h, 0.0};
  }
  return out;
}

}  // namespace

void render_blob(Image& image, const LabeledBox& obj, const CalibRig& rig) {
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  for (const auto& c : box_corners_3d(obj.box)) {
    const auto px = project(c, rig);
    if (!px) return;
    umin = std::min(umin, px->u);
    umax = std::max(umax, px->u);
    vmin = std::min(vmin, px->v);
    vmax = std::max(vmax, px->v);
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(umin)));
  const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(umax)) - 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(vmin)));
  const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(vmax)) - 1);
  const auto color = class_color(obj.class_id);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = color[c];
}

Image render_scene_image(std::span<const LabeledBox> gt, const CalibRig& rig, int height, int width) {
  Image img(height, width, 3, kBackground);
  std::vector<std::size_t> order(gt.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::hypot(gt[a].box.cx, gt[a].box.cy) > std::hypot(gt[b].box.cx, gt[b].box.cy);
  });
  for (std::size_t k : order) render_blob(img, gt[k], rig);
  return img;
}

namespace {

bool fits(const Box3D& b, const Config& config, const CalibRig& rig) {
  const auto& g = config.grid;
  for (const auto& c : box_corners_3d(b)) {
    if (!(c.x >= g.lo[0] && c.x < g.hi[0] && c.y >= g.lo[1] && c.y < g.hi[1] && c.z >= g.lo[2] &&
          c.z < g.hi[2]))
      return false;
    const auto px = project(c, rig);
    if (!px || px->u < 0 || px->u >= config.image_width || px->v < 0 || px->v >= config.image_height)
      return false;
  }
  return true;
}

void sample_surface(const Box3D& b, int count, Rng& rng, std::vector<LidarPoint>& out) {
  // faces: +-x (w*h each), +-y (l*h each), top (l*w)
  const double areas[5] = {b.w * b.h, b.w * b.h, b.l * b.h, b.l * b.h, b.l * b.w};
  const double total = std::accumulate(std::begin(areas), std::end(areas), 0.0);
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  for (int n = 0; n < count; ++n) {
    double pick = rng.uniform() * total;
    int face = 0;
    while (face < 4 && pick >= areas[face]) pick -= areas[face++];
    const double a = rng.uniform() - 0.5, e = rng.uniform() - 0.5;
    double lx, ly, lz;
    switch (face) {
      case 0: lx = 0.5 * b.l; ly = a * b.w; lz = e * b.h; break;
      case 1: lx = -0.5 * b.l; ly = a * b.w; lz = e * b.h; break;
      case 2: lx = a * b.l; ly = 0.5 * b.w; lz = e * b.h; break;
      case 3: lx = a * b.l; ly = -0.5 * b.w; lz = e * b.h; break;
      default: lx = a * b.l; ly = e * b.w; lz = 0.5 * b.h; break;
    }
    out.push_back({b.cx + c * lx - s * ly, b.cy + s * lx + c * ly, b.cz + lz, rng.uniform()});
  }
}

}  // namespace

SyntheticScene generate_scene(std::uint64_t seed, const Config& config) {
  const auto& sc = config.scene;
  const auto& g = config.grid;
  Rng rng(seed);
  SyntheticScene scene;
  scene.rig = desk_camera(config);

  const int count =
      sc.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(sc.max_objects - sc.min_objects + 1)));
  const double x_lo = std::max(g.lo[0], 0.0) + 6.0;
  const double x_hi = g.hi[0] - 4.0;
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      Box3D b;
      b.cx = rng.uniform(x_lo, x_hi);
      const double y_span = std::min(0.75 * b.cx, std::max(0.0, g.hi[1] - 3.0));
      b.cy = rng.uniform(std::max(-y_span, g.lo[1] + 3.0), y_span);
      b.l = rng.uniform(3.2, 4.4);
      b.w = rng.uniform(1.6, 2.0);
      b.h = rng.uniform(1.4, 1.8);
      b.yaw = rng.uniform(-sc.max_abs_yaw, sc.max_abs_yaw);
      b.cz = sc.ground_z + 0.5 * b.h;
      if (!fits(b, config, scene.rig)) continue;
      bool clear = true;
      for (const auto& o : scene.gt)
        if (bev_intersection_area(o.box, b) > 0.0 ||
            std::hypot(o.box.cx - b.cx, o.box.cy - b.cy) < sc.min_center_gap) {
          clear = false;
          break;
        }
      if (!clear) continue;
      const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.num_classes)));
      scene.gt.push_back({b, cls});
      placed = true;
    }
    if (!placed)
      throw Error(ErrorKind::PlacementFailure,
                  "object " + std::to_string(k) + " could not be placed in 1000 attempts");
  }

  for (int n = 0; n < sc.clutter_points; ++n) {
    LidarPoint p;
    p.x = rng.uniform(g.lo[0], g.hi[0]);
    p.y = rng.uniform(g.lo[1], g.hi[1]);
    p.z = sc.ground_z + rng.uniform(-0.05, 0.05);
    p.r = rng.uniform();
    scene.points.push_back(p);
  }
  for (const auto& obj : scene.gt) sample_surface(obj.box, sc.surface_points, rng, scene.points);

  scene.image = render_scene_image(scene.gt, scene.rig, config.image_height, config.image_width);
  return scene;
}

SyntheticScene relabel_scene(const SyntheticScene& scene, std::span<const int> classes,
                             const Config& config) {
  if (classes.size() != scene.gt.size())
    throw Error(ErrorKind::LengthMismatch, "one class label per object");
  SyntheticScene out = scene;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k] < 0 || classes[k] >= config.num_classes) throw Error(ErrorKind::BadClass, "relabel");
    out.gt[k].class_id = classes[k];
  }
  out.image = render_scene_image(out.gt, out.rig, scene.image.height, scene.image.width);
  return out;
}

bool points_inside(const Box3D& b, const LidarPoint& p, double margin) {
  const double dx = p.x - b.cx, dy = p.y - b.cy;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.l + margin && std::abs(ly) <= 0.5 * b.w + margin &&
         std::abs(p.z - b.cz) <= 0.5 * b.h + margin;
}

std::vector<BankObject> build_gt_bank(std::span<const SyntheticScene> scenes) {
  std::vector<BankObject> bank;
  for (const auto& s : scenes)
    for (const auto& obj : s.gt) {
      BankObject e;
      e.object = obj;
      for (const auto& p : s.points)
        if (points_inside(obj.box, p, 0.05)) e.points.push_back(p);
      bank.push_back(std::move(e));
    }
  return bank;
}

SyntheticScene gt_paste(const SyntheticScene& scene, std::span<const BankObject> bank, Rng& rng,
                        bool enabled, int max_pastes) {
  if (!enabled || bank.empty()) return scene;
  SyntheticScene out = scene;
  for (int k = 0; k < max_pastes; ++k) {
    const auto& entry = bank[rng.below(bank.size())];
    bool clear = true;
    for (const auto& o : out.gt)
      if (bev_intersection_area(o.box, entry.object.box) > 0.0) {
        clear = false;
        break;
      }
    if (!clear) continue;
    out.gt.push_back(entry.object);
    out.points.insert(out.points.end(), entry.points.begin(), entry.points.end());
    render_blob(out.image, entry.object, out.rig);
  }
  return out;
}

bool fading_schedule(int epoch, int total_epochs, int fade_epochs) {
  return epoch < total_epochs - fade_epochs;
}

}  // namespace decorfuse
