#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "decorfuse/config.hpp"
#include "decorfuse/detect_loss.hpp"
#include "decorfuse/geometry.hpp"
#include "decorfuse/image_backbone.hpp"

namespace decorfuse {

struct SyntheticScene {
  std::vector<LidarPoint> points;
  Image image;
  CalibRig rig;
  std::vector<LabeledBox> gt;

  bool operator==(const SyntheticScene& o) const {
    return points == o.points && image.same_shape(o.image) && image.data == o.image.data &&
           rig == o.rig && gt == o.gt;
  }
};

/// Front camera at the lidar origin looking along +x (pinhole, focal in px,
/// principal point at the image center).
CalibRig desk_camera(const Config& config);

std::array<double, 3> class_color(int class_id);

/// Draws the projected bounding rectangle of the box's corners in its class color.
void render_blob(Image& image, const LabeledBox& obj, const CalibRig& rig);
/// Background plus every object, far to near.
Image render_scene_image(std::span<const LabeledBox> gt, const CalibRig& rig, int height, int width);

/// Deterministic under seed. Boxes have zero pairwise BEV overlap, lie fully
/// inside the grid and in view of the camera. Object points are sampled on
/// the box surfaces; geometry and reflectance are independent of the class,
/// which is visible only through the image color.
/// Throws PlacementFailure when an object cannot be placed in 1000 attempts.
SyntheticScene generate_scene(std::uint64_t seed, const Config& config);

/// Same geometry with the given class labels; the image is re-rendered.
SyntheticScene relabel_scene(const SyntheticScene& scene, std::span<const int> classes,
                             const Config& config);

/// Object snapshot for GT-Paste.
struct BankObject {
  LabeledBox object;
  std::vector<LidarPoint> points;
};

/// Collects every GT object with the scene points inside its box.
std::vector<BankObject> build_gt_bank(std::span<const SyntheticScene> scenes);

bool points_inside(const Box3D& box, const LidarPoint& p, double margin = 0.0);

/// Samples up to `max_pastes` bank entries; an entry is pasted (points
/// appended, box added, blob drawn) when its footprint does not overlap any
/// box already present. Identity when disabled.
SyntheticScene gt_paste(const SyntheticScene& scene, std::span<const BankObject> bank, Rng& rng,
                        bool enabled, int max_pastes = 3);

/// GT-Paste is active for epochs [0, total - fade).
bool fading_schedule(int epoch, int total_epochs, int fade_epochs);

}  // namespace decorfuse
