#include <gtest/gtest.h>

#include <filesystem>

#include "decorfuse/error.hpp"
#include "decorfuse/eval_metrics.hpp"
#include "decorfuse/io.hpp"
#include "decorfuse/scene.hpp"

using namespace decorfuse;
namespace fs = std::filesystem;

TEST(GenerateScene, DeterministicUnderSeed) {
  const Config c;
  EXPECT_EQ(generate_scene(11, c), generate_scene(11, c));
  EXPECT_FALSE(generate_scene(11, c) == generate_scene(12, c));
}

TEST(GenerateScene, ZeroObjectsIsClutterOnly) {
  Config c;
  c.scene.min_objects = c.scene.max_objects = 0;
  const SyntheticScene s = generate_scene(3, c);
  EXPECT_TRUE(s.gt.empty());
  EXPECT_EQ(s.points.size(), static_cast<std::size_t>(c.scene.clutter_points));
}

TEST(GenerateScene, BoxesDisjointInGridAndInView) {
  const Config c;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const SyntheticScene s = generate_scene(seed, c);
    ASSERT_GE(s.gt.size(), static_cast<std::size_t>(c.scene.min_objects));
    ASSERT_LE(s.gt.size(), static_cast<std::size_t>(c.scene.max_objects));
    for (std::size_t a = 0; a < s.gt.size(); ++a) {
      for (std::size_t b = a + 1; b < s.gt.size(); ++b) EXPECT_EQ(rotated_iou_3d(s.gt[a].box, s.gt[b].box), 0.0);
      int inside = 0;
      for (const auto& p : s.points) inside += points_inside(s.gt[a].box, p, 0.05);
      EXPECT_GE(inside, 20);
      for (const auto& corner : bev_corners(s.gt[a].box)) {
        EXPECT_GE(corner.x, c.grid.lo[0]);
        EXPECT_LT(corner.x, c.grid.hi[0]);
        EXPECT_GE(corner.y, c.grid.lo[1]);
        EXPECT_LT(corner.y, c.grid.hi[1]);
      }
      const auto px = project(LidarPoint{s.gt[a].box.cx, s.gt[a].box.cy, s.gt[a].box.cz, 0}, s.rig);
      ASSERT_TRUE(px);
      EXPECT_GE(px->u, 0.0);
      EXPECT_LT(px->u, c.image_width);
    }
  }
}

TEST(GenerateScene, ClassOnlyChangesImage) {
  const Config c;
  const SyntheticScene s = generate_scene(5, c);
  std::vector<int> flipped;
  for (const auto& g : s.gt) flipped.push_back(c.num_classes - 1 - g.class_id);
  const SyntheticScene t = relabel_scene(s, flipped, c);
  EXPECT_EQ(t.points, s.points);
  EXPECT_NE(t.image.data, s.image.data);
  for (std::size_t k = 0; k < s.gt.size(); ++k) EXPECT_EQ(t.gt[k].box, s.gt[k].box);
  EXPECT_THROW(relabel_scene(s, std::vector<int>{0}, c), Error);
  EXPECT_THROW(relabel_scene(s, std::vector<int>(s.gt.size(), 7), c), Error);
}

TEST(GtPaste, DisabledIsIdentity) {
  const Config c;
  const auto scenes = std::vector{generate_scene(1, c), generate_scene(2, c)};
  const auto bank = build_gt_bank(scenes);
  Rng rng(3);
  EXPECT_EQ(gt_paste(scenes[0], bank, rng, false), scenes[0]);
  EXPECT_EQ(gt_paste(scenes[0], {}, rng, true), scenes[0]);
}

TEST(GtPaste, PointCountGrowsByPastedObjects) {
  const Config c;
  std::vector<SyntheticScene> scenes;
  for (std::uint64_t s = 0; s < 6; ++s) scenes.push_back(generate_scene(s, c));
  const auto bank = build_gt_bank(scenes);
  ASSERT_FALSE(bank.empty());
  int pasted_total = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(trial);
    const SyntheticScene out = gt_paste(scenes[trial % 6], bank, rng, true);
    const SyntheticScene& in = scenes[trial % 6];
    const std::size_t added = out.gt.size() - in.gt.size();
    pasted_total += static_cast<int>(added);
    std::size_t extra = 0;
    for (std::size_t k = in.gt.size(); k < out.gt.size(); ++k)
      for (const auto& b : bank)
        if (b.object == out.gt[k]) {
          extra += b.points.size();
          break;
        }
    EXPECT_EQ(out.points.size(), in.points.size() + extra);
    for (std::size_t a = 0; a < out.gt.size(); ++a)
      for (std::size_t b = a + 1; b < out.gt.size(); ++b)
        EXPECT_EQ(bev_intersection_area(out.gt[a].box, out.gt[b].box), 0.0);
  }
  EXPECT_GT(pasted_total, 0);
}

TEST(FadingSchedule, FinalEpochsOff) {
  EXPECT_TRUE(fading_schedule(14, 20, 5));
  EXPECT_FALSE(fading_schedule(15, 20, 5));
  EXPECT_FALSE(fading_schedule(19, 20, 5));
  for (int e = 0; e < 20; ++e) EXPECT_TRUE(fading_schedule(e, 20, 0));
}

TEST(SceneIo, DirectoryRoundTrip) {
  const Config c;
  const SyntheticScene s = generate_scene(9, c);
  const fs::path root = fs::temp_directory_path() / "decorfuse_scene_io";
  fs::remove_all(root);
  write_scene_dir(root / "scene_0001", s);
  write_scene_dir(root / "scene_0000", s);
  fs::create_directories(root / "other");
  const auto dirs = list_scene_dirs(root);
  ASSERT_EQ(dirs.size(), 2u);
  EXPECT_EQ(dirs[0].filename(), "scene_0000");
  const SyntheticScene back = read_scene_dir(dirs[1]);
  EXPECT_EQ(back.gt, s.gt);
  EXPECT_EQ(back.rig, s.rig);
  ASSERT_EQ(back.points.size(), s.points.size());
  EXPECT_EQ(back.points[0].x, static_cast<double>(static_cast<float>(s.points[0].x)));
  fs::remove_all(root);
}

TEST(TextFormats, LabelsAndDetections) {
  const std::vector<LabeledBox> gt{{{1.5, -2, 0.25, 4, 1.8, 1.6, 0.3}, 1}};
  EXPECT_EQ(parse_labels(format_labels(gt)), gt);
  const auto d = parse_detections("# header\n\n1 0.75 1 2 3 4 5 6 0.5\n");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].class_id, 1);
  EXPECT_EQ(d[0].score, 0.75);
  EXPECT_EQ(d[0].box.yaw, 0.5);
  auto kind = [](const char* text) {
    try {
      parse_detections(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  EXPECT_EQ(kind("1 0.5 1 2 3\n"), ErrorKind::WrongCount);
  EXPECT_EQ(kind("1 0.5 1 2 3 4 5 6 x\n"), ErrorKind::BadFormat);
  EXPECT_EQ(kind("1 inf 1 2 3 4 5 6 7\n"), ErrorKind::NonFiniteValue);
  EXPECT_EQ(kind("-1 0.5 1 2 3 4 5 6 7\n"), ErrorKind::BadClass);
}
