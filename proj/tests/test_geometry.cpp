#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "decorfuse/error.hpp"
#include "decorfuse/geometry.hpp"
#include "decorfuse/tensor.hpp"

using namespace decorfuse;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// lidar (x fwd, y left, z up) -> camera (x right, y down, z fwd)
Mat4 axis_swap() { return {0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0, 0, 0, 0, 1}; }

CalibRig test_rig() {
  return CalibRig::make({100, 0, 400, 0, 0, 100, 224, 0, 0, 0, 1, 0}, identity4(), axis_swap());
}

const char* kIdentityCalib =
    "P2: 100 0 400 0 0 100 224 0 0 0 1 0\n"
    "R0_rect: 1 0 0 0 1 0 0 0 1\n"
    "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Io;
}

// Random proper rotation from a unit quaternion.
Mat4 random_rigid(Rng& rng) {
  double q[4];
  double n = 0.0;
  for (double& x : q) n += (x = rng.uniform(-1, 1)) * x;
  n = std::sqrt(n);
  for (double& x : q) x /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),     rng.uniform(-2, 2),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),     rng.uniform(-2, 2),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y), rng.uniform(-2, 2),
          0, 0, 0, 1};
}

}  // namespace

TEST(ParseKittiCalib, IdentityCompositionEqualsP2) {
  const CalibRig rig = parse_kitti_calib(kIdentityCalib);
  EXPECT_EQ(rig.cam_from_lidar, rig.p_rect);
  EXPECT_EQ(rig.r_rect, identity4());
  EXPECT_NO_THROW(rig.validate());
}

TEST(ParseKittiCalib, GoldenFileMatchesHandReadValues) {
  const CalibRig rig = parse_kitti_calib(slurp(DECORFUSE_TEST_DATA "/kitti_calib.txt"));
  // P2, not P0/P1/P3.
  EXPECT_EQ(rig.p_rect[0], 7.215377e+02);
  EXPECT_EQ(rig.p_rect[2], 6.095593e+02);
  EXPECT_EQ(rig.p_rect[3], 4.485728e+01);
  EXPECT_EQ(rig.p_rect[7], 2.163791e-01);
  EXPECT_EQ(rig.p_rect[11], 2.745884e-03);
  EXPECT_EQ(rig.r_rect[0], 9.999239e-01);
  EXPECT_EQ(rig.r_rect[1], 9.837760e-03);
  EXPECT_EQ(rig.r_rect[4], -9.869795e-03);
  EXPECT_EQ(rig.r_rect[10], 9.999631e-01);
  EXPECT_EQ(rig.r_rect[3], 0.0);
  EXPECT_EQ(rig.r_rect[15], 1.0);
  EXPECT_EQ(rig.velo_to_cam[1], -9.999714e-01);
  EXPECT_EQ(rig.velo_to_cam[3], -4.069766e-03);
  EXPECT_EQ(rig.velo_to_cam[11], -2.717806e-01);
  EXPECT_EQ(rig.velo_to_cam[12], 0.0);
  EXPECT_EQ(rig.velo_to_cam[15], 1.0);
  EXPECT_EQ(rig.cam_from_lidar, mul34(mul34(rig.p_rect, rig.r_rect), rig.velo_to_cam));
}

TEST(ParseKittiCalib, HandWrittenSnippet) {
  const CalibRig rig = parse_kitti_calib(
      "Tr_velo_to_cam: 0.25 -1.5 3e-2 4 5 6 7 8 9 10 11 12\n"
      "P2: 1.5 2.5 3.5 4.5 5.5 6.5 7.5 8.5 9.5 10.5 11.5 12.5\n"
      "R0_rect:   -1 +2 3 4 5 6 7 8 9.75\n");
  EXPECT_EQ(rig.p_rect, (Mat3x4{1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.5, 10.5, 11.5, 12.5}));
  EXPECT_EQ(rig.r_rect, (Mat4{-1, 2, 3, 0, 4, 5, 6, 0, 7, 8, 9.75, 0, 0, 0, 0, 1}));
  EXPECT_EQ(rig.velo_to_cam, (Mat4{0.25, -1.5, 0.03, 4, 5, 6, 7, 8, 9, 10, 11, 12, 0, 0, 0, 1}));
}

TEST(ParseKittiCalib, Errors) {
  EXPECT_EQ(kind_of([] {
              parse_kitti_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n");
            }),
            ErrorKind::MissingKey);
  EXPECT_EQ(kind_of([] {
              parse_kitti_calib("P2: 1 0 0\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n");
            }),
            ErrorKind::WrongCount);
  EXPECT_EQ(kind_of([] {
              parse_kitti_calib(
                  "P2: 1 0 0 0 0 1 0 0 0 0 1 nan\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n");
            }),
            ErrorKind::NonFiniteValue);
  try {
    parse_kitti_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0\n");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("R0_rect"), std::string::npos);
  }
}

TEST(ParseKittiCalib, SerializeRoundTripIsIdempotent) {
  const CalibRig a = parse_kitti_calib(slurp(DECORFUSE_TEST_DATA "/kitti_calib.txt"));
  const CalibRig b = parse_kitti_calib(serialize_kitti_calib(a));
  EXPECT_EQ(a, b);
  EXPECT_EQ(b, parse_kitti_calib(serialize_kitti_calib(b)));
}

TEST(Project, HandComputedPixel) {
  const auto px = project(LidarPoint{10, 0, 0, 0}, test_rig());
  ASSERT_TRUE(px);
  EXPECT_DOUBLE_EQ(px->u, 400.0);
  EXPECT_DOUBLE_EQ(px->v, 224.0);
  EXPECT_DOUBLE_EQ(px->depth, 10.0);
  // left and up of the axis move the pixel left and up
  const auto q = project(LidarPoint{10, 1, 2, 0}, test_rig());
  EXPECT_DOUBLE_EQ(q->u, 390.0);
  EXPECT_DOUBLE_EQ(q->v, 204.0);
}

TEST(Project, BehindCamera) {
  EXPECT_FALSE(project(LidarPoint{-5, 0, 0, 0}, test_rig()));
  EXPECT_FALSE(project(LidarPoint{0, 3, 1, 0}, test_rig()));
  EXPECT_FALSE(project(LidarPoint{kMinDepth / 2, 0, 0, 0}, test_rig()));
}

TEST(Project, HomogeneousScaleInvariance) {
  Rng rng(3);
  const CalibRig rig = test_rig();
  for (int n = 0; n < 200; ++n) {
    const LidarPoint p{rng.uniform(1, 50), rng.uniform(-10, 10), rng.uniform(-3, 3), 0};
    Mat3x4 by2 = rig.cam_from_lidar, by3 = rig.cam_from_lidar;
    for (double& v : by2) v *= 2.0;
    for (double& v : by3) v *= 3.0;
    const auto a = project(p, rig.cam_from_lidar);
    const auto b = project(p, by2);
    const auto c = project(p, by3);
    ASSERT_TRUE(a && b && c);
    // power-of-two scaling is exact in binary floating point
    EXPECT_EQ(b->u, a->u);
    EXPECT_EQ(b->v, a->v);
    // any other factor only adds the rounding of the scaled products
    EXPECT_NEAR(c->u, a->u, 4 * std::numeric_limits<double>::epsilon() * std::abs(a->u));
    EXPECT_NEAR(c->v, a->v, 4 * std::numeric_limits<double>::epsilon() * std::abs(a->v));
  }
}

TEST(Project, RoundTripThroughInverse) {
  Rng rng(11);
  double worst = 0.0;
  for (int n = 0; n < 500; ++n) {
    const Mat3x4 p{rng.uniform(50, 800), 0, rng.uniform(100, 600), rng.uniform(-50, 50),
                   0, rng.uniform(50, 800), rng.uniform(100, 400), rng.uniform(-1, 1),
                   0, 0, 1, rng.uniform(-0.01, 0.01)};
    const CalibRig rig = CalibRig::make(p, random_rigid(rng), random_rigid(rng));
    const LidarPoint pt{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20), 0.5};
    const auto px = project(pt, rig);
    if (!px) continue;
    const auto back = unproject(*px, rig.cam_from_lidar);
    worst = std::max({worst, std::abs(back[0] - pt.x), std::abs(back[1] - pt.y), std::abs(back[2] - pt.z)});
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(CalibRig, ValidateRejectsBadRigs) {
  CalibRig rig = test_rig();
  EXPECT_NO_THROW(rig.validate());
  CalibRig stale = rig;
  stale.cam_from_lidar[0] += 1.0;
  EXPECT_THROW(stale.validate(), Error);
  Mat4 reflect = axis_swap();
  reflect[1] = 1;  // determinant -1
  EXPECT_THROW(CalibRig::make(rig.p_rect, identity4(), reflect).validate(), Error);
  Mat4 bad_row = identity4();
  bad_row[12] = 0.5;
  EXPECT_THROW(CalibRig::make(rig.p_rect, identity4(), bad_row).validate(), Error);
}

TEST(KittiBin, EmptyInput) { EXPECT_TRUE(read_kitti_bin({}).empty()); }

TEST(KittiBin, ReferenceEncodedRecord) {
  // Reference byte writer: little-endian IEEE-754 bit patterns by hand.
  const std::uint32_t bits[4] = {0x3F800000u, 0x40000000u, 0x40400000u, 0x3F000000u};
  std::vector<std::byte> bytes;
  for (std::uint32_t b : bits)
    for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<std::byte>((b >> (8 * k)) & 0xFF));
  const auto pts = read_kitti_bin(bytes);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0], (LidarPoint{1.0, 2.0, 3.0, 0.5}));
  EXPECT_EQ(write_kitti_bin(pts), bytes);
}

TEST(KittiBin, TruncatedRecord) {
  const std::vector<std::byte> bytes(17);
  EXPECT_EQ(kind_of([&] { read_kitti_bin(bytes); }), ErrorKind::TruncatedRecord);
}

TEST(KittiBin, OrderPreservedRoundTrip) {
  std::vector<LidarPoint> pts;
  for (int i = 0; i < 50; ++i) pts.push_back({i * 0.25, -i * 0.5, i * 0.125, (i % 5) * 0.25});
  EXPECT_EQ(read_kitti_bin(write_kitti_bin(pts)), pts);
}
