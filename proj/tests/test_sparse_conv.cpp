#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "decorfuse/error.hpp"
#include "decorfuse/gradcheck.hpp"
#include "decorfuse/sparse_conv.hpp"
#include "oracles.hpp"

using namespace decorfuse;

namespace {

SparseTensor3D random_sparse(std::array<int, 3> dims, int channels, double density, Rng& rng) {
  SparseTensor3D st;
  st.dims = dims;
  st.channels = channels;
  for (int x = 0; x < dims[0]; ++x)
    for (int y = 0; y < dims[1]; ++y)
      for (int z = 0; z < dims[2]; ++z)
        if (rng.uniform() < density) {
          st.coords.push_back({x, y, z});
          for (int c = 0; c < channels; ++c) st.features.push_back(rng.uniform(-1, 1));
        }
  return st;
}

SparseConvLayer random_layer(SparseConvMode mode, int cin, int cout, Rng& rng) {
  SparseConvLayer l = SparseConvLayer::init(mode, cin, cout, rng);
  for (double& b : l.bias) b = rng.uniform(-0.5, 0.5);
  return l;
}

// Every active output must equal the dense oracle; every inactive output site
// must be one the dense conv only reaches through padding (bias only).
double compare_to_dense(const SparseTensor3D& in, const SparseConvLayer& l, int stride) {
  const SparseTensor3D out = sparse_conv_forward(in, l);
  const oracle::Dense3D want = oracle::dense_conv3d(oracle::densify(in), l, stride);
  EXPECT_EQ(out.dims, want.dims);
  double worst = 0.0;
  for (std::size_t r = 0; r < out.size(); ++r)
    for (int c = 0; c < l.out_channels; ++c) {
      const auto& v = out.coords[r];
      worst = std::max(worst, std::abs(out.row(r)[c] - want.at(v[0], v[1], v[2], c)));
    }
  return worst;
}

}  // namespace

TEST(SparseConv, IdentityKernelSubmanifold) {
  Rng rng(1);
  const SparseTensor3D in = random_sparse({5, 5, 5}, 3, 0.2, rng);
  SparseConvLayer l = SparseConvLayer::zeros(SparseConvMode::submanifold, 3, 3);
  for (int c = 0; c < 3; ++c) l.weight[l.weight_index(13, c, c)] = 1.0;
  const SparseTensor3D out = sparse_conv_forward(in, l);
  EXPECT_EQ(out.coords, in.coords);
  EXPECT_EQ(out.features, in.features);
}

TEST(SparseConv, SingleVoxelAllOnes) {
  SparseTensor3D in;
  in.dims = {3, 3, 3};
  in.channels = 1;
  in.coords = {{1, 1, 1}};
  in.features = {2.0};
  SparseConvLayer l = SparseConvLayer::zeros(SparseConvMode::submanifold, 1, 1);
  std::fill(l.weight.begin(), l.weight.end(), 1.0);
  l.bias = {0.5};
  const SparseTensor3D out = sparse_conv_forward(in, l);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.features[0], 2.5);
}

TEST(SparseConv, StridedFourCubedToTwoCubed) {
  Rng rng(2);
  SparseTensor3D in = random_sparse({4, 4, 4}, 2, 1.0, rng);
  const SparseTensor3D out = strided_conv_forward(in, random_layer(SparseConvMode::strided, 2, 3, rng));
  EXPECT_EQ(out.dims, (std::array<int, 3>{2, 2, 2}));
  EXPECT_EQ(out.size(), 8u);
  EXPECT_EQ(out.channels, 3);
}

TEST(SparseConv, StridedOutputSitesAreThoseReceivingInput) {
  Rng rng(3);
  const SparseTensor3D in = random_sparse({7, 6, 5}, 1, 0.1, rng);
  std::set<VoxelCoord> expect;
  for (const auto& c : in.coords)
    for (int t = 0; t < kSparseTaps; ++t) {
      const auto d = tap_offset(t);
      VoxelCoord o{};
      bool ok = true;
      for (int a = 0; a < 3; ++a) {
        const int s = c[a] - d[a];
        if (s < 0 || s % 2 != 0 || s / 2 >= (in.dims[a] + 1) / 2) ok = false;
        o[a] = s / 2;
      }
      if (ok) expect.insert(o);
    }
  const Rulebook rb = build_rulebook(in, SparseConvMode::strided);
  EXPECT_EQ(std::vector<VoxelCoord>(expect.begin(), expect.end()), rb.out_coords);
}

TEST(SparseConv, MatchesDenseOracleBothModes) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const std::array<int, 3> dims{3 + trial % 4, 2 + trial % 5, 4 + trial % 3};
    const SparseTensor3D in = random_sparse(dims, 2, 0.3, rng);
    EXPECT_LT(compare_to_dense(in, random_layer(SparseConvMode::submanifold, 2, 3, rng), 1), 1e-12);
    EXPECT_LT(compare_to_dense(in, random_layer(SparseConvMode::strided, 2, 3, rng), 2), 1e-12);
  }
}

TEST(SparseConv, EmptyInputGivesEmptyOutput) {
  SparseTensor3D in;
  in.dims = {4, 4, 4};
  in.channels = 2;
  Rng rng(5);
  for (auto mode : {SparseConvMode::submanifold, SparseConvMode::strided}) {
    const SparseTensor3D out = sparse_conv_forward(in, random_layer(mode, 2, 3, rng));
    EXPECT_EQ(out.size(), 0u);
    EXPECT_EQ(out.channels, 3);
  }
}

TEST(SparseConv, ModeMismatchRejected) {
  Rng rng(6);
  const SparseTensor3D in = random_sparse({3, 3, 3}, 1, 0.5, rng);
  EXPECT_THROW(subm_conv_forward(in, SparseConvLayer::zeros(SparseConvMode::strided, 1, 1)), Error);
  EXPECT_THROW(strided_conv_forward(in, SparseConvLayer::zeros(SparseConvMode::submanifold, 1, 1)), Error);
}

TEST(SparseConv, Linearity) {
  Rng rng(7);
  const SparseTensor3D a = random_sparse({4, 4, 4}, 2, 0.4, rng);
  SparseTensor3D b = a;
  for (double& v : b.features) v = rng.uniform(-1, 1);
  SparseTensor3D ab = a;
  for (std::size_t i = 0; i < ab.features.size(); ++i) ab.features[i] += 2.0 * b.features[i];
  SparseConvLayer l = random_layer(SparseConvMode::strided, 2, 2, rng);
  std::fill(l.bias.begin(), l.bias.end(), 0.0);
  const auto fa = sparse_conv_forward(a, l), fb = sparse_conv_forward(b, l), fab = sparse_conv_forward(ab, l);
  for (std::size_t i = 0; i < fab.features.size(); ++i)
    EXPECT_NEAR(fab.features[i], fa.features[i] + 2.0 * fb.features[i], 1e-12);
}

TEST(SparseConvBackward, MatchesFiniteDifferences) {
  Rng rng(8);
  for (auto mode : {SparseConvMode::submanifold, SparseConvMode::strided}) {
    SparseTensor3D in = random_sparse({4, 3, 4}, 2, 0.35, rng);
    SparseConvLayer l = random_layer(mode, 2, 2, rng);
    const SparseTensor3D out = sparse_conv_forward(in, l);
    SparseTensor3D cot = out;
    for (double& v : cot.features) v = rng.uniform(-1, 1);
    const auto g = sparse_conv_backward(in, l, cot);
    auto loss = [&] {
      const auto o = sparse_conv_forward(in, l);
      double s = 0.0;
      for (std::size_t i = 0; i < o.features.size(); ++i) s += o.features[i] * cot.features[i];
      return s;
    };
    EXPECT_LT(gradient_error(g.input, numeric_gradient(in.features, loss)), 1e-6);
    EXPECT_LT(gradient_error(g.weight, numeric_gradient(l.weight, loss)), 1e-6);
    EXPECT_LT(gradient_error(g.bias, numeric_gradient(l.bias, loss)), 1e-6);
  }
}

TEST(BevFlatten, PlacementOfSingleVoxel) {
  SparseTensor3D st;
  st.dims = {4, 5, 3};
  st.channels = 2;
  st.coords = {{2, 3, 1}};
  st.features = {7.0, 8.0};
  const Grid2D bev = bev_flatten(st);
  EXPECT_EQ(bev.height, 4);
  EXPECT_EQ(bev.width, 5);
  EXPECT_EQ(bev.channels, 6);
  EXPECT_EQ(bev.at(2, 3, 2), 7.0);
  EXPECT_EQ(bev.at(2, 3, 3), 8.0);
  double total = 0.0;
  for (double v : bev.data) total += v;
  EXPECT_EQ(total, 15.0);
}

TEST(BevFlatten, MassConservedAndBackwardIsGather) {
  Rng rng(9);
  const SparseTensor3D st = random_sparse({5, 4, 3}, 3, 0.3, rng);
  const Grid2D bev = bev_flatten(st);
  double a = 0.0, b = 0.0;
  for (double v : st.features) a += v;
  for (double v : bev.data) b += v;
  EXPECT_NEAR(a, b, 1e-12);
  EXPECT_EQ(bev_flatten_backward(st, bev), st.features);
}

TEST(ChannelConcat, SplitInvertsConcat) {
  Rng rng(10);
  Grid2D a(3, 4, 2), b(3, 4, 5);
  for (double& v : a.data) v = rng.uniform();
  for (double& v : b.data) v = rng.uniform();
  const Grid2D j = channel_concat(a, b);
  EXPECT_EQ(j.channels, 7);
  EXPECT_EQ(j.at(1, 2, 0), a.at(1, 2, 0));
  EXPECT_EQ(j.at(1, 2, 2), b.at(1, 2, 0));
  const auto [x, y] = channel_split(j, 2);
  EXPECT_EQ(x.data, a.data);
  EXPECT_EQ(y.data, b.data);
  try {
    channel_concat(a, Grid2D(3, 5, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SpatialMismatch);
  }
}

TEST(SparseStream, DefaultScheduleShapes) {
  Rng rng(11);
  const SparseStream s = SparseStream::init(4, {16, 32, 32, 64}, rng);
  ASSERT_EQ(s.layers.size(), 4u);
  EXPECT_EQ(s.layers[1].mode, SparseConvMode::strided);
  const SparseTensor3D in = random_sparse({16, 16, 8}, 4, 0.05, rng);
  const SparseTensor3D out = sparse_stream_forward(in, s);
  EXPECT_EQ(out.dims, (std::array<int, 3>{4, 4, 2}));
  EXPECT_EQ(out.channels, 64);
  for (double v : out.features) EXPECT_GE(v, 0.0);
}
