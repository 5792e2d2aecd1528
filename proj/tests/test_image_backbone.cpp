#include <gtest/gtest.h>

#include <cmath>

#include "decorfuse/error.hpp"
#include "decorfuse/gradcheck.hpp"
#include "decorfuse/image_backbone.hpp"
#include "oracles.hpp"

using namespace decorfuse;

namespace {

Grid2D random_grid(int h, int w, int c, Rng& rng) {
  Grid2D g(h, w, c);
  for (double& v : g.data) v = rng.uniform(-1, 1);
  return g;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Conv2D, IdentityOneByOne) {
  Rng rng(1);
  Conv2DLayer l = Conv2DLayer::zeros(1, 3, 3, 1);
  for (int c = 0; c < 3; ++c) l.weight[l.weight_index(0, 0, c, c)] = 1.0;
  const Grid2D in = random_grid(4, 5, 3, rng);
  EXPECT_EQ(conv2d_forward(in, l).data, in.data);
}

TEST(Conv2D, ZeroInputGivesBias) {
  Conv2DLayer l = Conv2DLayer::zeros(3, 2, 4, 2);
  l.bias = {0.5, -1.0, 2.0, 0.0};
  const Grid2D out = conv2d_forward(Grid2D(7, 6, 2), l);
  EXPECT_EQ(out.height, 4);
  EXPECT_EQ(out.width, 3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 4; ++c) EXPECT_EQ(out.at(y, x, c), l.bias[c]);
}

TEST(Conv2D, MatchesNestedLoopOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int stride = 1 + trial % 2;
    Conv2DLayer l = Conv2DLayer::init(trial % 3 == 0 ? 1 : 3, 2, 3, stride, rng);
    for (double& b : l.bias) b = rng.uniform(-1, 1);
    const Grid2D in = random_grid(5, 5 + trial % 3, 2, rng);
    const Grid2D got = conv2d_forward(in, l);
    const Grid2D want = oracle::naive_conv2d(in, l);
    ASSERT_TRUE(got.same_shape(want));
    EXPECT_LT(max_abs_diff(got.data, want.data), 1e-12);
  }
}

TEST(Conv2D, ChannelMismatch) {
  const Conv2DLayer l = Conv2DLayer::zeros(3, 2, 2, 1);
  try {
    conv2d_forward(Grid2D(4, 4, 3), l);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ChannelMismatch);
  }
}

TEST(Conv2DBackward, ZeroCotangent) {
  Rng rng(3);
  const Conv2DLayer l = Conv2DLayer::init(3, 2, 3, 1, rng);
  const Grid2D in = random_grid(4, 4, 2, rng);
  const auto g = conv2d_backward(in, l, Grid2D(4, 4, 3));
  for (double v : g.input.data) EXPECT_EQ(v, 0.0);
  for (double v : g.weight) EXPECT_EQ(v, 0.0);
  for (double v : g.bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2DBackward, SumLossMatchesFiniteDifferences) {
  Rng rng(4);
  Conv2DLayer l = Conv2DLayer::init(3, 2, 3, 2, rng);
  Grid2D in = random_grid(5, 6, 2, rng);
  const Grid2D out = conv2d_forward(in, l);
  const Grid2D ones(out.height, out.width, out.channels, 1.0);
  const auto g = conv2d_backward(in, l, ones);
  auto loss = [&] {
    double s = 0.0;
    for (double v : conv2d_forward(in, l).data) s += v;
    return s;
  };
  EXPECT_LT(gradient_error(g.weight, numeric_gradient(l.weight, loss)), 1e-5);
  EXPECT_LT(gradient_error(g.input.data, numeric_gradient(in.data, loss)), 1e-5);
  EXPECT_LT(gradient_error(g.bias, numeric_gradient(l.bias, loss)), 1e-5);
}

TEST(Conv2DBackward, Linearity) {
  Rng rng(5);
  const Conv2DLayer l = Conv2DLayer::init(3, 2, 2, 1, rng);
  const Grid2D in = random_grid(4, 5, 2, rng);
  const Grid2D a = random_grid(4, 5, 2, rng);
  const Grid2D b = random_grid(4, 5, 2, rng);
  Grid2D ab = a;
  for (std::size_t i = 0; i < ab.data.size(); ++i) ab.data[i] += b.data[i];
  const auto ga = conv2d_backward(in, l, a);
  const auto gb = conv2d_backward(in, l, b);
  const auto gab = conv2d_backward(in, l, ab);
  for (std::size_t i = 0; i < gab.weight.size(); ++i)
    EXPECT_NEAR(gab.weight[i], ga.weight[i] + gb.weight[i], 1e-12);
  for (std::size_t i = 0; i < gab.input.data.size(); ++i)
    EXPECT_NEAR(gab.input.data[i], ga.input.data[i] + gb.input.data[i], 1e-12);
}

TEST(Relu, BackwardZeroWhereInputNegative) {
  Grid2D x(1, 4, 1);
  x.data = {-1.0, 0.0, 0.5, 2.0};
  const Grid2D cot(1, 4, 1, 3.0);
  const Grid2D g = relu_backward(x, cot);
  EXPECT_EQ(g.data, (std::vector<double>{0.0, 0.0, 3.0, 3.0}));
  EXPECT_EQ(relu(x).data, (std::vector<double>{0.0, 0.0, 0.5, 2.0}));
}

TEST(Backbone, OutputShapes) {
  Rng rng(6);
  const Backbone2D net = Backbone2D::init(64, rng);
  const Grid2D full = backbone_forward(Image(448, 800, 3, 0.5), net);
  EXPECT_EQ(full.height, 112);
  EXPECT_EQ(full.width, 200);
  EXPECT_EQ(full.channels, 64);
  const Grid2D tiny = backbone_forward(Image(8, 8, 3, 0.5), net);
  EXPECT_EQ(tiny.height, 2);
  EXPECT_EQ(tiny.width, 2);
  EXPECT_EQ(tiny.channels, 64);
}

TEST(Backbone, ZeroWeightsGiveZeroFeatures) {
  Rng rng(7);
  const Backbone2D net = Backbone2D::init(8, rng).zeros_like();
  Rng img_rng(8);
  const Grid2D f = backbone_forward(random_grid(16, 12, 3, img_rng), net);
  for (double v : f.data) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, BadDims) {
  Rng rng(9);
  const Backbone2D net = Backbone2D::init(8, rng);
  try {
    backbone_forward(Image(10, 8, 3), net);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BadDims);
  }
}

TEST(Backbone, BackwardMatchesFiniteDifferences) {
  Rng rng(10);
  Backbone2D net = Backbone2D::init(4, rng);
  for (auto* l : {&net.conv1, &net.conv2})
    for (double& b : l->bias) b = rng.uniform(0.05, 0.2);
  Image img = random_grid(8, 8, 3, rng);
  Backbone2DTape tape;
  const Grid2D f = backbone_forward(img, net, &tape);
  Grid2D cot(f.height, f.width, f.channels);
  for (double& v : cot.data) v = rng.uniform(-1, 1);
  Backbone2D grads = net.zeros_like();
  backbone_backward(tape, net, cot, grads);
  auto loss = [&] {
    const Grid2D out = backbone_forward(img, net);
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * cot.data[i];
    return s;
  };
  EXPECT_LT(gradient_error(grads.conv1.weight, numeric_gradient(net.conv1.weight, loss)), 1e-5);
  EXPECT_LT(gradient_error(grads.conv3.weight, numeric_gradient(net.conv3.weight, loss)), 1e-5);
  EXPECT_LT(gradient_error(grads.conv2.bias, numeric_gradient(net.conv2.bias, loss)), 1e-5);
}

TEST(Pnm, PpmRoundTripQuantizes) {
  Image img(2, 3, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i) / 17.0;
  const Image back = read_pnm(write_ppm(img));
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255 + 1e-12);
}

TEST(Pnm, PgmSingleChannel) {
  Grid2D g(2, 2, 2);
  g.data = {0.0, 1.0, 0.25, 1.0, 0.5, 1.0, 1.0, 1.0};
  const Image back = read_pnm(write_pgm(g, 0));
  EXPECT_EQ(back.channels, 1);
  EXPECT_EQ(back.at(0, 0, 0), 0.0);
  EXPECT_EQ(back.at(1, 1, 0), 1.0);
}

TEST(Pnm, RejectsGarbage) { EXPECT_THROW(read_pnm("P3\n1 1\n255\n0 0 0\n"), Error); }
