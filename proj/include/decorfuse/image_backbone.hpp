#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "decorfuse/tensor.hpp"

namespace decorfuse {

/// Image: Grid2D with 3 channels, intensities in [0,1].
using Image = Grid2D;

/// Square-kernel 2D convolution with shape-preserving zero padding (k-1)/2.
/// Weights are laid out [ky][kx][in][out].
struct Conv2DLayer {
  int kernel = 1;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<double> weight;
  std::vector<double> bias;

  int padding() const { return (kernel - 1) / 2; }
  std::size_t weight_index(int ky, int kx, int ci, int co) const {
    return ((static_cast<std::size_t>(ky) * kernel + kx) * in_channels + ci) * out_channels + co;
  }

  static Conv2DLayer zeros(int kernel, int in_channels, int out_channels, int stride);
  /// Uniform on [-s, s] with s = sqrt(1/(k*k*in)); zero bias.
  static Conv2DLayer init(int kernel, int in_channels, int out_channels, int stride, Rng& rng);
  Conv2DLayer zeros_like() const { return zeros(kernel, in_channels, out_channels, stride); }
};

Grid2D conv2d_forward(const Grid2D& input, const Conv2DLayer& layer);

struct Conv2DGrads {
  Grid2D input;
  std::vector<double> weight;
  std::vector<double> bias;
};

Conv2DGrads conv2d_backward(const Grid2D& input, const Conv2DLayer& layer,
                            const Grid2D& output_cotangent);

Grid2D relu(const Grid2D& x);
/// Cotangent passes where the forward input was positive.
Grid2D relu_backward(const Grid2D& pre_activation, const Grid2D& cotangent);

/// conv(3->16, s2) -> ReLU -> conv(16->32, s2) -> ReLU -> conv(32->C, s1)
struct Backbone2D {
  Conv2DLayer conv1;
  Conv2DLayer conv2;
  Conv2DLayer conv3;

  static Backbone2D init(int feature_channels, Rng& rng);
  Backbone2D zeros_like() const;
  int feature_channels() const { return conv3.out_channels; }
  void for_each_param(const std::function<void(const std::string&, std::vector<double>&)>& fn);
};

struct Backbone2DTape {
  Grid2D input;
  Grid2D pre1, act1;
  Grid2D pre2, act2;
};

inline constexpr int kBackboneStride = 4;

/// Output is (H/4, W/4, C). Throws BadDims if H or W is not divisible by 4.
Grid2D backbone_forward(const Image& img, const Backbone2D& net, Backbone2DTape* tape = nullptr);
/// Accumulates parameter gradients into grads.
void backbone_backward(const Backbone2DTape& tape, const Backbone2D& net,
                       const Grid2D& feature_cotangent, Backbone2D& grads);

/// Binary PPM (P6, 3 channels) or PGM (P5, 1 channel), maxval <= 255.
Image read_pnm(std::string_view bytes);
std::string write_ppm(const Image& img);
std::string write_pgm(const Grid2D& gray, int channel = 0);

}  // namespace decorfuse
