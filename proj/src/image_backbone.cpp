#include "decorfuse/image_backbone.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "decorfuse/error.hpp"

namespace decorfuse {

Conv2DLayer Conv2DLayer::zeros(int kernel, int in_channels, int out_channels, int stride) {
  if (kernel < 1 || kernel % 2 == 0) throw Error(ErrorKind::InvalidConfig, "kernel must be odd");
  if (stride < 1) throw Error(ErrorKind::InvalidConfig, "stride must be >= 1");
  Conv2DLayer l;
  l.kernel = kernel;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.stride = stride;
  l.weight.assign(static_cast<std::size_t>(kernel) * kernel * in_channels * out_channels, 0.0);
  l.bias.assign(static_cast<std::size_t>(out_channels), 0.0);
  return l;
}

Conv2DLayer Conv2DLayer::init(int kernel, int in_channels, int out_channels, int stride,
                              Rng& rng) {
  Conv2DLayer l = zeros(kernel, in_channels, out_channels, stride);
  const double s = std::sqrt(1.0 / (kernel * kernel * in_channels));
  for (double& w : l.weight) w = rng.uniform(-s, s);
  return l;
}

Grid2D conv2d_forward(const Grid2D& in, const Conv2DLayer& layer) {
  if (in.channels != layer.in_channels)
    throw Error(ErrorKind::ChannelMismatch, "conv2d expects " + std::to_string(layer.in_channels) +
                                                " channels, got " + std::to_string(in.channels));
  const int s = layer.stride, k = layer.kernel, pad = layer.padding();
  const int oh = (in.height + s - 1) / s;
  const int ow = (in.width + s - 1) / s;
  const int cin = layer.in_channels, cout = layer.out_channels;
  Grid2D out(oh, ow, cout);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* o = out.data.data() + out.index(oy, ox, 0);
      std::copy(layer.bias.begin(), layer.bias.end(), o);
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * s - pad + ky;
        if (iy < 0 || iy >= in.height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * s - pad + kx;
          if (ix < 0 || ix >= in.width) continue;
          const double* x = in.data.data() + in.index(iy, ix, 0);
          const double* w = layer.weight.data() + layer.weight_index(ky, kx, 0, 0);
          for (int ci = 0; ci < cin; ++ci, w += cout) {
            const double v = x[ci];
            if (v == 0.0) continue;
            for (int co = 0; co < cout; ++co) o[co] += v * w[co];
          }
        }
      }
    }
  }
  return out;
}

Conv2DGrads conv2d_backward(const Grid2D& in, const Conv2DLayer& layer, const Grid2D& cot) {
  if (in.channels != layer.in_channels) throw Error(ErrorKind::ShapeMismatch, "conv2d input");
  const int s = layer.stride, k = layer.kernel, pad = layer.padding();
  const int oh = (in.height + s - 1) / s;
  const int ow = (in.width + s - 1) / s;
  if (cot.height != oh || cot.width != ow || cot.channels != layer.out_channels)
    throw Error(ErrorKind::ShapeMismatch, "conv2d output cotangent");
  const int cin = layer.in_channels, cout = layer.out_channels;
  Conv2DGrads g;
  g.input = Grid2D(in.height, in.width, cin);
  g.weight.assign(layer.weight.size(), 0.0);
  g.bias.assign(layer.bias.size(), 0.0);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* c = cot.data.data() + cot.index(oy, ox, 0);
      for (int co = 0; co < cout; ++co) g.bias[co] += c[co];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * s - pad + ky;
        if (iy < 0 || iy >= in.height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * s - pad + kx;
          if (ix < 0 || ix >= in.width) continue;
          const double* x = in.data.data() + in.index(iy, ix, 0);
          double* gx = g.input.data.data() + g.input.index(iy, ix, 0);
          const std::size_t base = layer.weight_index(ky, kx, 0, 0);
          const double* w = layer.weight.data() + base;
          double* gw = g.weight.data() + base;
          for (int ci = 0; ci < cin; ++ci, w += cout, gw += cout) {
            const double v = x[ci];
            double acc = 0.0;
            for (int co = 0; co < cout; ++co) {
              acc += w[co] * c[co];
              gw[co] += v * c[co];
            }
            gx[ci] += acc;
          }
        }
      }
    }
  }
  return g;
}

Grid2D relu(const Grid2D& x) {
  Grid2D y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Grid2D relu_backward(const Grid2D& pre, const Grid2D& cot) {
  if (!pre.same_shape(cot)) throw Error(ErrorKind::ShapeMismatch, "relu cotangent");
  Grid2D g = cot;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (!(pre.data[i] > 0.0)) g.data[i] = 0.0;
  return g;
}

Backbone2D Backbone2D::init(int feature_channels, Rng& rng) {
  Backbone2D net;
  net.conv1 = Conv2DLayer::init(3, 3, 16, 2, rng);
  net.conv2 = Conv2DLayer::init(3, 16, 32, 2, rng);
  net.conv3 = Conv2DLayer::init(3, 32, feature_channels, 1, rng);
  return net;
}

Backbone2D Backbone2D::zeros_like() const {
  return {conv1.zeros_like(), conv2.zeros_like(), conv3.zeros_like()};
}

void Backbone2D::for_each_param(
    const std::function<void(const std::string&, std::vector<double>&)>& fn) {
  fn("backbone2d.conv1.weight", conv1.weight);
  fn("backbone2d.conv1.bias", conv1.bias);
  fn("backbone2d.conv2.weight", conv2.weight);
  fn("backbone2d.conv2.bias", conv2.bias);
  fn("backbone2d.conv3.weight", conv3.weight);
  fn("backbone2d.conv3.bias", conv3.bias);
}

Grid2D backbone_forward(const Image& img, const Backbone2D& net, Backbone2DTape* tape) {
  if (img.height % kBackboneStride != 0 || img.width % kBackboneStride != 0)
    throw Error(ErrorKind::BadDims, "image " + std::to_string(img.height) + "x" +
                                        std::to_string(img.width) + " is not divisible by 4");
  Grid2D pre1 = conv2d_forward(img, net.conv1);
  Grid2D act1 = relu(pre1);
  Grid2D pre2 = conv2d_forward(act1, net.conv2);
  Grid2D act2 = relu(pre2);
  Grid2D out = conv2d_forward(act2, net.conv3);
  if (tape) {
    tape->input = img;
    tape->pre1 = std::move(pre1);
    tape->act1 = std::move(act1);
    tape->pre2 = std::move(pre2);
    tape->act2 = std::move(act2);
  }
  return out;
}

void backbone_backward(const Backbone2DTape& tape, const Backbone2D& net, const Grid2D& cot,
                       Backbone2D& grads) {
  auto g3 = conv2d_backward(tape.act2, net.conv3, cot);
  add_inplace(grads.conv3.weight, g3.weight);
  add_inplace(grads.conv3.bias, g3.bias);
  auto g2 = conv2d_backward(tape.act1, net.conv2, relu_backward(tape.pre2, g3.input));
  add_inplace(grads.conv2.weight, g2.weight);
  add_inplace(grads.conv2.bias, g2.bias);
  auto g1 = conv2d_backward(tape.input, net.conv1, relu_backward(tape.pre1, g2.input));
  add_inplace(grads.conv1.weight, g1.weight);
  add_inplace(grads.conv1.bias, g1.bias);
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::string_view bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw Error(ErrorKind::BadFormat, "truncated PNM header");
  return std::string(bytes.substr(start, pos - start));
}

int to_int(const std::string& s) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size()) throw Error(ErrorKind::BadFormat, "bad PNM header field " + s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::BadFormat, "bad PNM header field " + s);
  }
}

}  // namespace

Image read_pnm(std::string_view bytes) {
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, pos);
  int channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw Error(ErrorKind::BadFormat, "unsupported PNM magic " + magic);
  const int width = to_int(next_token(bytes, pos));
  const int height = to_int(next_token(bytes, pos));
  const int maxval = to_int(next_token(bytes, pos));
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
    throw Error(ErrorKind::BadFormat, "unsupported PNM dimensions or maxval");
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = static_cast<std::size_t>(width) * height * channels;
  if (bytes.size() < pos + need) throw Error(ErrorKind::TruncatedRecord, "PNM raster");
  Image img(height, width, channels);
  for (std::size_t i = 0; i < need; ++i)
    img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / static_cast<double>(maxval);
  return img;
}

namespace {

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::string write_ppm(const Image& img) {
  if (img.channels != 3) throw Error(ErrorKind::ChannelMismatch, "PPM needs 3 channels");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.reserve(out.size() + img.data.size());
  for (double v : img.data) out.push_back(static_cast<char>(quantize(v)));
  return out;
}

std::string write_pgm(const Grid2D& gray, int channel) {
  std::string out = "P5\n" + std::to_string(gray.width) + " " + std::to_string(gray.height) +
                    "\n255\n";
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) out.push_back(static_cast<char>(quantize(gray.at(y, x, channel))));
  return out;
}

}  // namespace decorfuse
