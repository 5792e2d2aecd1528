#include "decorfuse/sparse_conv.hpp"

#include <algorithm>
#include <cmath>

#include "decorfuse/error.hpp"

namespace decorfuse {

SparseConvLayer SparseConvLayer::zeros(SparseConvMode mode, int in_channels, int out_channels) {
  if (in_channels < 1 || out_channels < 1)
    throw Error(ErrorKind::InvalidConfig, "sparse conv channels must be >= 1");
  SparseConvLayer l;
  l.mode = mode;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.weight.assign(static_cast<std::size_t>(kSparseTaps) * in_channels * out_channels, 0.0);
  l.bias.assign(static_cast<std::size_t>(out_channels), 0.0);
  return l;
}

SparseConvLayer SparseConvLayer::init(SparseConvMode mode, int in_channels, int out_channels,
                                      Rng& rng) {
  SparseConvLayer l = zeros(mode, in_channels, out_channels);
  const double s = std::sqrt(1.0 / (kSparseTaps * in_channels));
  for (double& w : l.weight) w = rng.uniform(-s, s);
  return l;
}

Rulebook build_rulebook(const SparseTensor3D& in, SparseConvMode mode) {
  Rulebook rb;
  if (mode == SparseConvMode::submanifold) {
    rb.out_dims = in.dims;
    rb.out_coords = in.coords;
  } else {
    for (int a = 0; a < 3; ++a) rb.out_dims[a] = (in.dims[a] + 1) / 2;
    std::vector<VoxelCoord> cand;
    cand.reserve(in.size() * 8);
    for (const auto& c : in.coords) {
      for (int t = 0; t < kSparseTaps; ++t) {
        const auto d = tap_offset(t);
        VoxelCoord o{};
        bool ok = true;
        for (int a = 0; a < 3 && ok; ++a) {
          const int num = c[a] - d[a];
          if (num < 0 || num % 2 != 0) ok = false;
          else {
            o[a] = num / 2;
            if (o[a] >= rb.out_dims[a]) ok = false;
          }
        }
        if (ok) cand.push_back(o);
      }
    }
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    rb.out_coords = std::move(cand);
  }
  const int scale = mode == SparseConvMode::strided ? 2 : 1;
  for (std::size_t o = 0; o < rb.out_coords.size(); ++o) {
    const auto& oc = rb.out_coords[o];
    for (int t = 0; t < kSparseTaps; ++t) {
      const auto d = tap_offset(t);
      const VoxelCoord src{scale * oc[0] + d[0], scale * oc[1] + d[1], scale * oc[2] + d[2]};
      const auto idx = in.find(src);
      if (idx >= 0) rb.pairs[t].emplace_back(static_cast<int>(idx), static_cast<int>(o));
    }
  }
  return rb;
}

SparseTensor3D sparse_conv_forward(const SparseTensor3D& in, const SparseConvLayer& layer,
                                   const Rulebook& rules) {
  if (in.channels != layer.in_channels)
    throw Error(ErrorKind::ChannelMismatch, "sparse conv expects " +
                                                std::to_string(layer.in_channels) + " channels, got " +
                                                std::to_string(in.channels));
  const int cin = layer.in_channels, cout = layer.out_channels;
  SparseTensor3D out;
  out.dims = rules.out_dims;
  out.channels = cout;
  out.coords = rules.out_coords;
  out.features.resize(out.coords.size() * cout);
  for (std::size_t o = 0; o < out.coords.size(); ++o)
    std::copy(layer.bias.begin(), layer.bias.end(), out.features.begin() + o * cout);
  for (int t = 0; t < kSparseTaps; ++t) {
    const double* wt = layer.weight.data() + layer.weight_index(t, 0, 0);
    for (const auto& [i, o] : rules.pairs[t]) {
      const double* x = in.features.data() + static_cast<std::size_t>(i) * cin;
      double* y = out.features.data() + static_cast<std::size_t>(o) * cout;
      const double* w = wt;
      for (int ci = 0; ci < cin; ++ci, w += cout) {
        const double v = x[ci];
        if (v == 0.0) continue;
        for (int co = 0; co < cout; ++co) y[co] += v * w[co];
      }
    }
  }
  return out;
}

SparseTensor3D sparse_conv_forward(const SparseTensor3D& in, const SparseConvLayer& layer) {
  if (in.channels != layer.in_channels)
    throw Error(ErrorKind::ChannelMismatch, "sparse conv input channels");
  return sparse_conv_forward(in, layer, build_rulebook(in, layer.mode));
}

SparseTensor3D subm_conv_forward(const SparseTensor3D& in, const SparseConvLayer& layer) {
  if (layer.mode != SparseConvMode::submanifold)
    throw Error(ErrorKind::InvalidConfig, "layer is not submanifold");
  return sparse_conv_forward(in, layer);
}

SparseTensor3D strided_conv_forward(const SparseTensor3D& in, const SparseConvLayer& layer) {
  if (layer.mode != SparseConvMode::strided)
    throw Error(ErrorKind::InvalidConfig, "layer is not strided");
  return sparse_conv_forward(in, layer);
}

SparseConvGrads sparse_conv_backward(const SparseTensor3D& in, const SparseConvLayer& layer,
                                     const Rulebook& rules, const SparseTensor3D& cot) {
  const int cin = layer.in_channels, cout = layer.out_channels;
  if (in.channels != cin || cot.channels != cout || cot.coords.size() != rules.out_coords.size() ||
      cot.features.size() != cot.coords.size() * cout)
    throw Error(ErrorKind::ShapeMismatch, "sparse conv backward shapes");
  SparseConvGrads g;
  g.input.assign(in.features.size(), 0.0);
  g.weight.assign(layer.weight.size(), 0.0);
  g.bias.assign(layer.bias.size(), 0.0);
  for (std::size_t o = 0; o < cot.coords.size(); ++o)
    for (int co = 0; co < cout; ++co) g.bias[co] += cot.features[o * cout + co];
  for (int t = 0; t < kSparseTaps; ++t) {
    const std::size_t base = layer.weight_index(t, 0, 0);
    for (const auto& [i, o] : rules.pairs[t]) {
      const double* x = in.features.data() + static_cast<std::size_t>(i) * cin;
      const double* c = cot.features.data() + static_cast<std::size_t>(o) * cout;
      double* gx = g.input.data() + static_cast<std::size_t>(i) * cin;
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
  return g;
}

SparseConvGrads sparse_conv_backward(const SparseTensor3D& in, const SparseConvLayer& layer,
                                     const SparseTensor3D& cot) {
  return sparse_conv_backward(in, layer, build_rulebook(in, layer.mode), cot);
}

SparseTensor3D sparse_relu(const SparseTensor3D& x) {
  SparseTensor3D y = x;
  for (double& v : y.features) v = v > 0.0 ? v : 0.0;
  return y;
}

Grid2D bev_flatten(const SparseTensor3D& st) {
  const int c = st.channels;
  Grid2D bev(st.dims[0], st.dims[1], st.dims[2] * c);
  for (std::size_t n = 0; n < st.size(); ++n) {
    const auto& v = st.coords[n];
    const auto row = st.row(n);
    std::copy(row.begin(), row.end(), bev.data.begin() + bev.index(v[0], v[1], v[2] * c));
  }
  return bev;
}

std::vector<double> bev_flatten_backward(const SparseTensor3D& st, const Grid2D& cot) {
  const int c = st.channels;
  if (cot.height != st.dims[0] || cot.width != st.dims[1] || cot.channels != st.dims[2] * c)
    throw Error(ErrorKind::ShapeMismatch, "BEV cotangent shape");
  std::vector<double> g(st.features.size());
  for (std::size_t n = 0; n < st.size(); ++n) {
    const auto& v = st.coords[n];
    const auto begin = cot.data.begin() + cot.index(v[0], v[1], v[2] * c);
    std::copy(begin, begin + c, g.begin() + n * c);
  }
  return g;
}

Grid2D channel_concat(const Grid2D& a, const Grid2D& b) {
  if (a.height != b.height || a.width != b.width)
    throw Error(ErrorKind::SpatialMismatch, "concat of differently sized BEV maps");
  Grid2D out(a.height, a.width, a.channels + b.channels);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      auto dst = out.cell(y, x);
      const auto sa = a.cell(y, x), sb = b.cell(y, x);
      std::copy(sa.begin(), sa.end(), dst.begin());
      std::copy(sb.begin(), sb.end(), dst.begin() + a.channels);
    }
  return out;
}

std::pair<Grid2D, Grid2D> channel_split(const Grid2D& j, int first) {
  if (first < 0 || first > j.channels) throw Error(ErrorKind::ShapeMismatch, "split point");
  Grid2D a(j.height, j.width, first), b(j.height, j.width, j.channels - first);
  for (int y = 0; y < j.height; ++y)
    for (int x = 0; x < j.width; ++x) {
      const auto src = j.cell(y, x);
      std::copy(src.begin(), src.begin() + first, a.cell(y, x).begin());
      std::copy(src.begin() + first, src.end(), b.cell(y, x).begin());
    }
  return {std::move(a), std::move(b)};
}

SparseStream SparseStream::init(int in_channels, const std::vector<int>& schedule, Rng& rng) {
  SparseStream s;
  int cin = in_channels;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto mode = (i % 2 == 0) ? SparseConvMode::submanifold : SparseConvMode::strided;
    s.layers.push_back(SparseConvLayer::init(mode, cin, schedule[i], rng));
    cin = schedule[i];
  }
  return s;
}

SparseStream SparseStream::zeros_like() const {
  SparseStream s;
  for (const auto& l : layers) s.layers.push_back(l.zeros_like());
  return s;
}

void SparseStream::for_each_param(
    const std::string& prefix,
    const std::function<void(const std::string&, std::vector<double>&)>& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    fn(prefix + ".layer" + std::to_string(i) + ".weight", layers[i].weight);
    fn(prefix + ".layer" + std::to_string(i) + ".bias", layers[i].bias);
  }
}

SparseTensor3D sparse_stream_forward(const SparseTensor3D& input, const SparseStream& stream,
                                     SparseStreamTape* tape) {
  SparseTensor3D x = input;
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
    tape->rules.clear();
  }
  for (const auto& layer : stream.layers) {
    Rulebook rb = build_rulebook(x, layer.mode);
    SparseTensor3D pre = sparse_conv_forward(x, layer, rb);
    SparseTensor3D act = sparse_relu(pre);
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->pre.push_back(std::move(pre));
      tape->rules.push_back(std::move(rb));
    }
    x = std::move(act);
  }
  return x;
}

std::vector<double> sparse_stream_backward(const SparseStreamTape& tape, const SparseStream& stream,
                                           const SparseTensor3D& output_cotangent,
                                           SparseStream& grads) {
  SparseTensor3D cot = output_cotangent;
  std::vector<double> input_cot = cot.features;
  for (std::size_t li = stream.layers.size(); li-- > 0;) {
    const auto& pre = tape.pre[li];
    for (std::size_t k = 0; k < cot.features.size(); ++k)
      if (!(pre.features[k] > 0.0)) cot.features[k] = 0.0;
    auto g = sparse_conv_backward(tape.inputs[li], stream.layers[li], tape.rules[li], cot);
    add_inplace(grads.layers[li].weight, g.weight);
    add_inplace(grads.layers[li].bias, g.bias);
    input_cot = std::move(g.input);
    if (li > 0) {
      cot = tape.inputs[li];
      cot.features = input_cot;
    }
  }
  return input_cot;
}

}  // namespace decorfuse
