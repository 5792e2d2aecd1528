#include "decorfuse/decoration.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "decorfuse/error.hpp"
#include "decorfuse/image_backbone.hpp"

namespace decorfuse {

DecoratedCloud DecoratedCloud::undecorated(std::vector<LidarPoint> points, int channels) {
  DecoratedCloud c;
  c.channels = channels;
  c.features.assign(points.size() * static_cast<std::size_t>(channels), 0.0);
  c.points = std::move(points);
  return c;
}

namespace {

struct BilinearTaps {
  int x0, x1, y0, y1;
  double wx, wy;
};

BilinearTaps taps_for(const Grid2D& fmap, double u, double v) {
  const double cu = std::clamp(u, 0.0, static_cast<double>(fmap.width - 1));
  const double cv = std::clamp(v, 0.0, static_cast<double>(fmap.height - 1));
  BilinearTaps t;
  t.x0 = static_cast<int>(std::floor(cu));
  t.y0 = static_cast<int>(std::floor(cv));
  t.x1 = std::min(t.x0 + 1, fmap.width - 1);
  t.y1 = std::min(t.y0 + 1, fmap.height - 1);
  t.wx = cu - t.x0;
  t.wy = cv - t.y0;
  return t;
}

}  // namespace

std::vector<double> bilinear_sample(const Grid2D& fmap, double u, double v) {
  std::vector<double> out(static_cast<std::size_t>(fmap.channels), 0.0);
  if (fmap.height == 0 || fmap.width == 0) return out;
  const auto t = taps_for(fmap, u, v);
  const double w00 = (1 - t.wx) * (1 - t.wy), w01 = t.wx * (1 - t.wy);
  const double w10 = (1 - t.wx) * t.wy, w11 = t.wx * t.wy;
  for (int c = 0; c < fmap.channels; ++c)
    out[c] = w00 * fmap.at(t.y0, t.x0, c) + w01 * fmap.at(t.y0, t.x1, c) +
             w10 * fmap.at(t.y1, t.x0, c) + w11 * fmap.at(t.y1, t.x1, c);
  return out;
}

void bilinear_sample_adjoint(Grid2D& g, double u, double v, std::span<const double> cot) {
  if (cot.size() != static_cast<std::size_t>(g.channels))
    throw Error(ErrorKind::ShapeMismatch, "bilinear cotangent length");
  if (g.height == 0 || g.width == 0) return;
  const auto t = taps_for(g, u, v);
  const double w00 = (1 - t.wx) * (1 - t.wy), w01 = t.wx * (1 - t.wy);
  const double w10 = (1 - t.wx) * t.wy, w11 = t.wx * t.wy;
  for (int c = 0; c < g.channels; ++c) {
    g.at(t.y0, t.x0, c) += w00 * cot[c];
    g.at(t.y0, t.x1, c) += w01 * cot[c];
    g.at(t.y1, t.x0, c) += w10 * cot[c];
    g.at(t.y1, t.x1, c) += w11 * cot[c];
  }
}

DecoratedCloud decorate(std::span<const LidarPoint> points, const Grid2D& fmap,
                        const CalibRig& rig, int image_height, int image_width,
                        std::vector<SampleSite>* sites) {
  if (fmap.height * kBackboneStride != image_height || fmap.width * kBackboneStride != image_width)
    throw Error(ErrorKind::StrideMismatch, "feature map is not image/4");
  DecoratedCloud out = DecoratedCloud::undecorated({points.begin(), points.end()}, fmap.channels);
  if (sites) sites->assign(points.size(), SampleSite{});
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto px = project(points[i], rig);
    if (!px || px->u < 0.0 || px->u >= image_width || px->v < 0.0 || px->v >= image_height)
      continue;
    const double uf = px->u / kBackboneStride;
    const double vf = px->v / kBackboneStride;
    const auto f = bilinear_sample(fmap, uf, vf);
    std::copy(f.begin(), f.end(), out.feature(i).begin());
    if (sites) (*sites)[i] = {true, uf, vf};
  }
  return out;
}

Grid2D decorate_backward(std::span<const SampleSite> sites, int fmap_height, int fmap_width,
                         int channels, std::span<const double> cot) {
  if (cot.size() != sites.size() * static_cast<std::size_t>(channels))
    throw Error(ErrorKind::ShapeMismatch, "decorate cotangent size");
  Grid2D g(fmap_height, fmap_width, channels);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (!sites[i].valid) continue;
    bilinear_sample_adjoint(g, sites[i].u, sites[i].v,
                            cot.subspan(i * channels, static_cast<std::size_t>(channels)));
  }
  return g;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[off + i]);
  return v;
}

}  // namespace

std::string write_decorated_dump(const DecoratedCloud& cloud) {
  std::string out = "DFPC";
  put_u32(out, kDecoratedDumpVersion);
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  put_u32(out, static_cast<std::uint32_t>(cloud.channels));
  out.reserve(16 + cloud.size() * (4 + cloud.channels) * 4);
  auto put_f32 = [&](double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    put_f32(p.x);
    put_f32(p.y);
    put_f32(p.z);
    put_f32(p.r);
    for (double f : cloud.feature(i)) put_f32(f);
  }
  return out;
}

DecoratedCloud read_decorated_dump(std::string_view in) {
  if (in.size() < 16 || in.substr(0, 4) != "DFPC")
    throw Error(ErrorKind::BadFormat, "not a decorated point dump");
  if (get_u32(in, 4) != kDecoratedDumpVersion)
    throw Error(ErrorKind::BadFormat, "unsupported dump version");
  const std::size_t count = get_u32(in, 8);
  const int channels = static_cast<int>(get_u32(in, 12));
  const std::size_t row = 4 + static_cast<std::size_t>(channels);
  if (in.size() != 16 + count * row * 4) throw Error(ErrorKind::TruncatedRecord, "dump body");
  DecoratedCloud c;
  c.channels = channels;
  c.points.resize(count);
  c.features.resize(count * channels);
  std::size_t off = 16;
  auto get_f32 = [&]() {
    double v = std::bit_cast<float>(get_u32(in, off));
    off += 4;
    return v;
  };
  for (std::size_t i = 0; i < count; ++i) {
    c.points[i].x = get_f32();
    c.points[i].y = get_f32();
    c.points[i].z = get_f32();
    c.points[i].r = get_f32();
    for (double& f : c.feature(i)) f = get_f32();
  }
  return c;
}

}  // namespace decorfuse
