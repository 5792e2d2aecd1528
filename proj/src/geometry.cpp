#include "decorfuse/geometry.hpp"

#include <bit>
#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <sstream>

#include "decorfuse/error.hpp"

namespace decorfuse {

Mat4 identity4() {
  Mat4 m{};
  m[0] = m[5] = m[10] = m[15] = 1.0;
  return m;
}

Mat4 mul4(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 4 + j];
      c[i * 4 + j] = s;
    }
  return c;
}

Mat3x4 mul34(const Mat3x4& a, const Mat4& b) {
  Mat3x4 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 4 + j];
      c[i * 4 + j] = s;
    }
  return c;
}

CalibRig CalibRig::make(const Mat3x4& p, const Mat4& r, const Mat4& t) {
  CalibRig rig;
  rig.p_rect = p;
  rig.r_rect = r;
  rig.velo_to_cam = t;
  rig.recompose();
  return rig;
}

void CalibRig::recompose() { cam_from_lidar = mul34(mul34(p_rect, r_rect), velo_to_cam); }

namespace {

void check_bottom_row(const Mat4& m, const char* name) {
  if (m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0)
    throw Error(ErrorKind::InvalidConfig, std::string(name) + " bottom row is not (0,0,0,1)");
}

double det3(const Mat4& m) {
  return m[0] * (m[5] * m[10] - m[6] * m[9]) - m[1] * (m[4] * m[10] - m[6] * m[8]) +
         m[2] * (m[4] * m[9] - m[5] * m[8]);
}

}  // namespace

void CalibRig::validate() const {
  check_bottom_row(r_rect, "R0_rect");
  check_bottom_row(velo_to_cam, "Tr_velo_to_cam");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += velo_to_cam[i * 4 + k] * velo_to_cam[j * 4 + k];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-6)
        throw Error(ErrorKind::InvalidConfig, "Tr_velo_to_cam rotation is not orthonormal");
    }
  if (std::abs(det3(velo_to_cam) - 1.0) > 1e-6)
    throw Error(ErrorKind::InvalidConfig, "Tr_velo_to_cam rotation determinant is not +1");
  if (mul34(mul34(p_rect, r_rect), velo_to_cam) != cam_from_lidar)
    throw Error(ErrorKind::InvalidConfig, "composed calibration does not match its parts");
}

std::optional<PixelCoord> project(const LidarPoint& p, const Mat3x4& m) {
  const double u = m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3];
  const double v = m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7];
  const double w = m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11];
  if (w <= kMinDepth) return std::nullopt;
  return PixelCoord{u / w, v / w, w};
}

std::array<double, 3> unproject(const PixelCoord& px, const Mat3x4& m) {
  // Solve A * X = rhs with A the left 3x3 block, by Cramer's rule.
  const double rhs[3] = {px.u * px.depth - m[3], px.v * px.depth - m[7], px.depth - m[11]};
  auto a = [&](int i, int j) { return m[i * 4 + j]; };
  const double det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
                     a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
                     a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  if (det == 0.0) throw Error(ErrorKind::InvalidConfig, "projection block is singular");
  std::array<double, 3> out{};
  for (int col = 0; col < 3; ++col) {
    double b[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) b[i][j] = (j == col) ? rhs[i] : a(i, j);
    const double d = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                     b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                     b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    out[col] = d / det;
  }
  return out;
}

namespace {

std::vector<double> parse_floats(std::string_view name, std::string_view body) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos < body.size()) {
    while (pos < body.size() && std::isspace(static_cast<unsigned char>(body[pos]))) ++pos;
    if (pos >= body.size()) break;
    std::size_t end = pos;
    while (end < body.size() && !std::isspace(static_cast<unsigned char>(body[end]))) ++end;
    std::string_view tok = body.substr(pos, end - pos);
    // from_chars rejects a leading '+', which some writers emit.
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      throw Error(ErrorKind::NonFiniteValue,
                  std::string(name) + ": unparsable value '" + std::string(tok) + "'");
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, std::string(name));
    values.push_back(v);
    pos = end;
  }
  return values;
}

Mat4 promote3x3(const std::vector<double>& v) {
  Mat4 m = identity4();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i * 4 + j] = v[i * 3 + j];
  return m;
}

Mat4 promote3x4(const std::vector<double>& v) {
  Mat4 m = identity4();
  for (int i = 0; i < 12; ++i) m[i] = v[i];
  return m;
}

}  // namespace

CalibRig parse_kitti_calib(std::string_view text) {
  std::map<std::string, std::vector<double>, std::less<>> entries;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    const auto colon = line.find(':');
    if (colon != std::string_view::npos) {
      std::string key(line.substr(0, colon));
      while (!key.empty() && std::isspace(static_cast<unsigned char>(key.front()))) key.erase(0, 1);
      if (key == "P2" || key == "R0_rect" || key == "Tr_velo_to_cam")
        entries[key] = parse_floats(key, line.substr(colon + 1));
    }
    if (end == text.size()) break;
    start = end + 1;
  }

  auto fetch = [&](const char* name, std::size_t expected) -> const std::vector<double>& {
    auto it = entries.find(name);
    if (it == entries.end()) throw Error(ErrorKind::MissingKey, name);
    if (it->second.size() != expected)
      throw Error(ErrorKind::WrongCount, std::string(name) + " expected " +
                                             std::to_string(expected) + " got " +
                                             std::to_string(it->second.size()));
    return it->second;
  };

  const auto& p2 = fetch("P2", 12);
  const auto& r0 = fetch("R0_rect", 9);
  const auto& tr = fetch("Tr_velo_to_cam", 12);
  Mat3x4 p{};
  std::copy(p2.begin(), p2.end(), p.begin());
  return CalibRig::make(p, promote3x3(r0), promote3x4(tr));
}

namespace {

void write_row(std::ostringstream& os, const char* key, const double* v, int n) {
  os << key << ':';
  for (int i = 0; i < n; ++i) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v[i]);
    os << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
  }
  os << '\n';
}

}  // namespace

std::string serialize_kitti_calib(const CalibRig& rig) {
  std::ostringstream os;
  write_row(os, "P2", rig.p_rect.data(), 12);
  double r0[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r0[i * 3 + j] = rig.r_rect[i * 4 + j];
  write_row(os, "R0_rect", r0, 9);
  write_row(os, "Tr_velo_to_cam", rig.velo_to_cam.data(), 12);
  return os.str();
}

namespace {

float load_le_f32(const std::byte* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | std::to_integer<std::uint32_t>(p[i]);
  return std::bit_cast<float>(bits);
}

void store_le_f32(std::byte* p, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::byte>((bits >> (8 * i)) & 0xffu);
}

}  // namespace

std::vector<LidarPoint> read_kitti_bin(std::span<const std::byte> bytes) {
  if (bytes.size() % 16 != 0)
    throw Error(ErrorKind::TruncatedRecord,
                "velodyne payload of " + std::to_string(bytes.size()) + " bytes");
  std::vector<LidarPoint> points;
  points.reserve(bytes.size() / 16);
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    const std::byte* rec = bytes.data() + off;
    points.push_back({load_le_f32(rec), load_le_f32(rec + 4), load_le_f32(rec + 8),
                      load_le_f32(rec + 12)});
  }
  return points;
}

std::vector<std::byte> write_kitti_bin(std::span<const LidarPoint> points) {
  std::vector<std::byte> out(points.size() * 16);
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::byte* rec = out.data() + i * 16;
    store_le_f32(rec, static_cast<float>(points[i].x));
    store_le_f32(rec + 4, static_cast<float>(points[i].y));
    store_le_f32(rec + 8, static_cast<float>(points[i].z));
    store_le_f32(rec + 12, static_cast<float>(points[i].r));
  }
  return out;
}

}  // namespace decorfuse
