#include "decorfuse/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "decorfuse/error.hpp"

namespace decorfuse {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double number(std::string_view tok, int line_no) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw Error(ErrorKind::BadFormat, "line " + std::to_string(line_no) + ": bad number '" + std::string(tok) + "'");
  if (!std::isfinite(v))
    throw Error(ErrorKind::NonFiniteValue, "line " + std::to_string(line_no) + ": non-finite value");
  return v;
}

int class_field(std::string_view tok, int line_no) {
  int v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || v < 0)
    throw Error(ErrorKind::BadClass, "line " + std::to_string(line_no) + ": bad class '" + std::string(tok) + "'");
  return v;
}

template <typename Fn>
void for_each_row(std::string_view text, std::size_t fields, Fn&& fn) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const auto line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    const auto toks = split_ws(line);
    if (toks.empty() || toks[0].front() == '#') continue;
    if (toks.size() != fields)
      throw Error(ErrorKind::WrongCount, "line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(fields) + " fields, got " +
                                             std::to_string(toks.size()));
    fn(toks, line_no);
  }
}

Box3D box_from(std::span<const std::string_view> t, int line_no) {
  Box3D b;
  b.cx = number(t[0], line_no);
  b.cy = number(t[1], line_no);
  b.cz = number(t[2], line_no);
  b.l = number(t[3], line_no);
  b.w = number(t[4], line_no);
  b.h = number(t[5], line_no);
  b.yaw = number(t[6], line_no);
  return b;
}

void put_box(std::string& out, const Box3D& b) {
  for (double v : {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw}) out += " " + fmt(v);
}

}  // namespace

std::string format_labels(std::span<const LabeledBox> gt) {
  std::string out;
  for (const auto& g : gt) {
    out += std::to_string(g.class_id);
    put_box(out, g.box);
    out += "\n";
  }
  return out;
}

std::vector<LabeledBox> parse_labels(std::string_view text) {
  std::vector<LabeledBox> out;
  for_each_row(text, 8, [&](const std::vector<std::string_view>& t, int n) {
    out.push_back({box_from(std::span(t).subspan(1), n), class_field(t[0], n)});
  });
  return out;
}

std::string format_detections(std::span<const Detection> dets) {
  std::string out;
  for (const auto& d : dets) {
    out += std::to_string(d.class_id) + " " + fmt(d.score);
    put_box(out, d.box);
    out += "\n";
  }
  return out;
}

std::vector<Detection> parse_detections(std::string_view text) {
  std::vector<Detection> out;
  for_each_row(text, 9, [&](const std::vector<std::string_view>& t, int n) {
    out.push_back({class_field(t[0], n), number(t[1], n), box_from(std::span(t).subspan(2), n)});
  });
  return out;
}

void write_scene_dir(const fs::path& dir, const SyntheticScene& scene) {
  fs::create_directories(dir);
  const auto bin = write_kitti_bin(scene.points);
  write_file(dir / "velodyne.bin", std::string_view(reinterpret_cast<const char*>(bin.data()), bin.size()));
  write_file(dir / "image.ppm", write_ppm(scene.image));
  write_file(dir / "calib.txt", serialize_kitti_calib(scene.rig));
  write_file(dir / "label.txt", format_labels(scene.gt));
}

SyntheticScene read_scene_dir(const fs::path& dir) {
  SyntheticScene s;
  const std::string bin = read_file(dir / "velodyne.bin");
  s.points = read_kitti_bin(std::as_bytes(std::span(bin.data(), bin.size())));
  s.image = read_pnm(read_file(dir / "image.ppm"));
  s.rig = parse_kitti_calib(read_file(dir / "calib.txt"));
  if (fs::exists(dir / "label.txt")) s.gt = parse_labels(read_file(dir / "label.txt"));
  return s;
}

std::vector<fs::path> list_scene_dirs(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) throw Error(ErrorKind::Io, root.string() + " is not a directory");
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().rfind("scene_", 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace decorfuse
