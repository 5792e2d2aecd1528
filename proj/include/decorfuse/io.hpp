#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decorfuse/detect_loss.hpp"
#include "decorfuse/scene.hpp"

namespace decorfuse {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// One object per line: class cx cy cz l w h yaw.
std::string format_labels(std::span<const LabeledBox> gt);
std::vector<LabeledBox> parse_labels(std::string_view text);

/// One detection per line: class score cx cy cz l w h yaw.
std::string format_detections(std::span<const Detection> dets);
std::vector<Detection> parse_detections(std::string_view text);

/// velodyne.bin, image.ppm, calib.txt, label.txt
void write_scene_dir(const std::filesystem::path& dir, const SyntheticScene& scene);
/// label.txt is optional.
SyntheticScene read_scene_dir(const std::filesystem::path& dir);

/// Subdirectories of root named scene_*, sorted.
std::vector<std::filesystem::path> list_scene_dirs(const std::filesystem::path& root);

}  // namespace decorfuse
