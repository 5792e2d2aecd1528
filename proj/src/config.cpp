#include "decorfuse/config.hpp"

#include <json.hpp>
#include <set>

#include "decorfuse/error.hpp"

namespace decorfuse {

using nlohmann::json;

void Config::validate() const {
  grid.validate();
  if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (fade_epochs < 0 || fade_epochs > epochs)
    throw Error(ErrorKind::InvalidConfig, "fade_epochs must lie in [0, epochs]");
  if (!(lr_max >= 0.0)) throw Error(ErrorKind::InvalidConfig, "lr_max must be >= 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorKind::InvalidConfig, "weight_decay must be >= 0");
  if (!(beta1_low > 0.0 && beta1_low <= beta1_high && beta1_high < 1.0))
    throw Error(ErrorKind::InvalidConfig, "momentum_range must satisfy 0 < low <= high < 1");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw Error(ErrorKind::InvalidConfig, "beta2 must lie in (0, 1)");
  if (!(loss_weight >= 0.0)) throw Error(ErrorKind::InvalidConfig, "loss_weight must be >= 0");
  if (num_classes < 1) throw Error(ErrorKind::InvalidConfig, "num_classes must be >= 1");
  if (image_channels < 1) throw Error(ErrorKind::InvalidConfig, "image_channels must be >= 1");
  if (image_height < 4 || image_width < 4 || image_height % 4 || image_width % 4)
    throw Error(ErrorKind::InvalidConfig, "image dims must be positive multiples of 4");
  if (stream_channels.empty() || stream_channels.size() % 2 != 0)
    throw Error(ErrorKind::InvalidConfig, "stream_channels needs (subm, strided) pairs");
  for (int c : stream_channels)
    if (c < 1) throw Error(ErrorKind::InvalidConfig, "stream channels must be >= 1");
  if (heatmap_hidden < 1 || d_model < 1 || fc_units < 1 || head_hidden < 1)
    throw Error(ErrorKind::InvalidConfig, "layer widths must be >= 1");
  if (queries_per_class < 1) throw Error(ErrorKind::InvalidConfig, "queries_per_class must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw Error(ErrorKind::InvalidConfig, "dropout_rate must lie in [0, 1)");
  if (!(assign_radius > 0.0)) throw Error(ErrorKind::InvalidConfig, "assign_radius must be > 0");
  if (paste_per_scene < 0) throw Error(ErrorKind::InvalidConfig, "paste_per_scene must be >= 0");
  if (scene.min_objects < 0 || scene.max_objects < scene.min_objects)
    throw Error(ErrorKind::InvalidConfig, "scene object counts");
  if (scene.surface_points < 20)
    throw Error(ErrorKind::InvalidConfig, "scene.surface_points must be >= 20");
  if (scene.clutter_points < 0) throw Error(ErrorKind::InvalidConfig, "scene.clutter_points");
  if (!(scene.focal > 0.0)) throw Error(ErrorKind::InvalidConfig, "scene.focal must be > 0");
}

int Config::bev_downsample() const { return 1 << (stream_channels.size() / 2); }

int Config::bev_depth() const {
  int nz = grid.dims()[2];
  for (std::size_t k = 0; k < stream_channels.size() / 2; ++k) nz = (nz + 1) / 2;
  return nz;
}

int Config::stream_bev_channels() const { return bev_depth() * stream_out_channels(); }

int Config::fused_bev_channels() const {
  return ablation.two_sparse_conv ? 2 * stream_bev_channels() : stream_bev_channels();
}

int Config::camera_bev_channels() const { return stream_bev_channels(); }

int Config::query_dim() const {
  const bool category = ablation.category_embedding && ablation.heatmap_init;
  return fused_bev_channels() + (category ? num_classes : 0);
}

void Config::apply_ablation(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw Error(ErrorKind::InvalidConfig, "ablation must look like flag=on|off");
  const std::string key(assignment.substr(0, eq));
  const std::string val(assignment.substr(eq + 1));
  bool on;
  if (val == "on") on = true;
  else if (val == "off") on = false;
  else throw Error(ErrorKind::InvalidConfig, "ablation value must be on or off");
  if (key == "decoration") ablation.decoration = on;
  else if (key == "e2e") ablation.e2e = on;
  else if (key == "two_sparse_conv") ablation.two_sparse_conv = on;
  else if (key == "heatmap_init") ablation.heatmap_init = on;
  else if (key == "category_embedding") ablation.category_embedding = on;
  else throw Error(ErrorKind::InvalidConfig, "unknown ablation flag '" + key + "'");
}

void Config::set_grid(const std::string& preset) {
  grid = VoxelGridSpec::preset(preset);
  grid_name = preset;
  if (preset == "kitti") lr_max = 2e-3;
  if (preset == "waymo") lr_max = 3e-3;
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::InvalidConfig, where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw Error(ErrorKind::InvalidConfig, "unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad value for '") + key + "': " + e.what());
  }
}

std::array<double, 3> triple(const json& v, const char* what) {
  if (!v.is_array() || v.size() != 3)
    throw Error(ErrorKind::InvalidConfig, std::string(what) + " needs 3 numbers");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

}  // namespace

Config config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"grid", "seed", "epochs", "lr_max", "weight_decay", "momentum_range", "beta2",
                  "fade_epochs", "loss_weight", "ablation", "num_classes", "image_channels",
                  "image_height", "image_width", "stream_channels", "heatmap_hidden",
                  "queries_per_class", "d_model", "fc_units", "dropout_rate", "head_hidden",
                  "assign_radius", "max_points_per_voxel", "nms_iou", "paste_per_scene", "scene"},
                 "config");
  Config c;
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    if (g.is_string()) {
      c.set_grid(g.get<std::string>());
    } else {
      reject_unknown(g, {"voxel_size", "lo", "hi"}, "grid");
      if (!g.contains("voxel_size") || !g.contains("lo") || !g.contains("hi"))
        throw Error(ErrorKind::InvalidConfig, "custom grid needs voxel_size, lo and hi");
      c.grid = {triple(g["voxel_size"], "voxel_size"), triple(g["lo"], "lo"), triple(g["hi"], "hi")};
      c.grid_name = "custom";
    }
  }
  read(j, "seed", c.seed);
  read(j, "epochs", c.epochs);
  read(j, "lr_max", c.lr_max);
  read(j, "weight_decay", c.weight_decay);
  if (j.contains("momentum_range")) {
    const auto& m = j["momentum_range"];
    if (!m.is_array() || m.size() != 2)
      throw Error(ErrorKind::InvalidConfig, "momentum_range needs [low, high]");
    c.beta1_low = m[0].get<double>();
    c.beta1_high = m[1].get<double>();
  }
  read(j, "beta2", c.beta2);
  read(j, "fade_epochs", c.fade_epochs);
  read(j, "loss_weight", c.loss_weight);
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    reject_unknown(a, {"decoration", "e2e", "two_sparse_conv", "heatmap_init", "category_embedding"},
                   "ablation");
    read(a, "decoration", c.ablation.decoration);
    read(a, "e2e", c.ablation.e2e);
    read(a, "two_sparse_conv", c.ablation.two_sparse_conv);
    read(a, "heatmap_init", c.ablation.heatmap_init);
    read(a, "category_embedding", c.ablation.category_embedding);
  }
  read(j, "num_classes", c.num_classes);
  read(j, "image_channels", c.image_channels);
  read(j, "image_height", c.image_height);
  read(j, "image_width", c.image_width);
  read(j, "stream_channels", c.stream_channels);
  read(j, "heatmap_hidden", c.heatmap_hidden);
  read(j, "queries_per_class", c.queries_per_class);
  read(j, "d_model", c.d_model);
  read(j, "fc_units", c.fc_units);
  read(j, "dropout_rate", c.dropout_rate);
  read(j, "head_hidden", c.head_hidden);
  read(j, "assign_radius", c.assign_radius);
  read(j, "max_points_per_voxel", c.max_points_per_voxel);
  read(j, "nms_iou", c.nms_iou);
  read(j, "paste_per_scene", c.paste_per_scene);
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    reject_unknown(s,
                   {"min_objects", "max_objects", "clutter_points", "surface_points", "ground_z",
                    "focal", "min_center_gap", "max_abs_yaw"},
                   "scene");
    read(s, "min_objects", c.scene.min_objects);
    read(s, "max_objects", c.scene.max_objects);
    read(s, "clutter_points", c.scene.clutter_points);
    read(s, "surface_points", c.scene.surface_points);
    read(s, "ground_z", c.scene.ground_z);
    read(s, "focal", c.scene.focal);
    read(s, "min_center_gap", c.scene.min_center_gap);
    read(s, "max_abs_yaw", c.scene.max_abs_yaw);
  }
  c.validate();
  return c;
}

std::string config_to_json(const Config& c) {
  json j;
  if (c.grid_name == "custom")
    j["grid"] = {{"voxel_size", c.grid.voxel_size}, {"lo", c.grid.lo}, {"hi", c.grid.hi}};
  else
    j["grid"] = c.grid_name;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["lr_max"] = c.lr_max;
  j["weight_decay"] = c.weight_decay;
  j["momentum_range"] = {c.beta1_low, c.beta1_high};
  j["beta2"] = c.beta2;
  j["fade_epochs"] = c.fade_epochs;
  j["loss_weight"] = c.loss_weight;
  j["ablation"] = {{"decoration", c.ablation.decoration},
                   {"e2e", c.ablation.e2e},
                   {"two_sparse_conv", c.ablation.two_sparse_conv},
                   {"heatmap_init", c.ablation.heatmap_init},
                   {"category_embedding", c.ablation.category_embedding}};
  j["num_classes"] = c.num_classes;
  j["image_channels"] = c.image_channels;
  j["image_height"] = c.image_height;
  j["image_width"] = c.image_width;
  j["stream_channels"] = c.stream_channels;
  j["heatmap_hidden"] = c.heatmap_hidden;
  j["queries_per_class"] = c.queries_per_class;
  j["d_model"] = c.d_model;
  j["fc_units"] = c.fc_units;
  j["dropout_rate"] = c.dropout_rate;
  j["head_hidden"] = c.head_hidden;
  j["assign_radius"] = c.assign_radius;
  j["max_points_per_voxel"] = c.max_points_per_voxel;
  j["nms_iou"] = c.nms_iou;
  j["paste_per_scene"] = c.paste_per_scene;
  j["scene"] = {{"min_objects", c.scene.min_objects},
                {"max_objects", c.scene.max_objects},
                {"clutter_points", c.scene.clutter_points},
                {"surface_points", c.scene.surface_points},
                {"ground_z", c.scene.ground_z},
                {"focal", c.scene.focal},
                {"min_center_gap", c.scene.min_center_gap},
                {"max_abs_yaw", c.scene.max_abs_yaw}};
  return j.dump(2);
}

std::uint64_t config_hash(const Config& c) {
  const std::string s = config_to_json(c);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace decorfuse
