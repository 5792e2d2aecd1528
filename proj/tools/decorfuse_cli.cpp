#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "decorfuse/config.hpp"
#include "decorfuse/decoration.hpp"
#include "decorfuse/error.hpp"
#include "decorfuse/eval_metrics.hpp"
#include "decorfuse/gradcheck.hpp"
#include "decorfuse/io.hpp"
#include "decorfuse/model.hpp"
#include "decorfuse/parallel.hpp"
#include "decorfuse/train.hpp"

namespace fs = std::filesystem;
using namespace decorfuse;

namespace {

struct CommonOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string grid;
  std::vector<std::string> ablations;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&o](const std::uint64_t& s) { o.seed = s; o.seed_set = true; }, "RNG seed");
  cmd->add_option("--grid", o.grid, "voxel grid preset")->check(CLI::IsMember({"kitti", "waymo", "desk"}));
  cmd->add_option("--ablate", o.ablations, "flag=on|off (repeatable)");
  cmd->add_option("--out", o.out, "output path");
}

Config resolve_config(const CommonOptions& o) {
  Config c = o.config_path.empty() ? Config{} : config_from_json(read_file(o.config_path));
  if (!o.grid.empty()) c.set_grid(o.grid);
  if (o.seed_set) c.seed = o.seed;
  for (const auto& a : o.ablations) c.apply_ablation(a);
  c.validate();
  return c;
}

std::vector<SyntheticScene> load_scenes(const fs::path& root) {
  std::vector<SyntheticScene> scenes;
  for (const auto& dir : list_scene_dirs(root)) scenes.push_back(read_scene_dir(dir));
  if (scenes.empty()) throw Error(ErrorKind::Io, "no scene_* directories under " + root.string());
  return scenes;
}

std::string scene_name(std::size_t i) {
  std::ostringstream os;
  os << "scene_" << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

int cmd_synth(const CommonOptions& o, int count) {
  const Config c = resolve_config(o);
  const fs::path out = o.out.empty() ? fs::path("scenes") : fs::path(o.out);
  const auto scenes = generate_scenes(c, count);
  fs::create_directories(out);
  for (std::size_t i = 0; i < scenes.size(); ++i) write_scene_dir(out / scene_name(i), scenes[i]);
  write_file(out / "config.json", config_to_json(c));
  std::cout << "wrote " << scenes.size() << " scenes to " << out.string() << "\n";
  return 0;
}

int cmd_decorate(const CommonOptions& o, const std::string& scene_dir, const std::string& ckpt_path) {
  Config c = resolve_config(o);
  const SyntheticScene scene = read_scene_dir(scene_dir);
  Backbone2D backbone;
  if (!ckpt_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(read_file(ckpt_path));
    backbone = ckpt.model.backbone;
  } else {
    Rng rng(c.seed);
    backbone = Backbone2D::init(c.image_channels, rng);
  }
  const Grid2D fmap = backbone_forward(scene.image, backbone);
  const DecoratedCloud cloud = decorate(scene.points, fmap, scene.rig, scene.image.height, scene.image.width);
  const fs::path out = o.out.empty() ? fs::path("decorated.dfpc") : fs::path(o.out);
  write_file(out, write_decorated_dump(cloud));
  std::cout << "decorated " << cloud.size() << " points with " << cloud.channels << " channels -> "
            << out.string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& scenes_dir, int count) {
  const Config c = resolve_config(o);
  const auto scenes = scenes_dir.empty() ? generate_scenes(c, count) : load_scenes(scenes_dir);
  TrainResult r = train(c, scenes);
  const fs::path out = o.out.empty() ? fs::path("run") : fs::path(o.out);
  fs::create_directories(out);
  write_file(out / "checkpoint.bin", save_checkpoint(r.checkpoint));
  write_file(out / "train_log.txt", format_train_log(r.epochs));
  write_file(out / "config.json", config_to_json(c));
  const auto& first = r.epochs.front().mean;
  const auto& last = r.epochs.back().mean;
  std::cout << "trained " << r.steps.size() << " steps; total loss " << first.total << " -> " << last.total
            << "\ncheckpoint: " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

int cmd_infer(const CommonOptions& o, const std::string& ckpt_path, const std::string& scenes_dir) {
  const Checkpoint ckpt = load_checkpoint(read_file(ckpt_path));
  const Config c = o.config_path.empty() && o.grid.empty() && !o.seed_set && o.ablations.empty()
                       ? ckpt.config
                       : resolve_config(o);
  const auto dirs = list_scene_dirs(scenes_dir);
  std::vector<SyntheticScene> scenes;
  for (const auto& d : dirs) scenes.push_back(read_scene_dir(d));
  std::vector<std::vector<Detection>> dets(scenes.size());
  std::vector<Grid2D> heatmaps(scenes.size());
  if (config_hash(c) != ckpt.config_hash)
    throw Error(ErrorKind::ConfigMismatch, "checkpoint was trained under a different config");
  parallel_for(scenes.size(), [&](std::size_t i) {
    const ForwardOutput fo = model_forward(ckpt.model, c, scenes[i], false, 0);
    dets[i] = decode_detections(fo, c);
    heatmaps[i] = fo.heatmap;
  });
  const fs::path out = o.out.empty() ? fs::path("detections") : fs::path(o.out);
  fs::create_directories(out);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string name = dirs[i].filename().string();
    write_file(out / (name + ".txt"), format_detections(dets[i]));
    for (int k = 0; k < heatmaps[i].channels; ++k)
      write_file(out / (name + "_heatmap" + std::to_string(k) + ".pgm"), write_pgm(heatmaps[i], k));
  }
  std::cout << "inferred " << scenes.size() << " scenes -> " << out.string() << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& det_dir, const std::string& scenes_dir,
             const std::string& preset, double iou_override, bool bev) {
  const Config c = resolve_config(o);
  const double thr = iou_override > 0.0 ? iou_override : iou_threshold(class_preset_from_string(preset));
  std::vector<FrameResult> frames;
  for (const auto& d : list_scene_dirs(scenes_dir)) {
    FrameResult f;
    f.ground_truth = parse_labels(read_file(d / "label.txt"));
    const fs::path det_file = fs::path(det_dir) / (d.filename().string() + ".txt");
    f.detections = parse_detections(read_file(det_file));
    frames.push_back(std::move(f));
  }
  std::ostringstream report;
  report << "# detection evaluation\n";
  report << "frames=" << frames.size() << "\n";
  report << "iou_threshold=" << thr << "\n";
  report << "iou_mode=" << (bev ? "bev" : "3d") << "\n";
  double sum = 0.0;
  for (int k = 0; k < c.num_classes; ++k) {
    const MatchResult m = match_detections(frames, k, thr, !bev);
    const double ap = ap_40(m);
    sum += ap;
    report << "class" << k << ".num_gt=" << m.num_gt << "\n";
    report << "class" << k << ".ap40=" << ap << "\n";
  }
  report << "map40=" << sum / c.num_classes << "\n";
  report << "classification_accuracy=" << classification_accuracy(frames, thr) << "\n";
  std::cout << report.str();
  if (!o.out.empty()) write_file(o.out, report.str());
  return 0;
}

int cmd_gradcheck(const CommonOptions& o, int instances) {
  GradcheckOptions g;
  if (o.seed_set) g.seed = o.seed;
  g.instances = instances;
  bool ok = true;
  std::ostringstream report;
  for (const auto& r : run_gradcheck(g)) {
    report << (r.passed ? "PASS " : "FAIL ") << r.op << " instances=" << r.instances
           << " max_rel_error=" << r.max_error << "\n";
    ok = ok && r.passed;
  }
  std::cout << report.str();
  if (!o.out.empty()) write_file(o.out, report.str());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DecoratingFusion desk-scale detector"};
  app.require_subcommand(1);

  CommonOptions synth_o, deco_o, train_o, infer_o, eval_o, grad_o;
  int synth_count = 5, train_count = 5, grad_instances = 20;
  std::string deco_scene, deco_ckpt, train_scenes, infer_ckpt, infer_scenes, eval_dets, eval_scenes;
  std::string eval_preset = "vehicle";
  double eval_iou = 0.0;
  bool eval_bev = false;

  auto* synth = app.add_subcommand("synth", "generate synthetic scenes");
  add_common(synth, synth_o);
  synth->add_option("--count", synth_count, "number of scenes")->check(CLI::NonNegativeNumber);

  auto* deco = app.add_subcommand("decorate", "points + image + calib -> decorated point dump");
  add_common(deco, deco_o);
  deco->add_option("--scene", deco_scene, "scene directory")->required()->check(CLI::ExistingDirectory);
  deco->add_option("--checkpoint", deco_ckpt, "take the 2D backbone from a checkpoint")
      ->check(CLI::ExistingFile);

  auto* tr = app.add_subcommand("train", "train on a scene set");
  add_common(tr, train_o);
  tr->add_option("--scenes", train_scenes, "directory of scene_* dirs (default: synthesize)")
      ->check(CLI::ExistingDirectory);
  tr->add_option("--count", train_count, "scenes to synthesize when --scenes is absent")
      ->check(CLI::PositiveNumber);

  auto* inf = app.add_subcommand("infer", "run a checkpoint on scenes");
  add_common(inf, infer_o);
  inf->add_option("--checkpoint", infer_ckpt)->required()->check(CLI::ExistingFile);
  inf->add_option("--scenes", infer_scenes)->required()->check(CLI::ExistingDirectory);

  auto* ev = app.add_subcommand("eval", "AP@40 report from detections and labels");
  add_common(ev, eval_o);
  ev->add_option("--detections", eval_dets)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--scenes", eval_scenes)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--preset", eval_preset, "vehicle (IoU 0.7) or pedestrian (IoU 0.5)")
      ->check(CLI::IsMember({"vehicle", "pedestrian"}));
  ev->add_option("--iou", eval_iou, "explicit IoU threshold, overrides --preset");
  ev->add_flag("--bev", eval_bev, "match on BEV IoU instead of 3D IoU");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  add_common(gc, grad_o);
  gc->add_option("--instances", grad_instances)->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_o, synth_count);
    if (deco->parsed()) return cmd_decorate(deco_o, deco_scene, deco_ckpt);
    if (tr->parsed()) return cmd_train(train_o, train_scenes, train_count);
    if (inf->parsed()) return cmd_infer(infer_o, infer_ckpt, infer_scenes);
    if (ev->parsed()) return cmd_eval(eval_o, eval_dets, eval_scenes, eval_preset, eval_iou, eval_bev);
    if (gc->parsed()) return cmd_gradcheck(grad_o, grad_instances);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
