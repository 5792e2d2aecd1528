#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "decorfuse/config.hpp"
#include "decorfuse/decoration.hpp"
#include "decorfuse/error.hpp"
#include "decorfuse/eval_metrics.hpp"
#include "decorfuse/gradcheck.hpp"
#include "decorfuse/io.hpp"
#include "decorfuse/model.hpp"
#include "decorfuse/train.hpp"

namespace py = pybind11;
using namespace decorfuse;

namespace {

py::array_t<double> grid_to_array(const Grid2D& g) {
  py::array_t<double> a({g.height, g.width, g.channels});
  std::copy(g.data.begin(), g.data.end(), a.mutable_data());
  return a;
}

Grid2D array_to_grid(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw Error(ErrorKind::BadDims, "expected an (H, W, C) array");
  Grid2D g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), g.data.begin());
  return g;
}

py::array_t<double> points_to_array(const std::vector<LidarPoint>& pts) {
  py::array_t<double> a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{4}});
  double* d = a.mutable_data();
  for (const auto& p : pts) {
    *d++ = p.x;
    *d++ = p.y;
    *d++ = p.z;
    *d++ = p.r;
  }
  return a;
}

std::vector<LidarPoint> array_to_points(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 4) throw Error(ErrorKind::BadDims, "expected an (N, 4) array");
  std::vector<LidarPoint> pts(static_cast<std::size_t>(a.shape(0)));
  const double* d = a.data();
  for (auto& p : pts) {
    p = {d[0], d[1], d[2], d[3]};
    d += 4;
  }
  return pts;
}

py::dict loss_dict(const LossReport& r) {
  py::dict d;
  d["l_heatmap"] = r.l_heatmap;
  d["l_query"] = r.l_query;
  d["l_cls"] = r.l_cls;
  d["l_reg"] = r.l_reg;
  d["w"] = r.w;
  d["total"] = r.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Lidar-camera fusion detector core";

  py::register_exception<Error>(m, "DecorfuseError", PyExc_RuntimeError);

  py::class_<Config>(m, "Config")
      .def(py::init<>())
      .def_static("from_json", [](const std::string& s) { return config_from_json(s); })
      .def("to_json", [](const Config& c) { return config_to_json(c); })
      .def("hash", [](const Config& c) { return config_hash(c); })
      .def("validate", &Config::validate)
      .def("set_grid", &Config::set_grid)
      .def("apply_ablation", [](Config& c, const std::string& a) { c.apply_ablation(a); })
      .def_readwrite("seed", &Config::seed)
      .def_readwrite("epochs", &Config::epochs)
      .def_readwrite("lr_max", &Config::lr_max)
      .def_readwrite("fade_epochs", &Config::fade_epochs)
      .def_readwrite("loss_weight", &Config::loss_weight)
      .def_readwrite("num_classes", &Config::num_classes)
      .def_readwrite("queries_per_class", &Config::queries_per_class)
      .def_readwrite("nms_iou", &Config::nms_iou)
      .def_readonly("grid_name", &Config::grid_name)
      .def_property_readonly("ablation", [](const Config& c) {
        py::dict d;
        d["decoration"] = c.ablation.decoration;
        d["e2e"] = c.ablation.e2e;
        d["two_sparse_conv"] = c.ablation.two_sparse_conv;
        d["heatmap_init"] = c.ablation.heatmap_init;
        d["category_embedding"] = c.ablation.category_embedding;
        return d;
      });

  py::class_<Box3D>(m, "Box3D")
      .def(py::init<>())
      .def(py::init([](double cx, double cy, double cz, double l, double w, double h, double yaw) {
             return Box3D{cx, cy, cz, l, w, h, yaw};
           }),
           py::arg("cx"), py::arg("cy"), py::arg("cz"), py::arg("l"), py::arg("w"), py::arg("h"), py::arg("yaw"))
      .def_readwrite("cx", &Box3D::cx)
      .def_readwrite("cy", &Box3D::cy)
      .def_readwrite("cz", &Box3D::cz)
      .def_readwrite("l", &Box3D::l)
      .def_readwrite("w", &Box3D::w)
      .def_readwrite("h", &Box3D::h)
      .def_readwrite("yaw", &Box3D::yaw)
      .def("__eq__", [](const Box3D& a, const Box3D& b) { return a == b; })
      .def("__repr__", [](const Box3D& b) {
        return "Box3D(" + std::to_string(b.cx) + ", " + std::to_string(b.cy) + ", " + std::to_string(b.cz) + ", " +
               std::to_string(b.l) + ", " + std::to_string(b.w) + ", " + std::to_string(b.h) + ", " +
               std::to_string(b.yaw) + ")";
      });

  py::class_<LabeledBox>(m, "LabeledBox")
      .def(py::init([](const Box3D& b, int c) { return LabeledBox{b, c}; }), py::arg("box"), py::arg("class_id"))
      .def_readwrite("box", &LabeledBox::box)
      .def_readwrite("class_id", &LabeledBox::class_id);

  py::class_<Detection>(m, "Detection")
      .def(py::init([](int c, double s, const Box3D& b) { return Detection{c, s, b}; }), py::arg("class_id"),
           py::arg("score"), py::arg("box"))
      .def_readwrite("class_id", &Detection::class_id)
      .def_readwrite("score", &Detection::score)
      .def_readwrite("box", &Detection::box);

  py::class_<SyntheticScene>(m, "Scene")
      .def_property_readonly("points", [](const SyntheticScene& s) { return points_to_array(s.points); })
      .def_property_readonly("image", [](const SyntheticScene& s) { return grid_to_array(s.image); })
      .def_property_readonly("calib", [](const SyntheticScene& s) { return serialize_kitti_calib(s.rig); })
      .def_readonly("gt", &SyntheticScene::gt)
      .def("__eq__", [](const SyntheticScene& a, const SyntheticScene& b) { return a == b; });

  m.def("generate_scenes", &generate_scenes, py::arg("config"), py::arg("count"));
  m.def("generate_scene", &generate_scene, py::arg("seed"), py::arg("config"));
  m.def("relabel_scene",
        [](const SyntheticScene& s, const std::vector<int>& classes, const Config& c) {
          return relabel_scene(s, classes, c);
        },
        py::arg("scene"), py::arg("classes"), py::arg("config"));
  m.def("write_scene_dir", &write_scene_dir, py::arg("path"), py::arg("scene"));
  m.def("read_scene_dir", &read_scene_dir, py::arg("path"));

  m.def(
      "project",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts, const std::string& calib) {
        const CalibRig rig = parse_kitti_calib(calib);
        const auto p = array_to_points(pts);
        py::array_t<double> out({static_cast<py::ssize_t>(p.size()), py::ssize_t{3}});
        double* d = out.mutable_data();
        for (const auto& q : p) {
          const auto px = project(q, rig);
          const double nan = std::numeric_limits<double>::quiet_NaN();
          *d++ = px ? px->u : nan;
          *d++ = px ? px->v : nan;
          *d++ = px ? px->depth : nan;
        }
        return out;
      },
      py::arg("points"), py::arg("calib"), "(N, 4) lidar points -> (N, 3) u, v, depth; NaN when not projectable");

  m.def(
      "decorate",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& fmap, const std::string& calib,
         int image_height, int image_width) {
        const auto cloud =
            decorate(array_to_points(pts), array_to_grid(fmap), parse_kitti_calib(calib), image_height, image_width);
        py::array_t<double> out({static_cast<py::ssize_t>(cloud.size()), static_cast<py::ssize_t>(cloud.channels)});
        std::copy(cloud.features.begin(), cloud.features.end(), out.mutable_data());
        return out;
      },
      py::arg("points"), py::arg("feature_map"), py::arg("calib"), py::arg("image_height"), py::arg("image_width"),
      "Per-point image features sampled from a stride-4 feature map");

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("config", &Checkpoint::config)
      .def_readonly("epoch", &Checkpoint::epoch)
      .def("save", [](Checkpoint& c) { return py::bytes(save_checkpoint(c)); })
      .def_static("load", [](const py::bytes& b) { return load_checkpoint(std::string(b)); })
      .def("parameter_count", [](Checkpoint& c) { return c.model.parameter_count(); })
      .def(
          "image_features",
          [](const Checkpoint& c, const SyntheticScene& s) {
            return grid_to_array(backbone_forward(s.image, c.model.backbone));
          },
          py::arg("scene"));

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("checkpoint", &TrainResult::checkpoint)
      .def_property_readonly("log", [](const TrainResult& r) { return format_train_log(r.epochs); })
      .def_property_readonly("epochs",
                             [](const TrainResult& r) {
                               py::list out;
                               for (const auto& e : r.epochs) {
                                 py::dict d = loss_dict(e.mean);
                                 d["epoch"] = e.epoch;
                                 d["gt_paste"] = e.gt_paste;
                                 d["pasted"] = e.pasted;
                                 out.append(d);
                               }
                               return out;
                             })
      .def_property_readonly("step_losses", [](const TrainResult& r) {
        py::list out;
        for (const auto& s : r.steps) out.append(s.total);
        return out;
      });

  m.def(
      "train",
      [](const Config& c, const std::vector<SyntheticScene>& scenes) {
        py::gil_scoped_release release;
        return train(c, scenes);
      },
      py::arg("config"), py::arg("scenes"));
  m.def(
      "infer", [](const Checkpoint& c, const SyntheticScene& s) { return infer(c, s); }, py::arg("checkpoint"),
      py::arg("scene"));
  m.def(
      "infer_all",
      [](const Checkpoint& c, const std::vector<SyntheticScene>& scenes) {
        py::gil_scoped_release release;
        return infer_all(c, scenes);
      },
      py::arg("checkpoint"), py::arg("scenes"));
  m.def(
      "heatmap",
      [](const Checkpoint& c, const SyntheticScene& s) {
        return grid_to_array(model_forward(c.model, c.config, s, false, 0).heatmap);
      },
      py::arg("checkpoint"), py::arg("scene"));

  m.def("rotated_iou_3d", &rotated_iou_3d, py::arg("a"), py::arg("b"));
  m.def("bev_iou", &bev_iou, py::arg("a"), py::arg("b"));
  m.def(
      "ap_40",
      [](const std::vector<Detection>& d, const std::vector<LabeledBox>& g, double thr, int k) {
        return ap_40(d, g, thr, k);
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("iou_threshold"), py::arg("class_id"));
  m.def(
      "evaluate",
      [](const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<LabeledBox>>& gts,
         int num_classes, double iou_thr, bool bev) {
        if (dets.size() != gts.size()) throw Error(ErrorKind::LengthMismatch, "one detection list per frame");
        std::vector<FrameResult> frames;
        for (std::size_t i = 0; i < dets.size(); ++i) frames.push_back({dets[i], gts[i]});
        py::dict out;
        py::list aps;
        for (int k = 0; k < num_classes; ++k) aps.append(ap_40(frames, k, iou_thr, !bev));
        out["ap40"] = aps;
        out["classification_accuracy"] = classification_accuracy(frames, iou_thr);
        return out;
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("num_classes"), py::arg("iou_threshold"),
      py::arg("bev") = false);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int instances) {
        GradcheckOptions o;
        o.seed = seed;
        o.instances = instances;
        py::list out;
        for (const auto& r : run_gradcheck(o)) {
          py::dict d;
          d["op"] = r.op;
          d["instances"] = r.instances;
          d["max_error"] = r.max_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 1, py::arg("instances") = 20);
}
