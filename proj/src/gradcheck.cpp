#include "decorfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "decorfuse/decoration.hpp"
#include "decorfuse/detect_loss.hpp"
#include "decorfuse/image_backbone.hpp"
#include "decorfuse/query_fusion.hpp"
#include "decorfuse/sparse_conv.hpp"

namespace decorfuse {

double gradient_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / std::max(1e-8, scale);
}

std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void fill_uniform(std::vector<double>& v, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& x : v) x = rng.uniform(lo, hi);
}

// Values bounded away from zero, for inputs that feed a ReLU directly.
void fill_away_from_zero(std::vector<double>& v, Rng& rng) {
  for (double& x : v) {
    const double m = rng.uniform(0.05, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
}

bool near_kink(std::span<const double> pre, double margin = 1e-4) {
  return std::any_of(pre.begin(), pre.end(), [&](double x) { return std::abs(x) < margin; });
}

SparseTensor3D random_sparse(Rng& rng, int channels) {
  SparseTensor3D t;
  t.dims = {3 + static_cast<int>(rng.below(3)), 3 + static_cast<int>(rng.below(3)),
            2 + static_cast<int>(rng.below(3))};
  t.channels = channels;
  for (int x = 0; x < t.dims[0]; ++x)
    for (int y = 0; y < t.dims[1]; ++y)
      for (int z = 0; z < t.dims[2]; ++z)
        if (rng.uniform() < 0.35) t.coords.push_back({x, y, z});
  if (t.coords.empty()) t.coords.push_back({0, 0, 0});
  t.features.resize(t.coords.size() * channels);
  fill_uniform(t.features, rng);
  return t;
}

// Accumulates the worst error of one instance over all checked tensors.
struct Check {
  double worst = 0.0;
  void add(std::span<const double> analytic, std::span<const double> numeric) {
    worst = std::max(worst, gradient_error(analytic, numeric));
  }
};

using Instance = std::function<double(Rng&, double)>;

double check_conv2d(Rng& rng, double h) {
  const int k = rng.uniform() < 0.5 ? 3 : 1;
  const int stride = 1 + static_cast<int>(rng.below(2));
  Conv2DLayer layer = Conv2DLayer::init(k, 2 + static_cast<int>(rng.below(2)), 3, stride, rng);
  fill_uniform(layer.bias, rng);
  Grid2D in(4 + static_cast<int>(rng.below(3)), 4 + static_cast<int>(rng.below(3)), layer.in_channels);
  fill_uniform(in.data, rng);
  const Grid2D out0 = conv2d_forward(in, layer);
  Grid2D cot(out0.height, out0.width, out0.channels);
  fill_uniform(cot.data, rng);
  auto f = [&] { return dot(conv2d_forward(in, layer).data, cot.data); };
  const auto g = conv2d_backward(in, layer, cot);
  Check c;
  c.add(g.input.data, numeric_gradient(in.data, f, h));
  c.add(g.weight, numeric_gradient(layer.weight, f, h));
  c.add(g.bias, numeric_gradient(layer.bias, f, h));
  return c.worst;
}

double check_relu(Rng& rng, double h) {
  Grid2D x(3, 4, 2);
  fill_away_from_zero(x.data, rng);
  Grid2D cot(3, 4, 2);
  fill_uniform(cot.data, rng);
  auto f = [&] { return dot(relu(x).data, cot.data); };
  Check c;
  c.add(relu_backward(x, cot).data, numeric_gradient(x.data, f, h));
  return c.worst;
}

double check_sparse(Rng& rng, double h, SparseConvMode mode) {
  SparseTensor3D in = random_sparse(rng, 2 + static_cast<int>(rng.below(2)));
  SparseConvLayer layer = SparseConvLayer::init(mode, in.channels, 2 + static_cast<int>(rng.below(2)), rng);
  fill_uniform(layer.bias, rng);
  const Rulebook rules = build_rulebook(in, mode);
  SparseTensor3D cot = sparse_conv_forward(in, layer, rules);
  fill_uniform(cot.features, rng);
  auto f = [&] { return dot(sparse_conv_forward(in, layer, rules).features, cot.features); };
  const auto g = sparse_conv_backward(in, layer, rules, cot);
  Check c;
  c.add(g.input, numeric_gradient(in.features, f, h));
  c.add(g.weight, numeric_gradient(layer.weight, f, h));
  c.add(g.bias, numeric_gradient(layer.bias, f, h));
  return c.worst;
}

double check_bilinear(Rng& rng, double h) {
  Grid2D fmap(4, 5, 3);
  fill_uniform(fmap.data, rng);
  // A few points, some outside the map to exercise clamping.
  std::vector<std::array<double, 2>> sites;
  for (int p = 0; p < 4; ++p) sites.push_back({rng.uniform(-0.5, 4.5), rng.uniform(-0.5, 3.5)});
  std::vector<double> cot(sites.size() * 3);
  fill_uniform(cot, rng);
  auto f = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < sites.size(); ++p)
      s += dot(bilinear_sample(fmap, sites[p][0], sites[p][1]), std::span(cot).subspan(p * 3, 3));
    return s;
  };
  Grid2D adj(4, 5, 3);
  for (std::size_t p = 0; p < sites.size(); ++p)
    bilinear_sample_adjoint(adj, sites[p][0], sites[p][1], std::span(cot).subspan(p * 3, 3));
  Check c;
  c.add(adj.data, numeric_gradient(fmap.data, f, h));
  return c.worst;
}

double check_attention(Rng& rng, double h) {
  const int nq = 2 + static_cast<int>(rng.below(3));
  const int qdim = 5, cam_ch = 4;
  AttentionParams p = AttentionParams::init(qdim, cam_ch, 3, 4, 0.3, rng);
  fill_uniform(p.fc.bias, rng);
  Matrix query(nq, qdim);
  fill_uniform(query.data, rng);
  Grid2D cam(3, 3, cam_ch);
  fill_uniform(cam.data, rng);
  const bool training = rng.uniform() < 0.5;
  const std::uint64_t seed = rng.next_u64();
  Matrix cot(nq, p.d_model);
  fill_uniform(cot.data, rng);
  auto f = [&] { return dot(cross_attention(query, cam, p, training, seed).data, cot.data); };
  AttentionTape tape;
  cross_attention(query, cam, p, training, seed, &tape);
  AttentionParams grads = p.zeros_like();
  const auto g = cross_attention_backward(tape, cam, p, cot, grads);
  Check c;
  c.add(g.query_in.data, numeric_gradient(query.data, f, h));
  c.add(g.camera_bev.data, numeric_gradient(cam.data, f, h));
  c.add(grads.w_q.data, numeric_gradient(p.w_q.data, f, h));
  c.add(grads.w_k.data, numeric_gradient(p.w_k.data, f, h));
  c.add(grads.w_v.data, numeric_gradient(p.w_v.data, f, h));
  return c.worst;
}

double check_heatmap_head(Rng& rng, double h) {
  HeatmapHead head;
  Grid2D bev;
  HeatmapTape tape;
  do {
    head = HeatmapHead::init(4, 3, 2, rng);
    fill_uniform(head.conv1.bias, rng, -0.2, 0.2);
    bev = Grid2D(4, 4, 4);
    fill_uniform(bev.data, rng);
    heatmap_head_forward(bev, head, &tape);
  } while (near_kink(tape.pre1.data));
  Grid2D cot(4, 4, 2);
  fill_uniform(cot.data, rng);
  auto f = [&] { return dot(heatmap_head_forward(bev, head).data, cot.data); };
  HeatmapHead grads = head.zeros_like();
  const Grid2D d_bev = heatmap_head_backward(tape, head, cot, grads);
  Check c;
  c.add(d_bev.data, numeric_gradient(bev.data, f, h));
  c.add(grads.conv1.weight, numeric_gradient(head.conv1.weight, f, h));
  c.add(grads.conv1.bias, numeric_gradient(head.conv1.bias, f, h));
  c.add(grads.conv2.weight, numeric_gradient(head.conv2.weight, f, h));
  c.add(grads.conv2.bias, numeric_gradient(head.conv2.bias, f, h));
  return c.worst;
}

double check_heatmap_focal(Rng& rng, double h) {
  Grid2D pred(3, 4, 2), target(3, 4, 2);
  fill_uniform(pred.data, rng, 0.05, 0.95);
  for (double& t : target.data) t = rng.uniform() < 0.2 ? 1.0 : rng.uniform(0.0, 0.9);
  auto f = [&] { return heatmap_focal_loss(pred, target); };
  Grid2D grad;
  heatmap_focal_loss(pred, target, &grad);
  Check c;
  c.add(grad.data, numeric_gradient(pred.data, f, h));
  return c.worst;
}

double check_sigmoid_focal(Rng& rng, double h) {
  Matrix logits(4, 3), targets(4, 3);
  fill_uniform(logits.data, rng, -3.0, 3.0);
  for (double& t : targets.data) t = rng.uniform() < 0.3 ? 1.0 : 0.0;
  const double norm = 1.0 + static_cast<double>(rng.below(3));
  auto f = [&] { return sigmoid_focal_loss(logits, targets, norm); };
  Matrix grad;
  sigmoid_focal_loss(logits, targets, norm, &grad);
  Check c;
  c.add(grad.data, numeric_gradient(logits.data, f, h));
  return c.worst;
}

double check_smooth_l1(Rng& rng, double h) {
  std::vector<double> pred(8), target(8);
  fill_uniform(target, rng, -2.0, 2.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d;
    do d = rng.uniform(-2.5, 2.5);
    while (std::abs(std::abs(d) - 1.0) < 1e-3);
    pred[i] = target[i] + d;
  }
  auto f = [&] { return smooth_l1(pred, target); };
  std::vector<double> grad;
  smooth_l1(pred, target, &grad);
  Check c;
  c.add(grad, numeric_gradient(pred, f, h));
  return c.worst;
}

double check_dense(Rng& rng, double h) {
  Dense layer = Dense::init(4, 3, rng);
  fill_uniform(layer.bias, rng);
  Matrix x(3, 4);
  fill_uniform(x.data, rng);
  Matrix cot(3, 3);
  fill_uniform(cot.data, rng);
  auto f = [&] { return dot(dense_forward(x, layer).data, cot.data); };
  Dense grads = layer.zeros_like();
  const Matrix dx = dense_backward(x, layer, cot, grads);
  Check c;
  c.add(dx.data, numeric_gradient(x.data, f, h));
  c.add(grads.weight, numeric_gradient(layer.weight, f, h));
  c.add(grads.bias, numeric_gradient(layer.bias, f, h));
  return c.worst;
}

double check_detection_head(Rng& rng, double h) {
  DetectionHead head;
  Matrix x(3, 5);
  DetectionHeadTape tape;
  do {
    head = DetectionHead::init(5, 4, 2, rng);
    fill_uniform(head.hidden.bias, rng, -0.2, 0.2);
    fill_uniform(x.data, rng);
    detection_head_forward(x, head, &tape);
  } while (near_kink(tape.pre.data));
  Matrix cot(3, head.out.out_features);
  fill_uniform(cot.data, rng);
  auto f = [&] { return dot(detection_head_forward(x, head).data, cot.data); };
  DetectionHead grads = head.zeros_like();
  const Matrix dx = detection_head_backward(tape, head, cot, grads);
  Check c;
  c.add(dx.data, numeric_gradient(x.data, f, h));
  c.add(grads.hidden.weight, numeric_gradient(head.hidden.weight, f, h));
  c.add(grads.out.weight, numeric_gradient(head.out.weight, f, h));
  c.add(grads.out.bias, numeric_gradient(head.out.bias, f, h));
  return c.worst;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
  const std::vector<std::pair<std::string, Instance>> suites = {
      {"conv2d", check_conv2d},
      {"relu", check_relu},
      {"sparse_conv_subm", [](Rng& r, double h) { return check_sparse(r, h, SparseConvMode::submanifold); }},
      {"sparse_conv_strided", [](Rng& r, double h) { return check_sparse(r, h, SparseConvMode::strided); }},
      {"bilinear_adjoint", check_bilinear},
      {"attention", check_attention},
      {"heatmap_head", check_heatmap_head},
      {"heatmap_focal", check_heatmap_focal},
      {"sigmoid_focal", check_sigmoid_focal},
      {"smooth_l1", check_smooth_l1},
      {"dense", check_dense},
      {"detection_head", check_detection_head},
  };
  std::vector<GradcheckResult> results;
  for (std::size_t s = 0; s < suites.size(); ++s) {
    Rng rng(hash_combine(options.seed, s));
    GradcheckResult r;
    r.op = suites[s].first;
    for (int i = 0; i < options.instances; ++i) {
      r.max_error = std::max(r.max_error, suites[s].second(rng, options.h));
      ++r.instances;
    }
    r.passed = r.max_error < options.tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace decorfuse
