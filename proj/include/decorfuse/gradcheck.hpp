#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace decorfuse {

/// max |a - n| / max(1e-8, max |n|).
double gradient_error(std::span<const double> analytic, std::span<const double> numeric);

/// Central differences of f with respect to x; x is perturbed in place and restored.
std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f,
                                     double h = 1e-5);

struct GradcheckResult {
  std::string op;
  int instances = 0;
  double max_error = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  int instances = 20;
  double h = 1e-5;
  double tolerance = 1e-5;
};

/// One entry per differentiable op: conv2d, relu, sparse_conv_subm,
/// sparse_conv_strided, bilinear_adjoint, attention, heatmap_head,
/// heatmap_focal, sigmoid_focal, smooth_l1, dense, detection_head.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace decorfuse
