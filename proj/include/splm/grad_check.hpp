#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "splm/tensor.hpp"

namespace splm {

struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Compares reverse-mode gradients against central differences with step
// `eps`. Returns max over coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
// Coordinates whose true gradient is identically zero (attention key biases:
// softmax ignores a per-row shift) make this ratio meaningless; leave them out.
// Throws NumericFailure if f or a gradient is not finite.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                  const Tensor<double>& x, double eps = 1e-5);

struct GradCheckReport {
  // Per-coordinate ratio above, maximised over all coordinates.
  double max_rel = 0;
  // ||analytic - numeric|| / max(||analytic||, ||numeric||) per tensor,
  // maximised over tensors. Unlike max_rel it is not dominated by
  // coordinates whose true gradient is below finite-difference noise.
  double tensor_rel = 0;
};

GradCheckReport grad_check_report(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> params, double eps = 1e-5);

// Same check over tensors captured by `f` (e.g. model parameters). The
// tensors are perturbed in place and restored.
double grad_check_params(const std::function<Tensor<double>()>& f,
                         std::vector<Tensor<double>> params, double eps = 1e-5);

}  // namespace splm
