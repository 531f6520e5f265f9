#pragma once

#include <functional>
#include <vector>

#include "vldet/graph.hpp"
#include "vldet/tensor.hpp"

namespace vldet {

struct GradCheckReport {
  double max_relative_error = 0.0;
  bool pass = false;
};

// Checks the analytic gradient of a scalar-valued function against central
// finite differences, element by element over every input tensor. The error
// for one element is |analytic - numeric| / max(|analytic|, |numeric|), with
// a plain absolute difference once both magnitudes fall below 1e-8. Throws
// on non-finite function output, naming the input being perturbed.
GradCheckReport grad_check(
    const std::function<Var(const std::vector<Var>&)>& fn,
    const std::vector<Tensor>& inputs, double eps = 1e-5, double tol = 1e-4);

}  // namespace vldet
