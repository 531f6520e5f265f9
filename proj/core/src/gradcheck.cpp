#include "vldet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vldet {

namespace {

double eval_scalar(const std::function<Var(const std::vector<Var>&)>& fn,
                   const std::vector<Tensor>& inputs, const std::string& at) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(make_constant(t));
  const Var out = fn(leaves);
  if (out->value.size() != 1) {
    throw std::invalid_argument("grad_check: fn must return a scalar, got " +
                                out->value.shape_str());
  }
  const double v = out->value[0];
  if (!std::isfinite(v)) {
    throw std::runtime_error("grad_check: non-finite output " + at);
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(
    const std::function<Var(const std::vector<Var>&)>& fn,
    const std::vector<Tensor>& inputs, double eps, double tol) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps " + std::to_string(eps) +
                                " outside [1e-7, 1e-3]");
  }
  if (inputs.empty()) {
    throw std::invalid_argument("grad_check: no inputs");
  }

  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(make_leaf(t, true));
  const Var out = fn(leaves);
  if (out->value.size() != 1) {
    throw std::invalid_argument("grad_check: fn must return a scalar, got " +
                                out->value.shape_str());
  }
  if (!std::isfinite(out->value[0])) {
    throw std::runtime_error("grad_check: non-finite output at base point");
  }
  backward(out);

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const std::string at = "perturbing input " + std::to_string(i) +
                             " element " + std::to_string(j);
      const double saved = probe[i][j];
      probe[i][j] = saved + eps;
      const double up = eval_scalar(fn, probe, at);
      probe[i][j] = saved - eps;
      const double down = eval_scalar(fn, probe, at);
      probe[i][j] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double analytic =
          leaves[i]->has_grad() ? leaves[i]->grad()[j] : 0.0;
      if (!std::isfinite(analytic)) {
        throw std::runtime_error("grad_check: non-finite gradient for input " +
                                 std::to_string(i) + " element " +
                                 std::to_string(j));
      }
      const double mag = std::max(std::abs(analytic), std::abs(numeric));
      const double err = mag < 1e-8 ? std::abs(analytic - numeric)
                                    : std::abs(analytic - numeric) / mag;
      report.max_relative_error = std::max(report.max_relative_error, err);
    }
  }
  report.pass = report.max_relative_error <= tol;
  return report;
}

}  // namespace vldet
