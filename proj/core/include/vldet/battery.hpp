#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vldet {

struct BatteryEntry {
  std::string name;
  double max_relative_error = 0.0;
  bool pass = false;
};

// Gradient checks for every loss term and every differentiable module, each
// instantiated with n_seeds random draws. An entry passes when the worst
// relative error across all seeds stays within tol.
std::vector<BatteryEntry> run_gradient_battery(double tol = 1e-4,
                                               double eps = 1e-5,
                                               std::size_t n_seeds = 5);

}  // namespace vldet
