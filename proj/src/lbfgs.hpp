#pragma once
// Limited-memory BFGS with a strong-Wolfe line search, for small parameter
// identification problems where each objective evaluation is expensive.

#include <functional>
#include <vector>

#include "common.hpp"

namespace heterodyn {

// Objective callback: returns the loss at x and writes its gradient.
using LbfgsObjective = std::function<Scalar(const VecX& x, VecX& grad)>;

struct LbfgsConfig {
  int memory = 10;        // curvature-pair history length
  int max_evals = 100;    // hard cap on objective evaluations
  Scalar grad_tol = 1e-6; // converged when ||grad||_inf <= grad_tol
};

struct LbfgsResult {
  VecX x;
  Scalar loss = 0;
  int evaluations = 0;
  bool converged = false; // gradient tolerance reached
  bool stalled = false;   // evaluation budget or line search exhausted
  std::vector<Scalar> loss_curve; // loss after each accepted step
};

LbfgsResult lbfgs_minimize(const LbfgsObjective& objective, const VecX& x0,
                           const LbfgsConfig& config = LbfgsConfig());

}  // namespace heterodyn
