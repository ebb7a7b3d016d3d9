#include "lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace heterodyn {

namespace {

struct CurvaturePair {
  VecX s, y;
  Scalar rho;
};

// Two-loop recursion: r = H_k * g using the stored curvature pairs, with the
// standard gamma = s.y / y.y initial scaling.
VecX two_loop(const std::deque<CurvaturePair>& pairs, const VecX& grad) {
  VecX q = grad;
  std::vector<Scalar> alpha(pairs.size());
  for (int i = static_cast<int>(pairs.size()) - 1; i >= 0; --i) {
    alpha[i] = pairs[i].rho * pairs[i].s.dot(q);
    q -= alpha[i] * pairs[i].y;
  }
  if (!pairs.empty()) {
    const CurvaturePair& last = pairs.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Scalar beta = pairs[i].rho * pairs[i].y.dot(q);
    q += (alpha[i] - beta) * pairs[i].s;
  }
  return q;
}

}  // namespace

LbfgsResult lbfgs_minimize(const LbfgsObjective& objective, const VecX& x0,
                           const LbfgsConfig& config) {
  constexpr Scalar kC1 = 1e-4; // sufficient-decrease constant
  constexpr Scalar kC2 = 0.9;  // curvature constant

  LbfgsResult result;
  result.x = x0;

  VecX grad(x0.size());
  auto eval = [&](const VecX& x, VecX& g) {
    ++result.evaluations;
    return objective(x, g);
  };

  Scalar loss = eval(result.x, grad);
  result.loss = loss;
  result.loss_curve.push_back(loss);
  if (!std::isfinite(loss)) {
    result.stalled = true;
    return result;
  }

  std::deque<CurvaturePair> pairs;
  while (true) {
    if (grad.lpNorm<Eigen::Infinity>() <= config.grad_tol) {
      result.converged = true;
      break;
    }
    if (result.evaluations >= config.max_evals) {
      result.stalled = true;
      break;
    }

    VecX direction = -two_loop(pairs, grad);
    Scalar dir_slope = grad.dot(direction);
    if (!(dir_slope < 0)) {
      // History produced an ascent direction; fall back to steepest descent.
      pairs.clear();
      direction = -grad;
      dir_slope = grad.dot(direction);
    }

    // Strong-Wolfe line search by bracketing + bisection.
    Scalar t = 1.0, t_lo = 0.0, t_hi = 0.0;
    bool bracketed = false;
    bool accepted = false;
    VecX x_try, g_try(grad.size());
    Scalar f_try = loss;
    for (int ls = 0; ls < 30 && result.evaluations < config.max_evals; ++ls) {
      x_try = result.x + t * direction;
      f_try = eval(x_try, g_try);
      const bool armijo =
          std::isfinite(f_try) && f_try <= loss + kC1 * t * dir_slope;
      if (!armijo) {
        t_hi = t;
        bracketed = true;
      } else if (std::abs(g_try.dot(direction)) <= -kC2 * dir_slope) {
        accepted = true;
        break;
      } else if (g_try.dot(direction) >= 0) {
        // Overshot the minimizer along the ray: bracket from above.
        t_hi = t;
        t_lo = std::max(t_lo, Scalar(0));
        bracketed = true;
      } else {
        t_lo = t;
        if (!bracketed) {
          t *= 2;
          continue;
        }
      }
      if (bracketed && t_hi > t_lo) {
        t = (t_lo + t_hi) / 2;
        if (t_hi - t_lo < 1e-12) {
          // Interval collapsed; accept sufficient decrease if we have it.
          accepted = armijo && f_try < loss;
          break;
        }
      } else {
        t *= 2;
      }
    }
    if (!accepted && std::isfinite(f_try) && f_try < loss) {
      accepted = true; // plain decrease beats giving up
    }
    if (!accepted) {
      result.stalled = true;
      break;
    }

    const VecX s = x_try - result.x;
    const VecX y = g_try - grad;
    const Scalar sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      pairs.push_back({s, y, Scalar(1) / sy});
      if (static_cast<int>(pairs.size()) > config.memory) pairs.pop_front();
    }

    result.x = x_try;
    loss = f_try;
    grad = g_try;
    result.loss = loss;
    result.loss_curve.push_back(loss);
  }
  return result;
}

}  // namespace heterodyn
