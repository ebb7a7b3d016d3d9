#pragma once
// Shared scalar/vector types and the error taxonomy used across the solver.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace heterodyn {

using Scalar = double;
using VecX = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;

enum class ErrorCode : int {
  Ok = 0,
  Parse = 1,
  Validation = 2,
  DegenerateElement = 3,
  InvalidPoisson = 4,
  NonPositiveJacobian = 5,
  ProxDiverged = 6,
  SingularFilteredHessian = 7,
  NotPositiveDefinite = 8,
  SingularContactSystem = 9,
  AdjointDiverged = 10,
  LineSearchFailed = 11,
  Io = 12,
  InvalidArgument = 13,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

// Worker cap for element-parallel loops. Reads HETERODYN_THREADS once; a value
// of 1 (or an unset/garbage value on a single-core box) keeps loops serial.
int worker_count();

// Deterministic parallel-for: splits [0,n) into contiguous chunks, one thread
// per chunk. Results must be written to disjoint per-index slots by `fn`; all
// reductions happen serially afterwards, so numeric results are independent of
// the worker count.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace heterodyn
