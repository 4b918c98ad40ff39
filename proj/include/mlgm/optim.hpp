#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlgm {

class OptimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

struct Objective {
  /// Objective used for derivatives and line search. Non-finite values are
  /// rejected steps.
  ScalarFn value;
  /// Called once per iteration at the accepted point; may rebuild internal
  /// state (such as quadrature locations) and returns the objective there.
  /// Defaults to `value`.
  ScalarFn refresh;
};

struct MaximizeOptions {
  int max_iter = 300;
  double rel_tol = 1e-7;
  double grad_tol = 1e-5;
  int max_halvings = 16;
  std::vector<bool> free;              // empty: every parameter is free
  std::vector<std::size_t> floored;    // parameters kept >= floor
  double floor = -10.0;
  std::ostream* log = nullptr;         // iteration log stream
};

struct IterationRecord {
  int iteration = 0;
  double logl = 0;
  double gradient_max = 0;
  int halvings = 0;
  double ridge = 0;  // tau added to the Hessian
};

struct OptimResult {
  Eigen::VectorXd theta;
  double logl = 0;
  Eigen::MatrixXd hessian;     // full size; rows/cols of fixed parameters are zero
  Eigen::MatrixXd covariance;  // inverse observed information on the free block, zero elsewhere
  int iterations = 0;
  bool converged = false;
  bool verified = false;       // final Hessian negative definite
  double gradient_max = 0;     // max |g_i| max(|theta_i|, 1) over free parameters
  std::string message;
  std::vector<IterationRecord> history;
};

/// Central differences with h_i = cbrt(eps) max(|theta_i|, 1) * step_scale.
/// Non-finite probes halve the step up to 8 times. Only `free` entries are
/// differentiated; others are 0.
Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& theta, const std::vector<bool>& free = {},
                            double step_scale = 1.0);

/// Second central differences with h_i = eps^(1/4) max(|theta_i|, 1). `f0`
/// is f(theta) when already known.
Eigen::MatrixXd fd_hessian(const ScalarFn& f, const Eigen::VectorXd& theta, const std::vector<bool>& free = {},
                           double f0 = std::numeric_limits<double>::quiet_NaN());

/// Newton-Raphson with step halving and ridge regularisation.
OptimResult maximize(const Objective& objective, const Eigen::VectorXd& theta0, const MaximizeOptions& options = {});

}  // namespace mlgm
