#include <doctest.h>

#include <cmath>

#include "mlgm/optim.hpp"

using namespace mlgm;

TEST_CASE("finite-difference gradient and Hessian of a quadratic") {
  ScalarFn f = [](const Eigen::VectorXd& x) { return -(x[0] - 1) * (x[0] - 1) - 3 * x[1] * x[1] + x[0] * x[1]; };
  Eigen::VectorXd x(2);
  x << 0.5, -2.0;
  Eigen::VectorXd g = fd_gradient(f, x);
  CHECK(g[0] == doctest::Approx(-2 * (0.5 - 1) - 2.0).epsilon(1e-9));
  CHECK(g[1] == doctest::Approx(12.0 + 0.5).epsilon(1e-9));
  Eigen::MatrixXd H = fd_hessian(f, x);
  CHECK(H(0, 0) == doctest::Approx(-2).epsilon(1e-6));
  CHECK(H(1, 1) == doctest::Approx(-6).epsilon(1e-6));
  CHECK(H(0, 1) == doctest::Approx(1).epsilon(1e-6));
  CHECK(H(1, 0) == H(0, 1));
}

TEST_CASE("gradient shrinks the step when a probe is not finite") {
  ScalarFn f = [](const Eigen::VectorXd& x) { return x[0] < 1.0 + 1e-7 ? -x[0] * x[0] : NAN; };
  Eigen::VectorXd x(1);
  x << 1.0;
  CHECK(fd_gradient(f, x)[0] == doctest::Approx(-2.0).epsilon(1e-5));
}

TEST_CASE("fixed parameters get zero gradient and stay put") {
  ScalarFn f = [](const Eigen::VectorXd& x) { return -(x[0] - 2) * (x[0] - 2) - (x[1] - 3) * (x[1] - 3); };
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
  CHECK(fd_gradient(f, x0, {true, false})[1] == 0.0);
  MaximizeOptions o;
  o.free = {true, false};
  OptimResult r = maximize({f, {}}, x0, o);
  CHECK(r.converged);
  CHECK(r.theta[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(r.theta[1] == 0.0);
  CHECK(r.covariance(1, 1) == 0.0);
  CHECK(r.covariance(0, 0) == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("Newton ascent on a non-quadratic concave function") {
  // Poisson log-likelihood in log-mean with sum y = 17 over n = 5.
  ScalarFn f = [](const Eigen::VectorXd& x) { return 17 * x[0] - 5 * std::exp(x[0]) - 0.5 * (x[1] + 1) * (x[1] + 1); };
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
  OptimResult r = maximize({f, {}}, x0);
  CHECK(r.converged);
  CHECK(r.verified);
  CHECK(r.message == "converged");
  CHECK(r.theta[0] == doctest::Approx(std::log(17.0 / 5)).epsilon(1e-7));
  CHECK(r.theta[1] == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(r.gradient_max < 1e-5);
  CHECK(r.history.size() >= 2);
  CHECK(r.history.front().iteration == 0);
}

TEST_CASE("an indefinite start is handled by the ridge") {
  // Concave far from the start only: f = -x^4 + x^2 starting at 0.1 (convex region).
  ScalarFn f = [](const Eigen::VectorXd& x) { return -std::pow(x[0], 4) + x[0] * x[0]; };
  Eigen::VectorXd x0(1);
  x0 << 0.1;
  OptimResult r = maximize({f, {}}, x0);
  CHECK(r.converged);
  CHECK(std::abs(r.theta[0]) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
  bool ridged = false;
  for (const auto& h : r.history) ridged = ridged || h.ridge > 0;
  CHECK(ridged);
}

TEST_CASE("floored parameters stop at the floor and are not verified") {
  // Increasing in x[0] without bound: the floor does not apply upwards, so
  // use a decreasing function.
  ScalarFn f = [](const Eigen::VectorXd& x) { return -std::exp(x[0]) - x[1] * x[1]; };
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
  MaximizeOptions o;
  o.floored = {0};
  o.max_iter = 60;
  OptimResult r = maximize({f, {}}, x0, o);
  CHECK(r.theta[0] >= -10.0);
  CHECK_FALSE(r.converged);
}

TEST_CASE("non-finite start is an error") {
  ScalarFn f = [](const Eigen::VectorXd&) { return NAN; };
  CHECK_THROWS_AS(maximize({f, {}}, Eigen::VectorXd::Zero(1)), OptimError);
  ScalarFn g = [](const Eigen::VectorXd& x) { return -x.squaredNorm(); };
  MaximizeOptions o;
  o.free = {true};
  CHECK_THROWS_AS(maximize({g, {}}, Eigen::VectorXd::Zero(2), o), OptimError);
}
