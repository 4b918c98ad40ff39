#include <doctest.h>

#include <cmath>

#include <boost/math/special_functions/factorials.hpp>

#include "mlgm/integrate.hpp"

using namespace mlgm;

namespace {

double normal_moment(int k) {
  if (k % 2) return 0.0;
  if (k == 0) return 1.0;
  return boost::math::double_factorial<double>(static_cast<unsigned>(k - 1));
}

}  // namespace

TEST_CASE("Gauss-Hermite rule is normalised to the standard normal") {
  for (int q : {1, 2, 5, 7, 15, 30}) {
    GhRule r = gh_rule(q);
    REQUIRE(r.size() == static_cast<std::size_t>(q));
    double s0 = 0, s2 = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      s0 += r.weights[i];
      s2 += r.weights[i] * r.nodes[i] * r.nodes[i];
    }
    CHECK(s0 == doctest::Approx(1.0).epsilon(1e-14));
    if (q > 1) CHECK(s2 == doctest::Approx(1.0).epsilon(1e-13));
  }
  CHECK_THROWS(gh_rule(0));
}

TEST_CASE("Gauss-Hermite rule integrates low-degree monomials") {
  GhRule r = gh_rule(6);
  for (int k = 0; k <= 11; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r.weights[i] * std::pow(r.nodes[i], k);
    CHECK(s == doctest::Approx(normal_moment(k)).epsilon(1e-12).scale(1));
  }
}

TEST_CASE("Gauss-Legendre rule integrates polynomials on an interval") {
  GlRule r = gl_rule(30);
  double v = gl_integrate(r, 0.0, 2.0, [](double x) { return std::pow(x, 59); });
  CHECK(v == doctest::Approx(std::pow(2.0, 60) / 60).epsilon(1e-13));
  CHECK(gl_integrate(r, -1.0, 3.0, [](double) { return 1.0; }) == doctest::Approx(4.0));
}

TEST_CASE("substituted rule handles power singularities at the origin") {
  GlRule r = gl_rule(30);
  CHECK(gl_integrate_origin(r, 1.0, [](double t) { return 1 / std::sqrt(t); }) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(gl_integrate_origin(r, 4.0, [](double t) { return 0.7 * std::pow(t, -0.3); }) ==
        doctest::Approx(std::pow(4.0, 0.7)).epsilon(1e-9));
  CHECK(gl_integrate_origin(r, 2.0, [](double t) { return std::exp(t); }) == doctest::Approx(std::expm1(2.0)).epsilon(1e-12));
}

TEST_CASE("Halton points are radical inverses") {
  CHECK(radical_inverse(1, 2) == 0.5);
  CHECK(radical_inverse(2, 2) == 0.25);
  CHECK(radical_inverse(3, 2) == 0.75);
  CHECK(radical_inverse(1, 3) == doctest::Approx(1.0 / 3));
  CHECK(radical_inverse(5, 3) == doctest::Approx(2.0 / 3 + 1.0 / 9));
  HaltonSet h = halton(4, 2, 0);
  CHECK(h.values(0, 0) == 0.5);
  CHECK(h.values(0, 1) == doctest::Approx(1.0 / 3));
  HaltonSet skipped = halton(2, 1, 2);
  CHECK(skipped.values(0, 0) == 0.75);
  HaltonSet offset = halton(1, 1, 0, 1);
  CHECK(offset.values(0, 0) == doctest::Approx(1.0 / 3));
  CHECK(first_primes(5) == std::vector<unsigned>{2, 3, 5, 7, 11});
}

TEST_CASE("kernel log densities") {
  ReKernel n{KernelKind::normal, 0, Eigen::MatrixXd::Identity(1, 1) * 2.0};
  Eigen::VectorXd b(1);
  b << 1.0;
  CHECK(n.log_density(b) == doctest::Approx(-0.5 * std::log(2 * M_PI) - std::log(2.0) - 0.125));
  ReKernel t{KernelKind::t, 3, Eigen::MatrixXd::Identity(1, 1)};
  // Student t(3) density at 1: 2 / (pi sqrt(3) (1 + 1/3)^2).
  CHECK(t.log_density(b) == doctest::Approx(std::log(2 / (M_PI * std::sqrt(3.0) * 16.0 / 9.0))));
  CHECK(t.covariance()(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("adaptive quadrature is exact for a Gaussian integrand") {
  // log f(b) = normal log density of y = 1.3 given mean b, sd 0.5; kernel N(0, 0.8^2).
  ReKernel k{KernelKind::normal, 0, Eigen::MatrixXd::Identity(1, 1) * 0.8};
  const double y = 1.3, s = 0.5;
  LogIntegrand f = [&](const Eigen::VectorXd& b) {
    double z = (y - b[0]) / s;
    return -0.5 * std::log(2 * M_PI) - std::log(s) - 0.5 * z * z;
  };
  const double v = 0.64 + 0.25;
  const double exact = -0.5 * std::log(2 * M_PI * v) - 0.5 * y * y / v;
  GhRule r = gh_rule(3);
  AdaptState st = adapt_locations(f, k, r);
  Moments m;
  CHECK(log_integral_gh(f, k, r, st, &m) == doctest::Approx(exact).epsilon(1e-12));
  CHECK(st.shift[0] == doctest::Approx(0.64 / v * y).epsilon(1e-8));
  CHECK(m.cov(0, 0) == doctest::Approx(0.64 * 0.25 / v).epsilon(1e-8));
  CHECK_FALSE(st.fallback);
}

TEST_CASE("non-adaptive and Monte Carlo integrals of a constant") {
  ReKernel k{KernelKind::normal, 0, Eigen::MatrixXd::Identity(2, 2)};
  LogIntegrand f = [](const Eigen::VectorXd&) { return 0.25; };
  CHECK(log_integral_gh(f, k, gh_rule(4), prior_state(k)) == doctest::Approx(0.25));
  HaltonSet u = halton(100, 2, 15);
  CHECK(log_integral_mc(f, k, standard_draws(KernelKind::normal, 0, u)) == doctest::Approx(0.25));
}

TEST_CASE("t draws carry the chi-square column") {
  HaltonSet u = halton(5000, 2, 15, 0);
  Eigen::MatrixXd z = standard_draws(KernelKind::t, 5, u);
  CHECK(z.cols() == 1);
  double var = z.array().square().mean();
  CHECK(var == doctest::Approx(5.0 / 3.0).epsilon(0.1));
}

TEST_CASE("log_sum_exp is stable") {
  CHECK(log_sum_exp({1000.0, 1000.0}) == doctest::Approx(1000 + std::log(2.0)));
  CHECK(log_sum_exp({-1e308, 0.0}) == doctest::Approx(0.0));
  CHECK(std::isinf(log_sum_exp({-INFINITY, -INFINITY})));
  CHECK(product_size(7, 3) == 343);
}
