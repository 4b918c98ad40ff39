// Marginal log-likelihoods frozen from tests/oracles/frozen_values.py, which
// integrates each cluster numerically with scipy.

#include <doctest.h>

#include <cmath>

#include "mlgm/likelihood.hpp"
#include "support.hpp"

using namespace mlgm;
using mlgm::testing::frame_of;

namespace {

const char* kPoisson =
    "id,y,x\n1,0,-0.5\n1,2,0.3\n1,1,1.1\n2,3,0.0\n2,4,0.7\n3,0,-1.2\n3,1,0.4\n3,0,-0.3\n3,2,0.9\n";
const char* kBernoulli =
    "id,y,x\n1,1,0.2\n1,0,-0.8\n1,1,1.5\n2,0,-0.1\n2,0,0.6\n3,1,0.3\n3,1,-0.4\n3,0,1.0\n3,1,0.1\n";
const char* kWeibull = "id,t,d,x\n1,1.3,1,0.5\n1,0.4,0,-0.2\n2,2.2,1,1.0\n2,0.9,1,0.0\n2,3.1,0,-1.0\n3,0.7,1,0.3\n";

double aghq(const char* spec, const char* data, std::vector<double> theta, int points) {
  auto p = compile(parse_model_spec(spec), frame_of(data));
  IntegrationPlan plan = default_plan(*p, points);
  plan.levels[0].method = Method::aghq;
  return marginal_logl(*p, plan, theta);
}

}  // namespace

TEST_CASE("Poisson random intercept") {
  const double frozen = -12.550806732794255;
  std::vector<double> theta{0.6, 0.2, -0.4};
  CHECK(aghq("(y x M1[id], family(poisson))", kPoisson, theta, 30) == doctest::Approx(frozen).epsilon(1e-11));
  CHECK(aghq("(y x M1[id], family(poisson))", kPoisson, theta, 7) == doctest::Approx(frozen).epsilon(1e-5));
}

TEST_CASE("Bernoulli random intercept") {
  const double frozen = -6.720094452405917;
  std::vector<double> theta{-0.7, 0.3, -0.4};
  CHECK(aghq("(y x M1[id], family(bernoulli))", kBernoulli, theta, 30) == doctest::Approx(frozen).epsilon(1e-11));
}

TEST_CASE("Weibull frailty") {
  const double frozen = -6.688436116039631;
  std::vector<double> theta{0.4, -0.5, 0.2, -0.4};
  CHECK(aghq("(t x M1[id], family(weibull, failure(d)))", kWeibull, theta, 30) ==
        doctest::Approx(frozen).epsilon(1e-11));
}

TEST_CASE("Poisson with a t(4) intercept") {
  const double frozen = -12.770780159286229;
  std::vector<double> theta{0.6, 0.2, -0.4};
  const char* spec = "(y x M1[id], family(poisson)), redistribution(t) df(4)";
  CHECK(aghq(spec, kPoisson, theta, 40) == doctest::Approx(frozen).epsilon(1e-6));
  auto p = compile(parse_model_spec(spec), frame_of(kPoisson));
  IntegrationPlan q = default_plan(*p, 7, 20000);
  CHECK(marginal_logl(*p, q, theta) == doctest::Approx(frozen).epsilon(1e-3));
}
