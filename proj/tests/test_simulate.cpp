#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include <boost/math/distributions/fisher_f.hpp>

#include "mlgm/simulate.hpp"

using namespace mlgm;

namespace {

struct Anova {
  double between = 0, within = 0, f = 0, p = 0;
};

// One-way ANOVA of y by id with equal group sizes.
Anova anova(const DataFrame& d) {
  std::map<double, std::vector<double>> g;
  auto id = d.column("id");
  auto y = d.column("y");
  for (std::size_t i = 0; i < d.rows(); ++i) g[id[i]].push_back(y[i]);
  const double k = static_cast<double>(g.size()), n = static_cast<double>(g.begin()->second.size());
  double grand = 0, ssw = 0, ssb = 0;
  for (double v : y) grand += v;
  grand /= static_cast<double>(d.rows());
  for (const auto& [key, v] : g) {
    double m = 0;
    for (double x : v) m += x;
    m /= n;
    for (double x : v) ssw += (x - m) * (x - m);
    ssb += n * (m - grand) * (m - grand);
  }
  Anova a;
  double msb = ssb / (k - 1), msw = ssw / (k * (n - 1));
  a.within = msw;
  a.between = (msb - msw) / n;
  a.f = msb / msw;
  boost::math::fisher_f dist(k - 1, k * (n - 1));
  a.p = boost::math::cdf(boost::math::complement(dist, a.f));
  return a;
}

SimConfig intercept_model(double sd_u) {
  SimConfig c;
  c.spec = parse_model_spec("(y M1[id], family(gaussian))");
  c.theta = {{"_cons", 0.0}, {"lnsigma", 0.0}, {"lns_M1", std::log(sd_u)}};
  c.units = {200, 5};
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("generator parsing") {
  CovariateGen g = parse_generator("age=normal(50,10):id");
  CHECK(g.name == "age");
  CHECK(g.dist == CovariateGen::Dist::normal);
  CHECK(g.a == 50);
  CHECK(g.b == 10);
  CHECK(g.level == "id");
  CovariateGen b = parse_generator("trt=bernoulli(0.3)");
  CHECK(b.dist == CovariateGen::Dist::bernoulli);
  CHECK(b.a == 0.3);
  CHECK(b.level.empty());
  CHECK(parse_generator("u=uniform").b == 1.0);
  CHECK_THROWS_AS(parse_generator("x"), SimulationError);
  CHECK_THROWS_AS(parse_generator("x=gamma(1)"), SimulationError);
  CHECK_THROWS_AS(parse_generator("x=normal(a)"), SimulationError);
  CHECK_THROWS_AS(parse_generator("x=bernoulli(0.5,1)"), SimulationError);
}

TEST_CASE("random-intercept variance decomposition") {
  Anova a = anova(simulate(intercept_model(1.0)));
  CHECK(a.between / a.within == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("zero latent variance gives clusters indistinguishable from iid") {
  Anova a = anova(simulate(intercept_model(1e-12)));
  CHECK(a.p > 0.01);
}

TEST_CASE("Weibull times: y^gamma is exponential with rate lambda") {
  SimConfig c;
  c.spec = parse_model_spec("(t, family(weibull, failure(d)))");
  c.theta = {{"_cons", std::log(0.2)}, {"lngamma", std::log(1.3)}};
  c.units = {5000};
  c.seed = 3;
  DataFrame d = simulate(c);
  REQUIRE(d.rows() == 5000);
  double m = 0;
  for (double t : d.column("t")) m += std::pow(t, 1.3);
  m /= 5000;
  CHECK(m == doctest::Approx(5.0).epsilon(0.05));
  for (double e : d.column("d")) CHECK(e == 1.0);
}

TEST_CASE("administrative censoring at the horizon") {
  SimConfig c;
  c.spec = parse_model_spec("(t, family(exponential, failure(d)))");
  c.theta = {{"_cons", 0.0}};
  c.units = {2000};
  c.horizon = 1.0;
  DataFrame d = simulate(c);
  double events = 0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    CHECK(d.column("t")[i] <= 1.0);
    if (d.column("d")[i] == 0) CHECK(d.column("t")[i] == 1.0);
    events += d.column("d")[i];
  }
  CHECK(events / 2000 == doctest::Approx(1 - std::exp(-1.0)).epsilon(0.05));
}

TEST_CASE("time-dependent hazard is inverted numerically") {
  // h(t) = exp(-1 + 0.5 t): Gompertz with gamma 0.5, written with fp(1).
  SimConfig c;
  c.spec = parse_model_spec("(t fp(1), family(exponential, failure(d)) timevar(t))");
  c.theta = {{"fp(1)", 0.5}, {"_cons", -1.0}};
  c.units = {3000};
  c.seed = 9;
  DataFrame d = simulate(c);
  // H(T) is unit exponential.
  double m = 0;
  for (double t : d.column("t")) m += std::exp(-1.0) * (std::exp(0.5 * t) - 1) / 0.5;
  CHECK(m / 3000 == doctest::Approx(1.0).epsilon(0.06));
}

TEST_CASE("competing causes share the response column") {
  SimConfig c;
  c.spec = parse_model_spec("(t, family(exponential, failure(d1))) (t, family(exponential, failure(d2)))");
  c.theta = {{"_1:_cons", std::log(1.0)}, {"_2:_cons", std::log(3.0)}};
  c.units = {4000};
  DataFrame d = simulate(c);
  double n1 = 0, n2 = 0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    CHECK(d.column("d1")[i] + d.column("d2")[i] == 1.0);
    n1 += d.column("d1")[i];
    n2 += d.column("d2")[i];
  }
  CHECK(n2 / (n1 + n2) == doctest::Approx(0.75).epsilon(0.05));
}

TEST_CASE("joint data drop measurements after the event") {
  SimConfig c;
  c.spec = parse_model_spec(
      "(y fp(1) M1[id], family(gaussian) timevar(tm)) (st EV[y]@a, family(weibull, failure(d)) timevar(st))");
  c.theta = {{"_1:fp(1)", 0.1}, {"_1:_cons", 0.0}, {"_1:lnsigma", -1.0}, {"a", 0.5},
             {"_2:_cons", -1.5}, {"_2:lngamma", 0.0}, {"lns_M1", 0.0}};
  c.units = {100};
  c.times = {0, 1, 2, 3, 4};
  c.horizon = 4.5;
  DataFrame d = simulate(c);
  std::map<double, double> event;
  for (std::size_t i = 0; i < d.rows(); ++i)
    if (!is_missing(d.column("st")[i])) event[d.column("id")[i]] = d.column("st")[i];
  CHECK(event.size() == 100);
  std::size_t measurements = 0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double id = d.column("id")[i];
    if (is_missing(d.column("y")[i])) continue;
    ++measurements;
    CHECK(d.column("tm")[i] <= event[id]);
  }
  CHECK(measurements < 500);
  CHECK(measurements >= 100);
}

TEST_CASE("simulation is reproducible and seed dependent") {
  SimConfig c = intercept_model(1.0);
  auto text = [](const DataFrame& d) {
    std::ostringstream o;
    write_csv(o, d);
    return o.str();
  };
  CHECK(text(simulate(c)) == text(simulate(c)));
  SimConfig other = c;
  other.seed = 8;
  CHECK(text(simulate(c)) != text(simulate(other)));
}

TEST_CASE("configuration errors") {
  SimConfig c = intercept_model(1.0);
  c.theta.erase("lnsigma");
  CHECK_THROWS_WITH_AS(simulate(c), doctest::Contains("lnsigma"), SimulationError);
  SimConfig u = intercept_model(1.0);
  u.units = {1, 2, 3};
  CHECK_THROWS_AS(simulate(u), SimulationError);
  SimConfig g = intercept_model(1.0);
  g.covariates.push_back(parse_generator("x=normal:school"));
  CHECK_THROWS_AS(simulate(g), SimulationError);
  SimConfig rp;
  rp.spec = parse_model_spec("(t, family(rp, failure(d) df(3)))");
  rp.units = {10};
  CHECK_THROWS_AS(simulate(rp), SimulationError);
}
