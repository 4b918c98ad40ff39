#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mlgm/basis.hpp"
#include "mlgm/families.hpp"
#include "mlgm/integrate.hpp"
#include "mlgm/likelihood.hpp"
#include "support.hpp"

using namespace mlgm;

namespace {

std::string permuted_csv(const DataFrame& d, std::mt19937_64& rng) {
  std::vector<std::size_t> order(d.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  DataFrame out(d.rows());
  for (const auto& name : d.names()) {
    std::vector<double> v(d.rows());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = d.column(name)[order[i]];
    out.set_column(name, v);
  }
  std::ostringstream o;
  write_csv(o, out);
  return o.str();
}

}  // namespace

TEST_CASE("adaptive quadrature is exact for any Gaussian integrand") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2, 2), s(0.2, 3);
  for (int rep = 0; rep < 50; ++rep) {
    const double y = u(rng), sd = s(rng), tau = s(rng);
    ReKernel k{KernelKind::normal, 0, Eigen::MatrixXd::Identity(1, 1) * tau};
    LogIntegrand f = [&](const Eigen::VectorXd& b) {
      double z = (y - b[0]) / sd;
      return -0.5 * std::log(2 * M_PI) - std::log(sd) - 0.5 * z * z;
    };
    const double v = tau * tau + sd * sd;
    const double exact = -0.5 * std::log(2 * M_PI * v) - 0.5 * y * y / v;
    GhRule r = gh_rule(1 + rep % 5);
    CHECK(log_integral_gh(f, k, r, adapt_locations(f, k, r)) == doctest::Approx(exact).epsilon(1e-10));
  }
}

TEST_CASE("restricted cubic splines are smooth at the knots and linear outside") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<double> knots(2 + rep % 5);
    for (auto& k : knots) k = u(rng);
    std::sort(knots.begin(), knots.end());
    RcsBasis b(knots);
    const double e = 1e-7;
    for (double k : knots) {
      auto lo = b.eval(k - e), hi = b.eval(k + e);
      auto dlo = b.deriv(k - e), dhi = b.deriv(k + e);
      for (std::size_t j = 0; j < b.size(); ++j) {
        CHECK(lo[j] == doctest::Approx(hi[j]).epsilon(1e-6).scale(1));
        CHECK(dlo[j] == doctest::Approx(dhi[j]).epsilon(1e-5).scale(1));
      }
    }
    std::vector<double> d2(b.size());
    b.deriv2(knots.back() + 1.0, d2);
    for (double v : d2) CHECK(std::abs(v) < 1e-8 * (1 + std::abs(knots.back()) * 100));
  }
}

TEST_CASE("survival functions decrease and hazards integrate to cumulative hazards") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> eta(-2, 1), anc(-0.7, 0.7), t(0.05, 5);
  const FamilyKind kinds[] = {FamilyKind::exponential, FamilyKind::weibull, FamilyKind::gompertz, FamilyKind::lognormal,
                              FamilyKind::loglogistic};
  GlRule gl = gl_rule(30);
  for (int rep = 0; rep < 200; ++rep) {
    FamilyKind k = kinds[rep % 5];
    double e = eta(rng), a = anc(rng), t1 = t(rng), t2 = t1 + t(rng);
    CHECK(surv_cum_hazard(k, t2, e, a) > surv_cum_hazard(k, t1, e, a));
    // Integrate on a log-time grid split at t1 so the check is away from t=0.
    double num = gl_integrate(gl, t1, t2, [&](double s) { return std::exp(surv_log_hazard(k, s, e, a)); });
    CHECK(num == doctest::Approx(surv_cum_hazard(k, t2, e, a) - surv_cum_hazard(k, t1, e, a)).epsilon(1e-8));
  }
}

TEST_CASE("specification text round trips for generated models") {
  std::mt19937_64 rng(4);
  const char* families[] = {"gaussian", "poisson", "bernoulli", "weibull, failure(d)", "gompertz, failure(d)"};
  const char* covs[] = {"x", "z", "x#z", "fp(1)", "rcs(df(2))"};
  for (int rep = 0; rep < 100; ++rep) {
    std::string text;
    int outcomes = 1 + static_cast<int>(rng() % 2);
    for (int k = 0; k < outcomes; ++k) {
      text += "(y" + std::to_string(k);
      for (int c = 0; c < static_cast<int>(rng() % 3); ++c) text += std::string(" ") + covs[rng() % 5];
      if (rng() % 2) text += " M1[id]";
      if (rng() % 2) text += " x#M2[id]@b" + std::to_string(k);
      text += std::string(", family(") + families[rng() % 5] + ") timevar(tv))";
    }
    if (rng() % 2) text += ", covariance(unstructured)";
    CAPTURE(text);
    ModelSpec a = parse_model_spec(text);
    CHECK(parse_model_spec(render_spec(a)) == a);
    CHECK(render_spec(parse_model_spec(render_spec(a))) == render_spec(a));
  }
}

TEST_CASE("marginal likelihood ignores row order and adds over clusters") {
  std::mt19937_64 rng(5);
  DataFrame d = testing::lmm_frame(12, 3, 5);
  std::vector<double> poisson_y(d.rows());
  for (std::size_t i = 0; i < d.rows(); ++i) poisson_y[i] = static_cast<double>(static_cast<int>(std::abs(d.column("y")[i])));
  d.set_column("c", poisson_y);
  ModelSpec spec = parse_model_spec("(c x M1[id], family(poisson))");
  auto p = compile(spec, d);
  std::vector<double> theta{0.3, 0.1, -0.5};
  const double whole = marginal_logl(*p, default_plan(*p, 9), theta);
  for (int rep = 0; rep < 5; ++rep) {
    auto q = compile(spec, testing::frame_of(permuted_csv(d, rng)));
    CHECK(marginal_logl(*q, default_plan(*q, 9), theta) == doctest::Approx(whole).epsilon(1e-13));
  }
  // Split by cluster parity.
  double parts = 0;
  for (int parity : {0, 1}) {
    DataFrame half;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < d.rows(); ++i)
      if (static_cast<int>(d.column("id")[i]) % 2 == parity) keep.push_back(i);
    half = DataFrame(keep.size());
    for (const auto& name : d.names()) {
      std::vector<double> v;
      for (std::size_t i : keep) v.push_back(d.column(name)[i]);
      half.set_column(name, v);
    }
    auto h = compile(spec, half);
    parts += marginal_logl(*h, default_plan(*h, 9), theta);
  }
  CHECK(parts == doctest::Approx(whole).epsilon(1e-13));
}

TEST_CASE("a vanishing latent variance recovers the fixed-effects likelihood") {
  DataFrame d = testing::frame_of("id,y,x\n1,2,0.1\n1,0,-0.3\n2,5,1.0\n2,3,0.5\n3,0,-1\n");
  auto p = compile(parse_model_spec("(y x M1[id], family(poisson))"), d);
  std::vector<double> theta{0.5, 0.2, -12.0};
  double fixed = 0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double eta = 0.2 + 0.5 * d.column("x")[i];
    fixed += logl_poisson(d.column("y")[i], std::exp(eta));
  }
  CHECK(marginal_logl(*p, default_plan(*p, 7), theta) == doctest::Approx(fixed).epsilon(1e-9));
}

TEST_CASE("log_sum_exp is shift equivariant") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 50);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> x(1 + rep % 7);
    for (auto& v : x) v = n(rng);
    double c = n(rng);
    std::vector<double> y = x;
    for (auto& v : y) v += c;
    CHECK(log_sum_exp(y) == doctest::Approx(log_sum_exp(x) + c).epsilon(1e-12));
  }
}
