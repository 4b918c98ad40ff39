#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mlgm/predictor.hpp"
#include "mlgm/validate.hpp"

using namespace mlgm;

namespace {

DataFrame frame_of(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in);
}

const char* kData = "id,y,x,z,t,d\n1,1.0,0.5,2,1.5,1\n1,2.0,-0.5,1,2.718281828459045,0\n2,0.5,1.5,0,0.7,1\n";

}  // namespace

TEST_CASE("parameter layout for a gaussian random intercept") {
  auto p = compile(parse_model_spec("(y x M1[id], family(gaussian))"), frame_of(kData));
  CHECK(p->param_names() == std::vector<std::string>{"x", "_cons", "lnsigma", "lns_M1"});
  CHECK(p->params()[2].transform == Transform::exp);
  CHECK(p->params()[3].kind == SlotKind::log_sd);
  CHECK(p->latent_count() == 1);
  CHECK(p->levels()[0].dim == 1);
}

TEST_CASE("parameter layout for two outcomes with shared names") {
  auto p = compile(parse_model_spec("(y x M1[id], family(gaussian)) (t x M1[id]@alpha, family(weibull, failure(d)))"),
                   frame_of(kData));
  CHECK(p->param_names() ==
        std::vector<std::string>{"_1:x", "_1:_cons", "_1:lnsigma", "_2:x", "alpha", "_2:_cons", "_2:lngamma", "lns_M1"});
  CHECK_THROWS(p->param_index("nosuch"));
  CHECK(p->param_index("alpha") == 4);
}

TEST_CASE("unstructured covariance adds Cholesky terms") {
  auto p = compile(parse_model_spec("(y x M1[id] x#M2[id], family(gaussian)), covariance(unstructured)"), frame_of(kData));
  auto names = p->param_names();
  CHECK(names.back() == "l_M2_M1");
  CHECK(p->levels()[0].chol.size() == 1);
  std::vector<double> theta(p->param_count(), 0.0);
  theta[p->param_index("lns_M1")] = std::log(2.0);
  theta[p->param_index("lns_M2")] = std::log(3.0);
  theta[p->param_index("l_M2_M1")] = 0.5;
  Eigen::MatrixXd L = p->level_chol(0, theta);
  CHECK(L(0, 0) == doctest::Approx(2.0));
  CHECK(L(1, 1) == doctest::Approx(3.0));
  CHECK(L(1, 0) == doctest::Approx(0.5));
  CHECK(L(0, 1) == 0.0);
}

TEST_CASE("linear predictor with a loaded latent effect") {
  auto p = compile(parse_model_spec("(y x M1[id]@lam, family(gaussian))"), frame_of(kData));
  CHECK(p->param_names() == std::vector<std::string>{"x", "lam", "_cons", "lnsigma", "lns_M1"});
  std::vector<double> theta{0.4, 2.0, -1.0, 0.0, 0.0};
  std::vector<double> b{0.3};
  CHECK(p->linpred(0, 0, theta, b) == doctest::Approx(0.4 * 0.5 + 2.0 * 0.3 - 1.0));
  CHECK(eval_linpred(*p, 0, 2, theta, b) == doctest::Approx(0.4 * 1.5 + 0.6 - 1.0));
}

TEST_CASE("log-time fractional polynomial with a named coefficient") {
  auto p = compile(parse_model_spec("(y fp(0)@phi, family(gaussian) timevar(t))"), frame_of(kData));
  std::vector<double> theta(p->param_count(), 0.0);
  theta[p->param_index("phi")] = 2.0;
  CHECK(p->linpred(0, 1, theta, {}) == doctest::Approx(2.0));
  CHECK(p->linpred(0, 1, theta, {}, std::exp(1.5)) == doctest::Approx(3.0));
}

TEST_CASE("random slope on time multiplies the basis") {
  auto p = compile(parse_model_spec("(y fp(1) fp(1)#M1[id], family(gaussian) timevar(t))"), frame_of(kData));
  std::vector<double> theta(p->param_count(), 0.0);
  std::vector<double> b{0.5};
  CHECK(p->linpred(0, 2, theta, b) == doctest::Approx(0.5 * 0.7));
}

TEST_CASE("expected-value links") {
  auto p = compile(
      parse_model_spec("(y x, family(gaussian)) (t EV[y]@a dEV[1]@g, family(weibull, failure(d)) timevar(t))"),
      frame_of(kData));
  std::vector<double> theta(p->param_count(), 0.0);
  theta[p->param_index("_1:x")] = 0.5;
  theta[p->param_index("_1:_cons")] = 1.0;
  theta[p->param_index("a")] = 2.0;
  CHECK(p->linpred(1, 0, theta, {}) == doctest::Approx(2.0 * (0.5 * 0.5 + 1.0)));
  CHECK(p->ev(0, EvKind::ev, 0, theta, {}, 1.0) == doctest::Approx(1.25));
  CHECK(p->ev(0, EvKind::dev, 0, theta, {}, 1.0) == doctest::Approx(0.0).scale(1));
}

TEST_CASE("EV derivatives and integrals of a time-varying target") {
  auto p = compile(parse_model_spec("(y fp(1 2), family(gaussian) timevar(t)) (t EV[1]@a, family(weibull, failure(d)) timevar(t))"),
                   frame_of(kData));
  std::vector<double> theta(p->param_count(), 0.0);
  theta[p->param_index("_1:fp(1 2)_1")] = 0.5;
  theta[p->param_index("_1:fp(1 2)_2")] = 0.25;
  theta[p->param_index("_1:_cons")] = 1.0;
  const double t = 2.0;
  CHECK(p->ev(0, EvKind::ev, 0, theta, {}, t) == doctest::Approx(1 + 0.5 * t + 0.25 * t * t));
  CHECK(p->ev(0, EvKind::dev, 0, theta, {}, t) == doctest::Approx(0.5 + 0.5 * t).epsilon(1e-8));
  CHECK(p->ev(0, EvKind::d2ev, 0, theta, {}, t) == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(p->ev(0, EvKind::iev, 0, theta, {}, t) == doctest::Approx(t + 0.25 * t * t + 0.25 * t * t * t / 3).epsilon(1e-12));
}

TEST_CASE("multi-column terms with a latent need a named coefficient") {
  CHECK_THROWS_AS(compile(parse_model_spec("(y fp(1 2)#M1[id], family(gaussian) timevar(t))"), frame_of(kData)), SpecError);
}

TEST_CASE("row log-likelihood of a gaussian observation") {
  auto p = compile(parse_model_spec("(y x, family(gaussian))"), frame_of(kData));
  std::vector<double> theta{0.0, 0.0, 0.0};
  CHECK(p->row_logl(0, 0, theta, {}) == doctest::Approx(-0.5 * std::log(2 * M_PI) - 0.5));
  std::vector<double> bad{0.0, 0.0, -1.0};
  CHECK(std::isfinite(p->row_logl(0, 0, bad, {})));
}

TEST_CASE("validation flags responses outside the family support") {
  DataFrame f = frame_of(kData);
  CHECK_FALSE(validate_spec(parse_model_spec("(y x, family(poisson))"), f).ok());
  CHECK_FALSE(validate_spec(parse_model_spec("(y x, family(bernoulli))"), f).ok());
  CHECK(validate_spec(parse_model_spec("(t x, family(weibull, failure(d)))"), f).ok());
  CHECK_FALSE(validate_spec(parse_model_spec("(x z, family(weibull, failure(d)))"), f).ok());
  ValidationReport r = validate_spec(parse_model_spec("(y x M1[id], family(gaussian))"), f);
  CHECK(r.ok());
  CHECK(r.units_per_level == std::vector<std::size_t>{2});
  CHECK_FALSE(validate_spec(parse_model_spec("(y w, family(gaussian))"), f).ok());
}
