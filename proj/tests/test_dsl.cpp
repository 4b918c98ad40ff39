#include <doctest.h>

#include "mlgm/dsl.hpp"

using namespace mlgm;

TEST_CASE("parse a single survival outcome with a frailty") {
  ModelSpec s = parse_model_spec("(time age female M1[patient], family(rp, failure(infect) scale(h) df(3)))");
  REQUIRE(s.outcomes.size() == 1);
  const auto& o = s.outcomes[0];
  CHECK(o.response == "time");
  CHECK(o.components.size() == 3);
  CHECK(o.constant);
  CHECK(o.family.kind == FamilyKind::rp);
  CHECK(o.family.failure == "infect");
  CHECK(o.family.scale == "h");
  CHECK(o.family.df == 3);
  REQUIRE(s.levels.size() == 1);
  CHECK(s.levels[0].name == "patient");
  CHECK(s.latents.count("M1") == 1);
  CHECK(std::holds_alternative<Latent>(o.components[2].elements[0]));
}

TEST_CASE("minimal gaussian spec") {
  ModelSpec s = parse_model_spec("(y x, family(gaussian))");
  REQUIRE(s.outcomes.size() == 1);
  CHECK(s.outcomes[0].components.size() == 1);
  CHECK(s.outcomes[0].constant);
  CHECK(s.levels.empty());
  CHECK(s.latents.empty());
}

TEST_CASE("two outcomes share a latent effect and carry a named coefficient") {
  ModelSpec s = parse_model_spec(
      "(rectime trt M1[id1], family(weibull, failure(recevent))) "
      "(stime trt M1[id1]@alpha, family(rp, failure(died) scale(h) df(3)))");
  REQUIRE(s.outcomes.size() == 2);
  CHECK(s.levels.size() == 1);
  CHECK(s.latents.size() == 1);
  CHECK(s.outcomes[1].components[1].coefficient == "alpha");
  CHECK(s.outcomes[0].family.kind == FamilyKind::weibull);
}

TEST_CASE("nested levels order outermost first") {
  ModelSpec s = parse_model_spec("(y x M1[school] M2[school>class], family(gaussian))");
  REQUIRE(s.levels.size() == 2);
  CHECK(s.levels[0].name == "school");
  CHECK(s.levels[1].name == "class");
  CHECK(s.latents.at("M2").level == 1);
}

TEST_CASE("syntax errors report a position") {
  try {
    parse_model_spec("(y x, family(gaussian)");
    FAIL("expected SpecError");
  } catch (const SpecError& e) {
    CHECK(e.position() != SpecError::npos);
    CHECK(std::string(e.what()).find("position") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_model_spec(""), SpecError);
  CHECK_THROWS_AS(parse_model_spec("(y x, family(nosuch))"), SpecError);
}

TEST_CASE("EV links must not form a cycle") {
  CHECK_THROWS_WITH_AS(parse_model_spec("(y1 EV[2], family(gaussian)) (y2 EV[y1], family(gaussian))"),
                       doctest::Contains("cyclic"), SpecError);
}

TEST_CASE("time functions need a timevar") {
  CHECK_THROWS_AS(parse_model_spec("(y fp(1), family(gaussian))"), SpecError);
  CHECK_NOTHROW(parse_model_spec("(y fp(1), family(gaussian) timevar(t))"));
}

TEST_CASE("EV targets come before callers in evaluation order") {
  ModelSpec s = parse_model_spec(
      "(stime EV[logb]@a, family(weibull, failure(d))) (logb fp(1) M1[id], family(gaussian) timevar(t))");
  REQUIRE(s.evaluation_order.size() == 2);
  CHECK(s.evaluation_order[0] == 1);
  CHECK(s.evaluation_order[1] == 0);
}

TEST_CASE("render and parse round trip") {
  const char* specs[] = {
      "(y x, family(gaussian))",
      "(time age female M1[patient], family(rp, failure(infect) scale(h) df(3)))",
      "(y x M1[id]#x M2[id], family(poisson)), covariance(unstructured)",
      "(y x M1[id], family(bernoulli)), redistribution(t) df(4)",
      "(logb fp(0 1) M1[id], family(gaussian) timevar(t)) (st EV[1]@a dEV[logb]@b, family(weibull, failure(d)))",
      "(y rcs(df(3)) M1[id], family(gaussian) timevar(t))",
  };
  for (const char* text : specs) {
    CAPTURE(text);
    ModelSpec a = parse_model_spec(text);
    ModelSpec b = parse_model_spec(render_spec(a));
    CHECK(a == b);
    CHECK(spec_from_json(spec_to_json(a)) == a);
  }
}

TEST_CASE("outcome-level options override spec-level ones") {
  ModelSpec s = parse_model_spec("(y M1[id], family(gaussian) redistribution(normal)), redistribution(t) df(5)");
  CHECK_FALSE(s.levels[0].distribution.t);
  ModelSpec u = parse_model_spec("(y M1[id], family(gaussian)), redistribution(t) df(5)");
  CHECK(u.levels[0].distribution.t);
  CHECK(u.levels[0].distribution.df == 5);
}

TEST_CASE("listings corpus parses and round trips") {
  // Two entries originally left an outcome unclosed before the next one.
  const char* corpus[] = {
      "(time age female M1[patient], family(rp, failure(infect) scale(h) df(3)))",
      "(time age female M1[patient], family(rp, failure(infect) scale(h) df(3))), redistribution(t) df(3)",
      "(time trt M1[trial] M2[trial>patient], family(rp, failure(died) scale(h) df(3)))",
      "(time trt M1[trial] trt#M1[trial] M2[trial>patient], family(rp, failure(died) scale(h) df(3)))",
      "(stime trt trt#fp(0)@phi M1[id1] M2[id1>id2], family(rp, failure(died) scale(h) df(3)) timevar(stime))",
      "(stime trt trt#fp(0)@phi age age2 M1[id1] M2[id1>id2], family(rp, failure(died) scale(h) df(3)) "
      "timevar(stime))",
      "(stime trt trt#fp(0)@phi M1[id1] M2[id1>id2], family(rp, failure(died) df(3) scale(h) bhazard(bhaz)) "
      "timevar(stime))",
      "(rectime trt M1[id1]       , family(rp, failure(recevent) scale(h) df(5)))\n"
      "(stime   trt M1[id1]@alpha , family(rp, failure(died)     scale(h) df(3)))",
      "(rectime trt M1[id1] M2[id1] , family(weibull, failure(recevent)))\n"
      "(stime   trt M2[id1]         , family(rp, failure(died) scale(h) df(3)))",
      "(canctime trt EV[logb]@a1 EV[logp]@a2 M5[id], family(weibull, failure(canc)))\n"
      "(stime trt EV[logb]@a4 EV[logp]@a5 M5[id]@alpha, family(gompertz, failure(died)))\n"
      "(logb fp(1)@l1 fp(1)#M2[id] M1[id], family(gaussian) timevar(time))\n"
      "(logp fp(1)@l2 fp(1)#M4[id] M3[id], family(gaussian) timevar(time))",
      "(stime trt EV[logb]@beta1 EV[logp]@beta2 EV[logb]#EV[logp]@beta3, family(weibull, failure(died)))\n"
      "(logb fp(1)@l1 fp(1)#M2[id] M1[id], family(gaussian) timevar(time))\n"
      "(logp fp(1)@l2 fp(1)#M4[id] M3[id], family(gaussian) timevar(time))\n"
      ", covariance(unstructured) redistribution(t) df(3)",
      "(stime trt EV[logb]@beta1 EV[logp]@beta2 fp(0)#EV[logp]@beta3, family(rp, failure(died) df(3)) "
      "timevar(stime))\n"
      "(logb fp(1)@l1 fp(1)#M2[id] M1[id], family(gaussian) timevar(time))\n"
      "(logp fp(1)@l2 fp(1)#M4[id] M3[id], family(gaussian) timevar(time)), covariance(unstructured)",
      "(stime trt EV[logb]@a1 EV[logp]@a2, family(weibull, failure(diedpbc)))\n"
      "(stime trt EV[logb]@a3 EV[logp]@a4, family(gompertz, failure(diedother)))\n"
      "(logb fp(1 2)@l1 fp(1)#M2[id] M1[id], family(gaussian) timevar(time))\n"
      "(logp rcs(df(3))@l2 fp(1)#M4[id] M3[id], family(gaussian) timevar(time))",
      "(canctime trt EV[logb]@a1 EV[logp]@a2, family(weibull, failure(canc)))\n"
      "(stimenocanc trt EV[logb]@a4 EV[logp]@a5, family(gompertz, failure(diednocanc) ltrunc(canctime)))\n"
      "(stimecanc trt EV[logb]@a4 EV[logp]@a5, family(gompertz, failure(diedcanc)))\n"
      "(logb fp(1)@l1 fp(1)#M2[id] M1[id], family(gaussian) timevar(time))\n"
      "(logp fp(1)@l2 fp(1)#M4[id] M3[id], family(gaussian) timevar(time))",
      "(logb time time#M2[id] M1[id], family(user, loglf(gauss_logl)) np(1))",
      "(resp age female M1[id], family(user, llf(nlme_logl)) np(1) timevar(time))\n"
      "(age female M2[id], family(null))\n"
      "(age female M3[id], family(null))\n"
      "(stime age female EV[1]@alpha1 EV[2]@alpha2 EV[3]@alpha3, family(weibull, failure(died)))\n"
      ", covariance(unstructured)",
      "(stime trt M1[id], family(user, hfunction(haz)) np(3))",
      "(resp female age age#M2[id] M1[id], family(user, llf(lev1_logl)))\n"
      "(age female M3[id], family(null)), covariance(unstructured)",
  };
  for (const char* text : corpus) {
    CAPTURE(text);
    ModelSpec s;
    REQUIRE_NOTHROW(s = parse_model_spec(text));
    CHECK(parse_model_spec(render_spec(s)) == s);
  }
}
