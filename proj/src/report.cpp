#include "mlgm/report.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace mlgm {

namespace {

using Json = nlohmann::ordered_json;

Json number(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

Json plan_json(const Program& program, const IntegrationPlan& plan) {
  Json levels = Json::array();
  for (std::size_t l = 0; l < plan.levels.size(); ++l) {
    const LevelPlan& lp = plan.levels[l];
    const LevelLayout& lv = program.levels()[l];
    Json j;
    j["level"] = lv.name;
    j["dims"] = lv.dim;
    j["kernel"] = lv.kernel == KernelKind::t ? "t" : "normal";
    if (lv.kernel == KernelKind::t) j["df"] = lv.df;
    j["covariance"] = lv.covariance == Covariance::unstructured ? "unstructured" : "independent";
    j["method"] = lp.method == Method::aghq ? "aghq" : "qmc";
    if (lp.method == Method::aghq)
      j["points"] = lp.points;
    else
      j["draws"] = lp.draws > 0 ? lp.draws : static_cast<int>(150 * lv.dim);
    j["adaptive"] = lp.adaptive;
    levels.push_back(std::move(j));
  }
  Json out;
  out["levels"] = std::move(levels);
  out["halton_skip"] = plan.skip;
  out["gauss_legendre_points"] = program.gl().nodes.size();
  return out;
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json fit_document(const Program& program, const FitResult& r) {
  Json doc;
  doc["model"] = render_spec(program.spec());
  doc["observations"] = program.frame().rows();
  Json units = Json::object();
  for (std::size_t l = 0; l < program.levels().size(); ++l)
    units[program.levels()[l].name] = program.hierarchy().unit_count(l);
  doc["units"] = std::move(units);
  doc["integration"] = plan_json(program, r.plan);

  doc["status"] = r.converged ? "converged" : "not converged";
  doc["message"] = r.message;
  doc["verified"] = r.verified;
  doc["logl"] = number(r.logl);
  doc["iterations"] = r.iterations;
  doc["gradient_max"] = number(r.gradient_max);

  Json params = Json::array();
  for (std::size_t j = 0; j < r.layout.size(); ++j) {
    Json p;
    p["name"] = r.layout[j].name;
    p["value"] = number(r.theta[static_cast<Eigen::Index>(j)]);
    p["fixed"] = static_cast<bool>(r.fixed[j]);
    params.push_back(std::move(p));
  }
  doc["parameters"] = std::move(params);

  Json table = Json::array();
  for (const auto& row : r.table) {
    Json t;
    t["name"] = row.name;
    t["estimate"] = number(row.estimate);
    t["se"] = number(row.se);
    t["lower"] = number(row.lower);
    t["upper"] = number(row.upper);
    if (row.fixed) t["fixed"] = true;
    table.push_back(std::move(t));
  }
  doc["estimates"] = std::move(table);

  Json cov = Json::array();
  for (Eigen::Index i = 0; i < r.covariance.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < r.covariance.cols(); ++j) row.push_back(number(r.covariance(i, j)));
    cov.push_back(std::move(row));
  }
  doc["covariance"] = std::move(cov);

  Json knots = Json::object();
  for (const auto& [label, k] : r.knots) knots[label] = k;
  doc["knots"] = std::move(knots);

  Json log = Json::array();
  for (const auto& it : r.history) {
    Json e;
    e["iteration"] = it.iteration;
    e["logl"] = number(it.logl);
    e["gradient_max"] = number(it.gradient_max);
    e["halvings"] = it.halvings;
    e["ridge"] = number(it.ridge);
    log.push_back(std::move(e));
  }
  doc["iteration_log"] = std::move(log);

  Json prof;
  Json plev = Json::array();
  for (const auto& lp : r.profile.levels) {
    Json e;
    e["level"] = lp.name;
    e["method"] = lp.method;
    e["dims"] = lp.dims;
    e["nodes_per_unit"] = lp.nodes_per_unit;
    e["units"] = lp.units;
    plev.push_back(std::move(e));
  }
  prof["levels"] = std::move(plev);
  prof["likelihood_calls"] = r.profile.likelihood_calls;
  prof["conditional_evaluations"] = r.profile.conditional_evaluations;
  prof["adaptation_fallbacks"] = r.profile.adaptation_fallbacks;
  doc["profile"] = std::move(prof);
  return doc;
}

void write_estimates_csv(std::ostream& out, const FitResult& r) {
  out << "name,estimate,se,lower,upper,fixed\n";
  for (const auto& row : r.table)
    out << row.name << ',' << format_number(row.estimate) << ',' << format_number(row.se) << ','
        << format_number(row.lower) << ',' << format_number(row.upper) << ',' << (row.fixed ? 1 : 0) << '\n';
}

Json check_document(const Program& program, const CheckResult& c) {
  Json doc;
  doc["model"] = render_spec(program.spec());
  doc["baseline"] = {{"integration", plan_json(program, c.baseline.plan)},
                     {"status", c.baseline.converged ? "converged" : "not converged"},
                     {"logl", number(c.baseline.logl)}};
  doc["escalated"] = {{"integration", plan_json(program, c.escalated.plan)},
                      {"status", c.escalated.converged ? "converged" : "not converged"},
                      {"logl", number(c.escalated.logl)}};
  Json shifts = Json::array();
  for (std::size_t i = 0; i < c.shifts.size(); ++i) {
    Json s;
    s["name"] = c.shifts[i].first;
    s["baseline"] = number(c.baseline.table[i].estimate);
    s["escalated"] = number(c.escalated.table[i].estimate);
    s["shift"] = number(c.shifts[i].second);
    shifts.push_back(std::move(s));
  }
  doc["shifts"] = std::move(shifts);
  doc["max_shift"] = number(c.max_shift);
  doc["logl_shift"] = number(c.logl_shift);
  return doc;
}

void write_check_csv(std::ostream& out, const CheckResult& c) {
  out << "name,baseline,escalated,shift\n";
  for (std::size_t i = 0; i < c.shifts.size(); ++i)
    out << c.shifts[i].first << ',' << format_number(c.baseline.table[i].estimate) << ','
        << format_number(c.escalated.table[i].estimate) << ',' << format_number(c.shifts[i].second) << '\n';
}

}  // namespace mlgm
