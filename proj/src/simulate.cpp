#include "mlgm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "mlgm/families.hpp"
#include "mlgm/predictor.hpp"

namespace mlgm {

namespace {

std::vector<double> parse_args(const std::string& text, const std::string& whole) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    std::string part = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (part.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw SimulationError("bad number '" + part + "' in generator '" + whole + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

CovariateGen parse_generator(const std::string& text) {
  CovariateGen g;
  auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw SimulationError("generator '" + text + "' must look like name=dist");
  g.name = text.substr(0, eq);
  std::string rest = text.substr(eq + 1);
  auto colon = rest.rfind(':');
  if (colon != std::string::npos && rest.find(')', colon) == std::string::npos) {
    g.level = rest.substr(colon + 1);
    rest = rest.substr(0, colon);
  }
  auto open = rest.find('(');
  std::string dist = rest.substr(0, open);
  std::vector<double> args;
  if (open != std::string::npos) {
    if (rest.back() != ')') throw SimulationError("generator '" + text + "' has unbalanced parentheses");
    args = parse_args(rest.substr(open + 1, rest.size() - open - 2), text);
  }
  auto need = [&](std::size_t n, double a, double b) {
    if (args.size() > n) throw SimulationError("too many arguments in generator '" + text + "'");
    g.a = args.size() > 0 ? args[0] : a;
    g.b = args.size() > 1 ? args[1] : b;
  };
  if (dist == "normal") {
    g.dist = CovariateGen::Dist::normal;
    need(2, 0.0, 1.0);
  } else if (dist == "uniform") {
    g.dist = CovariateGen::Dist::uniform;
    need(2, 0.0, 1.0);
  } else if (dist == "bernoulli") {
    g.dist = CovariateGen::Dist::bernoulli;
    need(1, 0.5, 0.0);
  } else if (dist == "constant") {
    g.dist = CovariateGen::Dist::constant;
    need(1, 0.0, 0.0);
  } else {
    throw SimulationError("unknown distribution '" + dist + "' in generator '" + text + "'");
  }
  return g;
}

DataFrame simulate(const SimConfig& cfg) {
  const ModelSpec& spec = cfg.spec;
  const std::size_t D = spec.levels.size();
  std::size_t R = cfg.times.empty() ? 1 : cfg.times.size();
  std::vector<std::size_t> counts = cfg.units;
  if (counts.size() == D + 1) {
    R = counts.back();
    counts.pop_back();
  } else if (counts.size() != D) {
    throw SimulationError("units needs " + std::to_string(D) + " or " + std::to_string(D + 1) + " counts for this model");
  }
  if (D == 0 && cfg.units.empty()) throw SimulationError("units must give the number of rows");
  if (!cfg.times.empty() && R != cfg.times.size())
    throw SimulationError("rows per unit (" + std::to_string(R) + ") differs from the number of times");
  for (std::size_t c : counts)
    if (c == 0) throw SimulationError("unit counts must be positive");
  if (R == 0) throw SimulationError("rows per unit must be positive");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Rows in nesting order with globally unique ids per level.
  std::vector<std::vector<std::size_t>> unit_of(D);  // per level: unit index of each row
  std::vector<std::size_t> position;                  // row position within its innermost unit
  std::vector<std::size_t> units_at(D, 0);
  std::vector<std::size_t> parent_stack(D, 0);
  std::size_t nrows = 0;
  auto emit = [&](auto&& self, std::size_t d) -> void {
    if (d == D) {
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t l = 0; l < D; ++l) unit_of[l].push_back(parent_stack[l]);
        position.push_back(r);
        ++nrows;
      }
      return;
    }
    for (std::size_t u = 0; u < counts[d]; ++u) {
      parent_stack[d] = units_at[d]++;
      self(self, d + 1);
    }
  };
  emit(emit, 0);

  DataFrame frame(nrows);
  for (std::size_t l = 0; l < D; ++l) {
    std::vector<double> ids(nrows);
    for (std::size_t i = 0; i < nrows; ++i) ids[i] = static_cast<double>(unit_of[l][i] + 1);
    frame.set_column(spec.levels[l].name, ids);
  }

  auto draw = [&](const CovariateGen& g) {
    switch (g.dist) {
      case CovariateGen::Dist::normal:
        return g.a + g.b * normal(rng);
      case CovariateGen::Dist::uniform:
        return g.a + (g.b - g.a) * unif(rng);
      case CovariateGen::Dist::bernoulli:
        return unif(rng) < g.a ? 1.0 : 0.0;
      default:
        return g.a;
    }
  };
  for (const auto& g : cfg.covariates) {
    std::vector<double> v(nrows);
    if (g.level.empty()) {
      for (auto& x : v) x = draw(g);
    } else {
      std::size_t l = D;
      for (std::size_t j = 0; j < D; ++j)
        if (spec.levels[j].name == g.level) l = j;
      if (l == D) throw SimulationError("generator '" + g.name + "' names unknown level '" + g.level + "'");
      std::vector<double> per(units_at[l]);
      for (auto& x : per) x = draw(g);
      for (std::size_t i = 0; i < nrows; ++i) v[i] = per[unit_of[l][i]];
    }
    frame.set_column(g.name, v);
  }

  // Time variables and placeholder responses so the model can be compiled.
  std::set<std::string> response_cols;
  bool joint = false, any_survival = false;
  for (const auto& o : spec.outcomes) {
    bool surv = is_survival(o.family.kind);
    any_survival = any_survival || surv;
    if (!surv && o.family.kind != FamilyKind::null && o.timevar) joint = true;
    if (o.family.kind == FamilyKind::user) throw SimulationError("user-defined families cannot be simulated");
    if (o.family.kind == FamilyKind::rp && o.family.knots.empty())
      throw SimulationError("simulating family(rp) needs explicit knots()");
    for (const auto& c : o.components)
      for (const auto& e : c.elements)
        if (const auto* sp = std::get_if<Spline>(&e); sp && sp->knots.empty() && surv)
          throw SimulationError("simulating rcs() terms in a survival outcome needs explicit knots()");
    if (o.timevar && !frame.has(*o.timevar)) {
      std::vector<double> t(nrows);
      for (std::size_t i = 0; i < nrows; ++i)
        t[i] = cfg.times.empty() ? static_cast<double>(position[i]) : cfg.times[position[i]];
      frame.set_column(*o.timevar, t);
    }
    if (o.response) {
      frame.set_column(*o.response, std::vector<double>(nrows, surv ? 1.0 : 0.0));
      response_cols.insert(*o.response);
    }
    if (!o.family.failure.empty()) frame.set_column(o.family.failure, std::vector<double>(nrows, 0.0));
    if (!o.family.ltrunc.empty() && !frame.has(o.family.ltrunc))
      frame.set_column(o.family.ltrunc, std::vector<double>(nrows, 0.0));
    if (!o.family.bhazard.empty() && !frame.has(o.family.bhazard))
      frame.set_column(o.family.bhazard, std::vector<double>(nrows, 0.0));
    if (o.family.kind == FamilyKind::binomial && !frame.has(o.family.trials) &&
        !std::all_of(o.family.trials.begin(), o.family.trials.end(), ::isdigit))
      throw SimulationError("binomial trials column '" + o.family.trials + "' needs a generator");
  }
  joint = joint && any_survival;
  for (const auto& name : referenced_columns(spec))
    if (!frame.has(name) && !std::all_of(name.begin(), name.end(), ::isdigit))
      throw SimulationError("covariate '" + name + "' needs a generator (name=dist)");

  Program program(spec, frame);
  std::vector<double> theta(program.param_count());
  std::string missing;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    auto it = cfg.theta.find(program.params()[j].name);
    if (it == cfg.theta.end())
      missing += (missing.empty() ? "" : ", ") + program.params()[j].name;
    else
      theta[j] = it->second;
  }
  if (!missing.empty()) throw SimulationError("missing true values for: " + missing);
  for (const auto& [name, v] : cfg.theta) program.param_index(name);

  // Latent effects per unit.
  std::vector<std::vector<double>> latent(D);  // per level: units x dim
  for (std::size_t l = 0; l < D; ++l) {
    const LevelLayout& lv = program.levels()[l];
    Eigen::MatrixXd L = program.level_chol(l, theta);
    latent[l].resize(units_at[l] * lv.dim);
    std::chi_squared_distribution<double> chi(lv.df > 0 ? lv.df : 1);
    for (std::size_t u = 0; u < units_at[l]; ++u) {
      Eigen::VectorXd z(static_cast<Eigen::Index>(lv.dim));
      for (auto& x : z) x = normal(rng);
      if (lv.kernel == KernelKind::t) z *= std::sqrt(lv.df / chi(rng));
      Eigen::VectorXd b = L * z;
      for (std::size_t j = 0; j < lv.dim; ++j) latent[l][u * lv.dim + j] = b[static_cast<Eigen::Index>(j)];
    }
  }
  auto row_latents = [&](std::size_t i) {
    std::vector<double> b(program.latent_count(), 0.0);
    for (std::size_t l = 0; l < D; ++l) {
      const LevelLayout& lv = program.levels()[l];
      for (std::size_t j = 0; j < lv.dim; ++j) b[lv.first_latent + j] = latent[l][unit_of[l][i] * lv.dim + j];
    }
    return b;
  };

  std::map<std::string, std::vector<double>> out_cols;
  std::vector<std::string> col_order;
  auto out_col = [&](const std::string& name) -> std::vector<double>& {
    if (!out_cols.count(name)) {
      out_cols[name] = std::vector<double>(nrows, kMissing);
      col_order.push_back(name);
    }
    return out_cols[name];
  };

  // Survival outcomes grouped by response column (competing causes).
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> group_order;
  for (std::size_t k = 0; k < spec.outcomes.size(); ++k) {
    const auto& o = spec.outcomes[k];
    if (!is_survival(o.family.kind)) continue;
    if (!groups.count(*o.response)) group_order.push_back(*o.response);
    groups[*o.response].push_back(k);
  }
  for (const auto& name : group_order) {
    out_col(name);
    for (std::size_t k : groups[name])
      if (!spec.outcomes[k].family.failure.empty()) out_col(spec.outcomes[k].family.failure);
  }

  auto cum_hazard = [&](std::size_t k, std::size_t row, const std::vector<double>& b, double t) {
    const CompiledOutcome& co = program.outcomes()[k];
    const double anc = co.ancillary.empty() ? 0.0 : theta[co.ancillary[0]];
    auto eta = [&](double u) { return program.linpred(k, row, theta, b, u); };
    if (co.kind == FamilyKind::rp) {
      std::vector<double> col(co.rp_basis->size());
      co.rp_basis->eval(std::log(t), col);
      double s = 0.0;
      for (std::size_t j = 0; j < col.size(); ++j) s += theta[co.baseline[j]] * col[j];
      return std::exp(s + eta(t));
    }
    if (co.time_dependent)
      return gl_integrate_origin(program.gl(), t, [&](double u) { return std::exp(surv_log_hazard(co.kind, u, eta(u), anc)); });
    return surv_cum_hazard(co.kind, t, eta(t), anc);
  };
  auto event_time = [&](std::size_t k, std::size_t row, const std::vector<double>& b) {
    const double target = -std::log(1.0 - unif(rng));
    double hi = std::isfinite(cfg.horizon) ? cfg.horizon : 1.0;
    if (std::isfinite(cfg.horizon)) {
      if (cum_hazard(k, row, b, hi) < target) return std::numeric_limits<double>::infinity();
    } else {
      int doublings = 0;
      while (cum_hazard(k, row, b, hi) < target) {
        hi *= 2;
        if (++doublings > 1000) throw SimulationError("cumulative hazard does not reach the drawn level");
      }
    }
    double lo = 0.0;
    while (hi - lo > 1e-10 * std::max(1.0, hi)) {
      double mid = 0.5 * (lo + hi);
      if (cum_hazard(k, row, b, mid) < target)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };

  std::vector<double> unit_event(nrows, std::numeric_limits<double>::infinity());
  std::exponential_distribution<double> censor(cfg.censor_rate > 0 ? cfg.censor_rate : 1.0);
  for (std::size_t i = 0; i < nrows; ++i) {
    if (joint && position[i] != 0) continue;
    std::vector<double> b = row_latents(i);
    bool first_group = true;
    for (const auto& name : group_order) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t cause = 0;
      for (std::size_t k : groups[name]) {
        double t = event_time(k, i, b);
        if (t < best) {
          best = t;
          cause = k;
        }
      }
      double c = cfg.horizon;
      if (cfg.censor_rate > 0) c = std::min(c, censor(rng));
      if (!std::isfinite(best) && !std::isfinite(c))
        throw SimulationError("event time is not finite and there is no censoring");
      double y = std::min(best, c);
      out_col(name)[i] = y;
      for (std::size_t k : groups[name])
        if (!spec.outcomes[k].family.failure.empty())
          out_col(spec.outcomes[k].family.failure)[i] = (best <= c && k == cause) ? 1.0 : 0.0;
      if (first_group) unit_event[i] = y;
      first_group = false;
    }
  }

  for (std::size_t k = 0; k < spec.outcomes.size(); ++k) {
    const auto& o = spec.outcomes[k];
    if (is_survival(o.family.kind) || o.family.kind == FamilyKind::null) continue;
    auto& col = out_col(*o.response);
    const CompiledOutcome& co = program.outcomes()[k];
    const double anc = co.ancillary.empty() ? 0.0 : theta[co.ancillary[0]];
    for (std::size_t i = 0; i < nrows; ++i) {
      if (joint) {
        std::size_t first = i - position[i];
        if (co.timevar && co.timevar[i] > unit_event[first]) continue;
      }
      std::vector<double> b = row_latents(i);
      double eta = program.linpred(k, i, theta, b);
      double mu = inverse_link(o.family.kind, eta);
      double y = 0.0;
      switch (o.family.kind) {
        case FamilyKind::gaussian:
          y = eta + std::exp(anc) * normal(rng);
          break;
        case FamilyKind::poisson:
          y = static_cast<double>(std::poisson_distribution<long long>(mu)(rng));
          break;
        case FamilyKind::bernoulli:
          y = unif(rng) < mu ? 1.0 : 0.0;
          break;
        case FamilyKind::binomial: {
          double n = co.trials ? co.trials[i] : co.trials_constant;
          y = static_cast<double>(std::binomial_distribution<long long>(static_cast<long long>(n), mu)(rng));
          break;
        }
        case FamilyKind::beta: {
          double s = std::exp(anc);
          double ga = std::gamma_distribution<double>(mu * s, 1.0)(rng);
          double gb = std::gamma_distribution<double>((1 - mu) * s, 1.0)(rng);
          y = ga / (ga + gb);
          break;
        }
        case FamilyKind::negbinomial: {
          double alpha = std::exp(anc);
          double lam = std::gamma_distribution<double>(1 / alpha, alpha * mu)(rng);
          y = static_cast<double>(std::poisson_distribution<long long>(lam)(rng));
          break;
        }
        default:
          break;
      }
      col[i] = y;
    }
  }

  // Keep rows that carry at least one response.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < nrows; ++i) {
    bool any = false;
    for (const auto& name : response_cols)
      if (out_cols.count(name) && !is_missing(out_cols[name][i])) any = true;
    if (any) keep.push_back(i);
  }
  DataFrame result(keep.size());
  auto put = [&](const std::string& name, std::span<const double> src) {
    std::vector<double> v(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) v[r] = src[keep[r]];
    result.set_column(name, std::move(v));
  };
  for (const auto& name : frame.names())
    if (!out_cols.count(name) && !response_cols.count(name)) {
      bool placeholder = false;
      for (const auto& o : spec.outcomes)
        if (o.family.failure == name) placeholder = true;
      if (!placeholder) put(name, frame.column(name));
    }
  for (const auto& name : col_order) put(name, out_cols[name]);
  return result;
}

}  // namespace mlgm
