#include "mlgm/fit.hpp"

#include <cmath>
#include <numbers>
#include <set>

namespace mlgm {

namespace {

constexpr double kZ = 1.959963984540054;

std::string natural_name(const std::string& name) {
  auto colon = name.rfind(':');
  std::string head = colon == std::string::npos ? "" : name.substr(0, colon + 1);
  std::string tail = colon == std::string::npos ? name : name.substr(colon + 1);
  if (tail.rfind("ln", 0) == 0) tail = tail.substr(2);
  return head + tail;
}

double conditional_logl(const Program& p, const Eigen::VectorXd& theta, std::size_t k) {
  std::vector<double> b(p.latent_count(), 0.0);
  std::span<const double> th(theta.data(), static_cast<std::size_t>(theta.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < p.outcomes()[k].rows.size(); ++i) s += p.row_logl(k, i, th, b);
  return std::isfinite(s) ? s : std::numeric_limits<double>::quiet_NaN();
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd(const std::vector<double>& v) {
  double m = mean(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() < 2 ? 1.0 : std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

IntegrationPlan resolve_plan(const Program& program, const FitOptions& options) {
  IntegrationPlan plan = options.plan.levels.empty() ? default_plan(program, options.points, options.draws) : options.plan;
  if (options.plan.levels.empty()) plan.skip = options.skip;
  check_plan(program, plan);
  return plan;
}

Eigen::VectorXd initial_values(const Program& program, const std::map<std::string, double>& fixed) {
  const auto P = static_cast<Eigen::Index>(program.param_count());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(P);
  std::vector<bool> is_fixed(program.param_count(), false);
  for (const auto& [name, value] : fixed) {
    std::size_t j = program.param_index(name);
    theta[static_cast<Eigen::Index>(j)] = value;
    is_fixed[j] = true;
  }
  auto set = [&](std::size_t j, double v) {
    if (j != CompiledOutcome::npos && !is_fixed[j]) theta[static_cast<Eigen::Index>(j)] = v;
  };

  for (const auto& lv : program.levels())
    for (std::size_t j : lv.log_sd) set(j, std::log(0.5));

  // Latent effects loaded only through estimated coefficients start those
  // coefficients at 1 so the variance is identified from the start.
  std::set<std::size_t> anchored;
  for (const auto& co : program.outcomes())
    for (const auto& c : co.components)
      if (c.latent_count > 0 && c.coef == CompiledComponent::npos)
        for (const auto& e : c.elements)
          if (e.kind == CompiledElement::Kind::latent) anchored.insert(e.latent);
  for (const auto& co : program.outcomes())
    for (const auto& c : co.components) {
      if (c.latent_count == 0 || c.coef == CompiledComponent::npos || c.has_ev) continue;
      bool all_anchored = true;
      for (const auto& e : c.elements)
        if (e.kind == CompiledElement::Kind::latent && !anchored.count(e.latent)) all_anchored = false;
      if (!all_anchored)
        for (std::size_t j = 0; j < c.width; ++j) set(c.coef + j, 1.0);
    }

  std::set<std::size_t> seen;
  for (std::size_t k = 0; k < program.outcomes().size(); ++k) {
    const CompiledOutcome& co = program.outcomes()[k];
    if (co.kind == FamilyKind::null) continue;
    const std::size_t n = co.rows.size();
    const std::string where = "outcome " + std::to_string(k + 1);

    // Design columns of latent-free, EV-free components.
    std::vector<std::size_t> slots;
    std::vector<std::pair<const CompiledComponent*, std::size_t>> cols;
    for (const auto& c : co.components) {
      if (c.latent_count > 0 || c.has_ev || c.coef == CompiledComponent::npos) continue;
      for (std::size_t j = 0; j < c.width; ++j) {
        if (!seen.insert(c.coef + j).second) continue;
        slots.push_back(c.coef + j);
        cols.emplace_back(&c, j);
      }
    }
    const bool with_cons = co.cons != CompiledOutcome::npos;
    const auto q = static_cast<Eigen::Index>(cols.size() + (with_cons ? 1 : 0));
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), q);
    {
      Eigen::VectorXd unit = Eigen::VectorXd::Zero(P);
      std::vector<double> b(program.latent_count(), 0.0);
      std::span<const double> th(unit.data(), static_cast<std::size_t>(P));
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto& [comp, j] = cols[c];
        unit[static_cast<Eigen::Index>(comp->coef + j)] = 1.0;
        for (std::size_t i = 0; i < n; ++i)
          X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
              program.component_value(k, *comp, co.rows.rows[i], th, b, std::nullopt);
        unit[static_cast<Eigen::Index>(comp->coef + j)] = 0.0;
      }
      if (with_cons) X.col(q - 1).setOnes();
    }
    auto col_name = [&](Eigen::Index c) {
      return static_cast<std::size_t>(c) < slots.size() ? program.params()[slots[static_cast<std::size_t>(c)]].name
                                                        : program.params()[co.cons].name;
    };
    for (Eigen::Index c = 0; c < q; ++c)
      if (X.col(c).cwiseAbs().maxCoeff() == 0.0)
        throw DataError(where + ": design column for '" + col_name(c) + "' is all zero");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (q > 0 && qr.rank() < q) {
      std::string names;
      for (Eigen::Index c = qr.rank(); c < q; ++c) names += (names.empty() ? "" : ", ") + col_name(qr.colsPermutation().indices()[c]);
      throw DataError(where + ": singular design; collinear column(s): " + names);
    }

    std::vector<double> y(co.rows.response.begin(), co.rows.response.end());
    double events = 0.0, exposure = 0.0;
    std::vector<double> logy;
    if (co.survival) {
      for (std::size_t i = 0; i < n; ++i) {
        events += co.rows.event[i];
        exposure += co.rows.response[i] - co.rows.entry[i];
        logy.push_back(std::log(co.rows.response[i]));
      }
    }
    double log_rate = std::log(std::max(events, 0.5) / std::max(exposure, 1e-12));
    double my = mean(y);
    auto logit = [](double p) { return std::log(p / (1 - p)); };
    auto clamp01 = [](double p) { return std::min(std::max(p, 0.01), 0.99); };
    std::size_t anc = co.ancillary.empty() ? CompiledOutcome::npos : co.ancillary[0];

    switch (co.kind) {
      case FamilyKind::gaussian: {
        Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
        Eigen::VectorXd beta = q > 0 ? Eigen::VectorXd(qr.solve(yv)) : Eigen::VectorXd();
        for (std::size_t c = 0; c < slots.size(); ++c) set(slots[c], beta[static_cast<Eigen::Index>(c)]);
        if (with_cons) set(co.cons, beta[q - 1]);
        double rss = q > 0 ? (yv - X * beta).squaredNorm() : yv.squaredNorm();
        set(anc, 0.5 * std::log(std::max(rss / static_cast<double>(n), 1e-8)));
        break;
      }
      case FamilyKind::poisson:
      case FamilyKind::negbinomial:
        set(co.cons, std::log(std::max(my, 0.1)));
        break;
      case FamilyKind::bernoulli:
        set(co.cons, logit(clamp01(my)));
        break;
      case FamilyKind::binomial: {
        double trials = 0.0;
        for (std::size_t r : co.rows.rows) trials += co.trials ? co.trials[r] : co.trials_constant;
        set(co.cons, logit(clamp01(my * static_cast<double>(n) / std::max(trials, 1.0))));
        break;
      }
      case FamilyKind::beta: {
        double v = sd(y) * sd(y);
        double phi = v > 0 ? my * (1 - my) / v - 1 : 2.0;
        set(co.cons, logit(clamp01(my)));
        set(anc, std::log(std::max(phi, 0.5)));
        break;
      }
      case FamilyKind::exponential:
      case FamilyKind::weibull:
      case FamilyKind::gompertz:
        set(co.cons, log_rate);
        break;
      case FamilyKind::rp:
        set(co.baseline[0], 1.0);
        set(co.cons, log_rate);
        break;
      case FamilyKind::lognormal:
        set(co.cons, mean(logy));
        set(anc, std::log(std::max(sd(logy), 0.05)));
        break;
      case FamilyKind::loglogistic:
        set(co.cons, mean(logy));
        set(anc, std::log(std::max(sd(logy) * std::sqrt(3.0) / std::numbers::pi, 0.05)));
        break;
      default:
        break;
    }
    if (co.kind == FamilyKind::gaussian) continue;

    // Polish with Newton on this outcome alone.
    std::vector<bool> free(program.param_count(), false);
    bool any = false;
    auto mark = [&](std::size_t j) {
      if (j != CompiledOutcome::npos && !is_fixed[j]) free[j] = any = true;
    };
    for (std::size_t j : slots) mark(j);
    for (std::size_t j : co.baseline) mark(j);
    mark(co.cons);
    for (std::size_t j : co.ancillary) mark(j);
    if (!any) continue;
    Objective obj;
    obj.value = [&](const Eigen::VectorXd& x) { return conditional_logl(program, x, k); };
    MaximizeOptions mo;
    mo.free = free;
    mo.max_iter = 100;
    try {
      OptimResult r = maximize(obj, theta, mo);
      if (r.theta.allFinite() && std::isfinite(r.logl)) theta = r.theta;
    } catch (const std::exception&) {
      // keep the moment-based start
    }
  }
  return theta;
}

std::vector<EstimateRow> estimates_table(const Program& program, const Eigen::VectorXd& theta,
                                         const Eigen::MatrixXd& covariance, const std::vector<bool>& fixed) {
  std::vector<EstimateRow> rows;
  const auto& params = program.params();
  auto se_of = [&](std::size_t j) {
    double v = covariance(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
    return v > 0 ? std::sqrt(v) : 0.0;
  };
  auto is_fixed = [&](std::size_t j) { return j < fixed.size() && fixed[j]; };

  std::set<std::size_t> done_levels;
  for (std::size_t j = 0; j < params.size(); ++j) {
    const ParamSlot& s = params[j];
    const double est = theta[static_cast<Eigen::Index>(j)];
    if (s.kind == SlotKind::log_sd || s.kind == SlotKind::chol) {
      const LevelLayout& lv = program.levels()[s.level];
      if (lv.covariance == Covariance::independent || lv.dim == 1) {
        double se = se_of(j);
        rows.push_back({"sd(" + s.name.substr(4) + ")", std::exp(est), std::exp(est) * se, std::exp(est - kZ * se),
                        std::exp(est + kZ * se), is_fixed(j)});
        continue;
      }
      if (!done_levels.insert(s.level).second) continue;
      // Unstructured level: standard deviations and correlations of L L^T.
      std::vector<std::size_t> idx(lv.log_sd);
      idx.insert(idx.end(), lv.chol.begin(), lv.chol.end());
      const std::size_t r = lv.dim;
      auto derived = [&](const Eigen::VectorXd& th) {
        std::span<const double> sp(th.data(), static_cast<std::size_t>(th.size()));
        Eigen::MatrixXd L = program.level_chol(s.level, sp);
        Eigen::MatrixXd S = L * L.transpose();
        std::vector<double> out;
        for (std::size_t a = 0; a < r; ++a) out.push_back(std::sqrt(S(a, a)));
        for (std::size_t a = 1; a < r; ++a)
          for (std::size_t c = 0; c < a; ++c) out.push_back(S(a, c) / std::sqrt(S(a, a) * S(c, c)));
        return out;
      };
      std::vector<double> base = derived(theta);
      Eigen::MatrixXd J(static_cast<Eigen::Index>(base.size()), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t c = 0; c < idx.size(); ++c) {
        Eigen::VectorXd tp = theta, tm = theta;
        double h = 1e-6 * std::max(1.0, std::abs(theta[static_cast<Eigen::Index>(idx[c])]));
        tp[static_cast<Eigen::Index>(idx[c])] += h;
        tm[static_cast<Eigen::Index>(idx[c])] -= h;
        auto fp = derived(tp), fm = derived(tm);
        for (std::size_t a = 0; a < base.size(); ++a)
          J(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = (fp[a] - fm[a]) / (2 * h);
      }
      Eigen::MatrixXd V(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t c = 0; c < idx.size(); ++c)
          V(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) =
              covariance(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[c]));
      Eigen::MatrixXd D = J * V * J.transpose();
      bool all_fixed = true;
      for (std::size_t c : idx) all_fixed = all_fixed && is_fixed(c);
      const auto& names = program.spec().levels[s.level].latents;
      std::size_t a = 0;
      for (; a < r; ++a) {
        double v = base[a], se = std::sqrt(std::max(D(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)), 0.0));
        double sl = v > 0 ? se / v : 0.0;
        rows.push_back({"sd(" + names[a] + ")", v, se, v * std::exp(-kZ * sl), v * std::exp(kZ * sl), all_fixed});
      }
      for (std::size_t i = 1; i < r; ++i)
        for (std::size_t c = 0; c < i; ++c, ++a) {
          double v = base[a], se = std::sqrt(std::max(D(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)), 0.0));
          double z = std::atanh(std::clamp(v, -0.999999999, 0.999999999)), sz = se / std::max(1 - v * v, 1e-12);
          rows.push_back({"corr(" + names[i] + "," + names[c] + ")", v, se, std::tanh(z - kZ * sz), std::tanh(z + kZ * sz),
                          all_fixed});
        }
      continue;
    }
    double se = se_of(j);
    if (s.transform == Transform::exp) {
      rows.push_back({natural_name(s.name), std::exp(est), std::exp(est) * se, std::exp(est - kZ * se),
                      std::exp(est + kZ * se), is_fixed(j)});
    } else {
      rows.push_back({s.name, est, se, est - kZ * se, est + kZ * se, is_fixed(j)});
    }
  }
  return rows;
}

std::vector<std::pair<std::string, std::vector<double>>> model_knots(const Program& program) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (std::size_t k = 0; k < program.outcomes().size(); ++k) {
    const auto& co = program.outcomes()[k];
    for (const auto& c : co.components)
      for (const auto& e : c.elements)
        if (e.kind == CompiledElement::Kind::rcs)
          out.emplace_back("outcome " + std::to_string(k + 1) + ": " + c.label, e.rcs->knots());
    if (co.rp_basis) out.emplace_back("_" + std::to_string(k + 1) + "_rcs", co.rp_basis->knots());
  }
  return out;
}

FitResult fit(const Program& program, const FitOptions& options) {
  FitResult res;
  res.plan = resolve_plan(program, options);
  res.layout = program.params();
  res.knots = model_knots(program);
  const std::size_t P = program.param_count();
  res.fixed.assign(P, false);
  for (const auto& [name, value] : options.fixed) res.fixed[program.param_index(name)] = true;

  Eigen::VectorXd theta0;
  if (options.start) {
    theta0 = *options.start;
    if (static_cast<std::size_t>(theta0.size()) != P) throw std::invalid_argument("starting vector has the wrong length");
    for (const auto& [name, value] : options.fixed) theta0[static_cast<Eigen::Index>(program.param_index(name))] = value;
  } else {
    theta0 = initial_values(program, options.fixed);
  }

  MarginalLikelihood ml(program, res.plan, options.threads);
  auto span_of = [](const Eigen::VectorXd& x) { return std::span<const double>(x.data(), static_cast<std::size_t>(x.size())); };
  Objective obj;
  obj.value = [&](const Eigen::VectorXd& x) { return ml(span_of(x), AdaptMode::replay); };
  obj.refresh = [&](const Eigen::VectorXd& x) { return ml(span_of(x), AdaptMode::record); };

  MaximizeOptions mo = options.optimizer;
  mo.free.assign(P, true);
  for (std::size_t j = 0; j < P; ++j) mo.free[j] = !res.fixed[j];
  mo.floored.clear();
  for (const auto& lv : program.levels())
    for (std::size_t j : lv.log_sd) mo.floored.push_back(j);

  OptimResult o = maximize(obj, theta0, mo);
  res.theta = o.theta;
  res.covariance = o.covariance;
  res.logl = o.logl;
  res.iterations = o.iterations;
  res.converged = o.converged;
  res.verified = o.verified;
  res.gradient_max = o.gradient_max;
  res.message = o.message;
  res.history = o.history;
  res.table = estimates_table(program, res.theta, res.covariance, res.fixed);
  res.profile = ml.profile();
  return res;
}

CheckResult check_fit(const Program& program, const FitOptions& options, int points_step, int draws_factor) {
  CheckResult out;
  out.baseline = fit(program, options);
  FitOptions hi = options;
  hi.plan = out.baseline.plan;
  for (std::size_t l = 0; l < hi.plan.levels.size(); ++l) {
    LevelPlan& lp = hi.plan.levels[l];
    if (lp.method == Method::aghq) {
      lp.points += points_step;
    } else {
      int base = lp.draws > 0 ? lp.draws : static_cast<int>(150 * program.levels()[l].dim);
      lp.draws = base * draws_factor;
    }
  }
  out.escalated = fit(program, hi);
  for (std::size_t r = 0; r < out.baseline.table.size(); ++r) {
    double d = std::abs(out.escalated.table[r].estimate - out.baseline.table[r].estimate);
    out.shifts.emplace_back(out.baseline.table[r].name, d);
    out.max_shift = std::max(out.max_shift, d);
  }
  out.logl_shift = std::abs(out.escalated.logl - out.baseline.logl);
  return out;
}

}  // namespace mlgm
