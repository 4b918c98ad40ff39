#include "mlgm/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace mlgm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string number_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string element_label(const Element& e) {
  if (const auto* c = std::get_if<Covariate>(&e)) return c->column;
  if (std::holds_alternative<Intercept>(e)) return "_cons";
  if (const auto* l = std::get_if<Latent>(&e)) return l->name;
  if (const auto* fp = std::get_if<FracPoly>(&e)) {
    std::string s = "fp(";
    for (std::size_t i = 0; i < fp->powers.size(); ++i) s += (i ? " " : "") + number_label(fp->powers[i]);
    return s + ")";
  }
  if (std::holds_alternative<Spline>(e)) return "rcs";
  const auto& ev = std::get<EvLink>(e);
  return std::string(ev_name(ev.kind)) + "[" + ev.target + "]";
}

bool is_integer_text(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

class RowContext final : public UserContext {
 public:
  RowContext(const Program& p, std::size_t k, std::size_t i, std::span<const double> theta, std::span<const double> b)
      : p_(p), k_(k), i_(i), row_(p.outcomes()[k].rows.rows[i]), theta_(theta), b_(b) {}

  void set_time(std::optional<double> t) { t_ = t; }

  double response() const override { return p_.outcomes()[k_].rows.response[i_]; }
  double linpred() const override { return p_.linpred(k_, row_, theta_, b_, t_); }
  double linpred_of(std::size_t outcome) const override {
    if (outcome < 1 || outcome > p_.outcomes().size())
      throw std::out_of_range("linpred_of: no outcome " + std::to_string(outcome));
    return p_.linpred(outcome - 1, row_, theta_, b_, t_);
  }
  double ancillary(std::size_t j) const override {
    const auto& anc = p_.outcomes()[k_].ancillary;
    if (j < 1 || j > anc.size()) throw std::out_of_range("ancillary: no slot " + std::to_string(j));
    return theta_[anc[j - 1]];
  }
  std::optional<double> time() const override { return t_; }
  double column(std::string_view name) const override { return p_.frame().column(name)[row_]; }
  std::size_t row() const override { return row_; }

 private:
  const Program& p_;
  std::size_t k_, i_, row_;
  std::span<const double> theta_, b_;
  std::optional<double> t_;
};

}  // namespace

Program::Program(const ModelSpec& spec, const DataFrame& frame, const CompileOptions& options)
    : spec_(spec), frame_(std::make_unique<DataFrame>(frame)), gl_(gl_rule(options.gl_points)) {
  auto rows = split_outcome_rows(*frame_, spec_);
  std::vector<std::string> level_cols;
  for (const auto& l : spec_.levels) level_cols.push_back(l.name);
  hierarchy_ = build_hierarchy(*frame_, level_cols, used_rows(rows, frame_->rows()));

  std::vector<std::size_t> level_offset;
  for (const auto& l : spec_.levels) {
    level_offset.push_back(latent_names_.size());
    for (const auto& name : l.latents) latent_names_.push_back(name);
  }

  const bool multi = spec_.outcomes.size() > 1;
  std::map<std::string, std::size_t> shared;
  auto add_param = [&](std::string name, Transform tr, SlotKind kind, std::size_t outcome, std::size_t level) {
    params_.push_back(ParamSlot{std::move(name), tr, kind, outcome, level});
    return params_.size() - 1;
  };

  for (std::size_t k = 0; k < spec_.outcomes.size(); ++k) {
    const OutcomeSpec& o = spec_.outcomes[k];
    CompiledOutcome co;
    co.kind = o.family.kind;
    co.label = o.response ? *o.response : "outcome " + std::to_string(k + 1);
    co.rows = std::move(rows[k]);
    co.survival = is_survival(o.family.kind) || !o.family.hazard.empty() || !o.family.cumhazard.empty();
    co.time_dependent = spec_.time_dependent(k);
    if (o.response && frame_->has(*o.response)) co.response = frame_->column(*o.response).data();
    if (o.timevar) {
      if (!frame_->has(*o.timevar)) throw DataError("timevar column '" + *o.timevar + "' not found");
      co.timevar = frame_->column(*o.timevar).data();
    }
    const std::string prefix = multi ? "_" + std::to_string(k + 1) + ":" : "";
    const std::string where = "outcome " + std::to_string(k + 1);

    // Values on which default spline knots are placed.
    auto knot_source = [&](bool log_time) {
      std::vector<double> v;
      for (std::size_t i = 0; i < co.rows.size(); ++i) {
        double t;
        if (co.survival) {
          if (co.rows.event[i] != 1) continue;
          t = co.rows.response[i];
        } else {
          if (!co.timevar) throw SpecError(where + ": rcs() without knots() needs timevar()");
          t = co.timevar[co.rows.rows[i]];
        }
        if (log_time) {
          if (!(t > 0)) throw SpecError(where + ": rcs(log) needs positive times");
          t = std::log(t);
        }
        v.push_back(t);
      }
      return v;
    };

    for (const Component& c : o.components) {
      CompiledComponent cc;
      std::string label;
      for (const Element& e : c.elements) {
        CompiledElement ce;
        if (const auto* cov = std::get_if<Covariate>(&e)) {
          if (!frame_->has(cov->column)) throw DataError("covariate column '" + cov->column + "' not found");
          ce.kind = CompiledElement::Kind::covariate;
          ce.column = frame_->column(cov->column).data();
          ce.column_name = cov->column;
        } else if (std::holds_alternative<Intercept>(e)) {
          ce.kind = CompiledElement::Kind::intercept;
        } else if (const auto* lat = std::get_if<Latent>(&e)) {
          const LatentInfo& info = spec_.latents.at(lat->name);
          ce.kind = CompiledElement::Kind::latent;
          ce.latent = level_offset[info.level] + info.index;
          ++cc.latent_count;
        } else if (const auto* fp = std::get_if<FracPoly>(&e)) {
          ce.kind = CompiledElement::Kind::fp;
          ce.fp = std::make_shared<FpBasis>(fp->powers);
          cc.vector_element = cc.elements.size();
          cc.width = ce.fp->size();
          cc.time_dependent = true;
        } else if (const auto* sp = std::get_if<Spline>(&e)) {
          ce.kind = CompiledElement::Kind::rcs;
          ce.log_time = sp->log_time;
          ce.rcs = sp->knots.empty() ? std::make_shared<RcsBasis>(default_knots(knot_source(sp->log_time), sp->df))
                                     : std::make_shared<RcsBasis>(sp->knots);
          cc.vector_element = cc.elements.size();
          cc.width = ce.rcs->size();
          cc.time_dependent = true;
        } else {
          const auto& ev = std::get<EvLink>(e);
          ce.kind = CompiledElement::Kind::ev;
          ce.ev = ev.kind;
          ce.target = spec_.resolve_target(ev);
          cc.has_ev = true;
          if (ev.kind != EvKind::ev || spec_.time_dependent(ce.target)) cc.time_dependent = true;
        }
        label += (label.empty() ? "" : "#") + element_label(e);
        cc.elements.push_back(std::move(ce));
      }
      cc.label = label;

      auto names_for = [&](const std::string& base) {
        std::vector<std::string> names;
        if (cc.width == 1)
          names.push_back(base);
        else
          for (std::size_t j = 1; j <= cc.width; ++j) names.push_back(base + "_" + std::to_string(j));
        return names;
      };
      if (c.coefficient) {
        auto it = shared.find(*c.coefficient);
        if (it != shared.end()) {
          cc.coef = it->second;
        } else {
          auto names = names_for(*c.coefficient);
          cc.coef = params_.size();
          for (auto& n : names) add_param(n, Transform::identity, SlotKind::coefficient, k, ParamSlot::npos);
          shared[*c.coefficient] = cc.coef;
        }
      } else if (cc.latent_count == 0) {
        auto names = names_for(prefix + label);
        cc.coef = params_.size();
        for (auto& n : names) add_param(n, Transform::identity, SlotKind::coefficient, k, ParamSlot::npos);
      } else if (cc.width > 1) {
        throw SpecError(where + ": a multi-column fp()/rcs() term interacted with a latent effect needs an @name coefficient");
      }
      co.components.push_back(std::move(cc));
    }

    if (o.family.kind == FamilyKind::rp) {
      if (!o.family.knots.empty())
        co.rp_basis = std::make_shared<RcsBasis>(o.family.knots);
      else if (o.family.df >= 1)
        co.rp_basis = std::make_shared<RcsBasis>(default_knots(knot_source(true), o.family.df));
      else
        throw SpecError(where + ": family(rp) needs df() or knots()");
      for (std::size_t j = 1; j <= co.rp_basis->size(); ++j)
        co.baseline.push_back(add_param("_" + std::to_string(k + 1) + "_rcs" + std::to_string(j), Transform::identity,
                                        SlotKind::baseline, k, ParamSlot::npos));
    }
    if (o.constant) co.cons = add_param(prefix + "_cons", Transform::identity, SlotKind::constant, k, ParamSlot::npos);
    for (const auto& name : ancillary_names(o.family.kind, o.np))
      co.ancillary.push_back(add_param(prefix + name, name.rfind("ln", 0) == 0 ? Transform::exp : Transform::identity,
                                       SlotKind::ancillary, k, ParamSlot::npos));

    if (o.family.kind == FamilyKind::binomial) {
      if (is_integer_text(o.family.trials)) {
        co.trials_constant = std::stod(o.family.trials);
      } else {
        if (!frame_->has(o.family.trials)) throw DataError("trials column '" + o.family.trials + "' not found");
        co.trials = frame_->column(o.family.trials).data();
        for (std::size_t r : co.rows.rows)
          if (is_missing(co.trials[r])) throw DataError(where + ": missing trials at row " + std::to_string(r + 1));
      }
    }
    if (o.family.kind == FamilyKind::user) {
      const std::string& hook = !o.family.loglf.empty() ? o.family.loglf
                                : !o.family.hazard.empty() ? o.family.hazard
                                                           : o.family.cumhazard;
      co.hooks = options.registry ? options.registry->find(hook) : nullptr;
      if (!co.hooks) throw SpecError(where + ": user family hook '" + hook + "' is not registered");
      co.user_mode = !o.family.loglf.empty() ? UserMode::loglik
                     : !o.family.hazard.empty() ? UserMode::hazard
                                                : UserMode::cumhazard;
      bool ok = co.user_mode == UserMode::loglik      ? static_cast<bool>(co.hooks->loglik)
                : co.user_mode == UserMode::hazard    ? static_cast<bool>(co.hooks->log_hazard)
                                                      : static_cast<bool>(co.hooks->log_cumhazard);
      if (!ok) throw SpecError(where + ": registered family '" + hook + "' lacks the requested hook");
    }
    outcomes_.push_back(std::move(co));
  }

  for (std::size_t l = 0; l < spec_.levels.size(); ++l) {
    const LevelSpec& ls = spec_.levels[l];
    LevelLayout lv;
    lv.name = ls.name;
    lv.first_latent = level_offset[l];
    lv.dim = ls.latents.size();
    lv.covariance = ls.covariance;
    lv.kernel = ls.distribution.t ? KernelKind::t : KernelKind::normal;
    lv.df = ls.distribution.df;
    for (const auto& name : ls.latents)
      lv.log_sd.push_back(add_param("lns_" + name, Transform::exp, SlotKind::log_sd, ParamSlot::npos, l));
    if (ls.covariance == Covariance::unstructured)
      for (std::size_t i = 1; i < lv.dim; ++i)
        for (std::size_t j = 0; j < i; ++j)
          lv.chol.push_back(add_param("l_" + ls.latents[i] + "_" + ls.latents[j], Transform::identity, SlotKind::chol,
                                      ParamSlot::npos, l));
    levels_.push_back(std::move(lv));
  }
}

std::size_t Program::param_index(const std::string& name) const {
  for (std::size_t j = 0; j < params_.size(); ++j)
    if (params_[j].name == name) return j;
  throw std::out_of_range("no parameter named '" + name + "'");
}

std::vector<std::string> Program::param_names() const {
  std::vector<std::string> out;
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

std::optional<double> Program::row_time(std::size_t k, std::size_t row) const {
  const CompiledOutcome& co = outcomes_[k];
  if (co.survival && co.response) return co.response[row];
  if (co.timevar) return co.timevar[row];
  return std::nullopt;
}

double Program::time_or_row(std::size_t k, std::size_t row, std::optional<double> t) const {
  if (t) return *t;
  if (auto rt = row_time(k, row)) return *rt;
  throw std::invalid_argument("outcome " + std::to_string(k + 1) + " needs a time value at row " + std::to_string(row + 1));
}

double Program::element_scalar(std::size_t k, const CompiledElement& e, std::size_t row, std::span<const double> theta,
                               std::span<const double> b, std::optional<double> t) const {
  switch (e.kind) {
    case CompiledElement::Kind::covariate:
      return e.column[row];
    case CompiledElement::Kind::intercept:
      return 1.0;
    case CompiledElement::Kind::latent:
      if (e.latent >= b.size()) throw std::invalid_argument("missing latent assignment");
      return b[e.latent];
    case CompiledElement::Kind::ev: {
      std::optional<double> tt = t ? t : row_time(k, row);
      return ev(e.target, e.ev, row, theta, b, tt);
    }
    default:
      return 1.0;
  }
}

double Program::component_value(std::size_t k, const CompiledComponent& c, std::size_t row, std::span<const double> theta,
                                 std::span<const double> b, std::optional<double> t) const {
  double scalar = 1.0;
  for (std::size_t j = 0; j < c.elements.size(); ++j)
    if (j != c.vector_element) scalar *= element_scalar(k, c.elements[j], row, theta, b, t);
  if (c.vector_element == CompiledComponent::npos) return c.coef == CompiledComponent::npos ? scalar : scalar * theta[c.coef];

  const CompiledElement& ve = c.elements[c.vector_element];
  double time = time_or_row(k, row, t);
  double cols[64];
  std::vector<double> big;
  std::span<double> out(cols, std::min<std::size_t>(c.width, 64));
  if (c.width > 64) {
    big.resize(c.width);
    out = big;
  }
  if (ve.kind == CompiledElement::Kind::fp) {
    ve.fp->eval(time, out);
  } else {
    double x = time;
    if (ve.log_time) {
      if (!(time > 0)) throw BasisError("rcs(log) requires t > 0");
      x = std::log(time);
    }
    ve.rcs->eval(x, out);
  }
  double s = 0.0;
  if (c.coef == CompiledComponent::npos) {
    s = out[0];
  } else {
    for (std::size_t j = 0; j < c.width; ++j) s += theta[c.coef + j] * out[j];
  }
  return scalar * s;
}

double Program::linpred(std::size_t k, std::size_t row, std::span<const double> theta, std::span<const double> b,
                        std::optional<double> t) const {
  const CompiledOutcome& co = outcomes_[k];
  double eta = co.cons == CompiledOutcome::npos ? 0.0 : theta[co.cons];
  for (const auto& c : co.components) eta += component_value(k, c, row, theta, b, t);
  return eta;
}

double Program::ev(std::size_t target, EvKind kind, std::size_t row, std::span<const double> theta,
                   std::span<const double> b, std::optional<double> t) const {
  const FamilyKind fam = outcomes_[target].kind;
  auto value = [&](std::optional<double> tt) { return inverse_link(fam, linpred(target, row, theta, b, tt)); };
  if (kind == EvKind::ev) return value(t);
  double t0 = time_or_row(target, row, t);
  switch (kind) {
    case EvKind::dev: {
      double h = 1e-5 * std::max(1.0, std::abs(t0));
      return (value(t0 + h) - value(t0 - h)) / (2 * h);
    }
    case EvKind::d2ev: {
      double h = 1e-4 * std::max(1.0, std::abs(t0));
      return (value(t0 + h) - 2 * value(t0) + value(t0 - h)) / (h * h);
    }
    default:
      return gl_integrate(gl_, 0.0, t0, [&](double u) { return value(u); });
  }
}

double Program::row_logl(std::size_t k, std::size_t i, std::span<const double> theta, std::span<const double> b) const {
  const CompiledOutcome& co = outcomes_[k];
  const std::size_t row = co.rows.rows[i];
  const double y = co.rows.response[i];
  const double anc = co.ancillary.empty() ? 0.0 : theta[co.ancillary[0]];

  try {
    if (co.kind == FamilyKind::user && co.user_mode == UserMode::loglik) {
      RowContext ctx(*this, k, i, theta, b);
      return co.hooks->loglik(ctx);
    }
    if (!co.survival) {
      double trials = co.trials ? co.trials[row] : co.trials_constant;
      return logl_from_eta(co.kind, y, linpred(k, row, theta, b), anc, trials);
    }

    SurvivalRecord rec{y, co.rows.event[i], co.rows.entry[i], co.rows.bhazard[i]};
    auto eta_at = [&](double t) { return linpred(k, row, theta, b, t); };

    if (co.kind == FamilyKind::rp) {
      std::vector<double> gamma(co.baseline.size());
      for (std::size_t j = 0; j < gamma.size(); ++j) gamma[j] = theta[co.baseline[j]];
      if (co.time_dependent) return rp_logl(rec, *co.rp_basis, gamma, std::function<double(double)>(eta_at));
      return rp_logl(rec, *co.rp_basis, gamma, linpred(k, row, theta, b));
    }

    if (co.kind == FamilyKind::user) {
      RowContext ctx(*this, k, i, theta, b);
      if (co.user_mode == UserMode::hazard) {
        auto log_h = [&](double t) {
          ctx.set_time(t);
          return co.hooks->log_hazard(ctx);
        };
        if (co.hooks->log_cumhazard) {
          auto H = [&](double t) {
            ctx.set_time(t);
            return std::exp(co.hooks->log_cumhazard(ctx));
          };
          double out = -H(rec.y) + (rec.t0 > 0 ? H(rec.t0) : 0.0);
          if (rec.d == 1) {
            double lh = log_h(rec.y);
            out += rec.bhazard > 0 ? std::log(std::exp(lh) + rec.bhazard) : lh;
          }
          return out;
        }
        return hazard_quadrature_logl(rec, log_h, gl_);
      }
      // cumulative hazard only: hazard by central differences
      auto H = [&](double t) {
        ctx.set_time(t);
        return std::exp(co.hooks->log_cumhazard(ctx));
      };
      double out = -H(rec.y) + (rec.t0 > 0 ? H(rec.t0) : 0.0);
      if (rec.d == 1) {
        double h = std::min(1e-5 * std::max(1.0, rec.y), 0.5 * rec.y);
        double haz = (H(rec.y + h) - H(rec.y - h)) / (2 * h);
        if (!(haz + rec.bhazard > 0)) return kNaN;
        out += std::log(haz + rec.bhazard);
      }
      return out;
    }

    if (co.time_dependent) {
      FamilyKind kind = co.kind;
      return hazard_quadrature_logl(
          rec, [&](double t) { return surv_log_hazard(kind, t, eta_at(t), anc); }, gl_);
    }
    return surv_logl(rec, co.kind, linpred(k, row, theta, b), anc);
  } catch (const std::domain_error&) {
    return kNaN;
  }
}

Eigen::MatrixXd Program::level_chol(std::size_t l, std::span<const double> theta) const {
  const LevelLayout& lv = levels_[l];
  const auto r = static_cast<Eigen::Index>(lv.dim);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(r, r);
  for (Eigen::Index i = 0; i < r; ++i) L(i, i) = std::exp(theta[lv.log_sd[static_cast<std::size_t>(i)]]);
  std::size_t p = 0;
  if (!lv.chol.empty())
    for (Eigen::Index i = 1; i < r; ++i)
      for (Eigen::Index j = 0; j < i; ++j) L(i, j) = theta[lv.chol[p++]];
  return L;
}

std::unique_ptr<Program> compile(const ModelSpec& spec, const DataFrame& frame, const CompileOptions& options) {
  return std::make_unique<Program>(spec, frame, options);
}

double eval_linpred(const Program& program, std::size_t k, std::size_t row, std::span<const double> theta,
                    std::span<const double> b, std::optional<double> t) {
  return program.linpred(k, row, theta, b, t);
}

double eval_ev(const Program& program, std::size_t target, EvKind kind, std::size_t row, std::span<const double> theta,
               std::span<const double> b, std::optional<double> t) {
  return program.ev(target, kind, row, theta, b, t);
}

}  // namespace mlgm
