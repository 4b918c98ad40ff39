#include "mlgm/likelihood.hpp"

#include <cmath>
#include <limits>
#include <thread>

namespace mlgm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Obs {
  std::size_t k;
  std::size_t i;
};

class Accumulator {
 public:
  void add(double v) {
    double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0, comp_ = 0.0;
};

// Per-outcome quantities that depend on theta but not on the latent effects.
struct FastOutcome {
  enum class Form { generic, glm, ph, aft };
  Form form = Form::generic;
  std::vector<std::size_t> latent_components;
  std::vector<std::size_t> slots;
  std::vector<double> fixed, Z, logh0, B, trials;
  double anc = 0.0;
};

}  // namespace

double compensated_sum(std::span<const double> values) {
  Accumulator acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

IntegrationPlan default_plan(const Program& program, int points, int draws) {
  IntegrationPlan plan;
  for (const auto& lv : program.levels()) {
    LevelPlan lp;
    lp.points = points;
    lp.draws = draws;
    if (lv.kernel == KernelKind::t) lp.method = Method::qmc;
    plan.levels.push_back(lp);
  }
  return plan;
}

void check_plan(const Program& program, const IntegrationPlan& plan) {
  const auto& levels = program.levels();
  if (plan.levels.size() != levels.size())
    throw IntegrationError("integration plan has " + std::to_string(plan.levels.size()) + " levels, model has " +
                           std::to_string(levels.size()));
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const LevelPlan& lp = plan.levels[l];
    const LevelLayout& lv = levels[l];
    std::string where = "level " + lv.name + ": ";
    if (lp.method == Method::aghq) {
      if (lp.points < 1) throw IntegrationError(where + "quadrature needs at least one point");
      if (lv.kernel == KernelKind::t) {
        if (lv.dim > 2) throw IntegrationError(where + "t-distributed effects with more than 2 dimensions need qmc");
        if (lp.adaptive && lp.points >= 2 && lv.df <= 2)
          throw IntegrationError(where + "adaptive quadrature needs t df > 2; use qmc");
      }
      if (product_size(static_cast<std::size_t>(lp.points), lv.dim) > 50000000)
        throw IntegrationError(where + "too many quadrature nodes; reduce points or use qmc");
    } else if (lp.draws < 0) {
      throw IntegrationError(where + "draws must be positive");
    }
  }
}

struct MarginalLikelihood::Impl {
  const Program& p;
  const IntegrationPlan& plan;
  int threads = 1;
  std::size_t depth = 0;
  std::vector<std::vector<Obs>> leaf_obs;
  std::vector<FastOutcome> fast;
  std::vector<GhRule> rules;
  std::vector<Eigen::MatrixXd> standard;  // QMC standard draws per level
  std::vector<std::vector<AdaptState>> cache;

  // Per call.
  std::span<const double> theta;
  std::vector<ReKernel> kernels;
  std::vector<Eigen::MatrixXd> draws;

  std::size_t calls = 0, last_evals = 0, fallbacks = 0;
  std::vector<int> adapt_iters;

  Impl(const Program& program, const IntegrationPlan& pl, int th) : p(program), plan(pl), threads(std::max(1, th)) {
    const Hierarchy& h = p.hierarchy();
    depth = h.depth();
    if (depth == 0) {
      leaf_obs.resize(1);
    } else {
      leaf_obs.resize(h.unit_count(depth - 1));
    }
    for (std::size_t k = 0; k < p.outcomes().size(); ++k) {
      const auto& co = p.outcomes()[k];
      for (std::size_t i = 0; i < co.rows.size(); ++i) {
        std::size_t leaf = depth == 0 ? 0 : h.row_leaf[co.rows.rows[i]];
        leaf_obs[leaf].push_back({k, i});
      }
    }
    // Deterministic order within a unit: by data row, then outcome.
    for (auto& obs : leaf_obs)
      std::stable_sort(obs.begin(), obs.end(), [&](const Obs& a, const Obs& b) {
        std::size_t ra = p.outcomes()[a.k].rows.rows[a.i], rb = p.outcomes()[b.k].rows.rows[b.i];
        return ra != rb ? ra < rb : a.k < b.k;
      });

    fast.resize(p.outcomes().size());
    for (std::size_t k = 0; k < p.outcomes().size(); ++k) {
      const auto& co = p.outcomes()[k];
      FastOutcome& fo = fast[k];
      bool eligible = co.kind != FamilyKind::user && !(co.survival && co.time_dependent);
      for (const auto& c : co.components)
        if (c.has_ev || c.latent_count > 1) eligible = false;
      if (!eligible) continue;
      switch (co.kind) {
        case FamilyKind::exponential:
        case FamilyKind::weibull:
        case FamilyKind::gompertz:
        case FamilyKind::rp:
          fo.form = FastOutcome::Form::ph;
          break;
        case FamilyKind::lognormal:
        case FamilyKind::loglogistic:
          fo.form = FastOutcome::Form::aft;
          break;
        default:
          fo.form = FastOutcome::Form::glm;
      }
      for (std::size_t c = 0; c < co.components.size(); ++c) {
        if (co.components[c].latent_count == 0) continue;
        fo.latent_components.push_back(c);
        for (const auto& e : co.components[c].elements)
          if (e.kind == CompiledElement::Kind::latent) fo.slots.push_back(e.latent);
      }
      if (co.kind == FamilyKind::binomial)
        for (std::size_t r : co.rows.rows) fo.trials.push_back(co.trials ? co.trials[r] : co.trials_constant);
    }

    rules.resize(depth);
    standard.resize(depth);
    std::size_t prime_offset = 0;
    for (std::size_t l = 0; l < depth; ++l) {
      const LevelPlan& lp = plan.levels[l];
      const LevelLayout& lv = p.levels()[l];
      if (lp.method == Method::aghq) {
        rules[l] = gh_rule(lp.points);
      } else {
        std::size_t M = lp.draws > 0 ? static_cast<std::size_t>(lp.draws) : 150 * lv.dim;
        std::size_t dims = lv.dim + (lv.kernel == KernelKind::t ? 1 : 0);
        standard[l] = standard_draws(lv.kernel, lv.df, halton(M, dims, plan.skip, prime_offset));
        prime_offset += dims;
      }
    }
    std::size_t top = depth == 0 ? 1 : h.unit_count(0);
    cache.resize(top);
    adapt_iters.assign(top, 0);
  }

  void prepare(std::span<const double> th) {
    theta = th;
    kernels.resize(depth);
    draws.resize(depth);
    for (std::size_t l = 0; l < depth; ++l) {
      const LevelLayout& lv = p.levels()[l];
      kernels[l] = ReKernel{lv.kernel, lv.df, p.level_chol(l, th)};
      if (plan.levels[l].method == Method::qmc) draws[l] = transform_points(kernels[l], standard[l]);
    }
    std::vector<double> b(p.latent_count(), 0.0);
    for (std::size_t k = 0; k < fast.size(); ++k) {
      FastOutcome& fo = fast[k];
      if (fo.form == FastOutcome::Form::generic) continue;
      const auto& co = p.outcomes()[k];
      const std::size_t n = co.rows.size(), C = fo.latent_components.size();
      fo.fixed.assign(n, 0.0);
      fo.Z.assign(n * C, 0.0);
      fo.anc = co.ancillary.empty() ? 0.0 : th[co.ancillary[0]];
      std::size_t lc = 0;
      for (std::size_t c = 0; c < co.components.size(); ++c) {
        const auto& comp = co.components[c];
        if (comp.latent_count == 0) {
          for (std::size_t i = 0; i < n; ++i) fo.fixed[i] += p.component_value(k, comp, co.rows.rows[i], th, b, std::nullopt);
        } else {
          std::size_t s = fo.slots[lc];
          b[s] = 1.0;
          for (std::size_t i = 0; i < n; ++i)
            fo.Z[i * C + lc] = p.component_value(k, comp, co.rows.rows[i], th, b, std::nullopt);
          b[s] = 0.0;
          ++lc;
        }
      }
      if (co.cons != CompiledOutcome::npos)
        for (auto& f : fo.fixed) f += th[co.cons];

      if (fo.form != FastOutcome::Form::ph) continue;
      fo.logh0.assign(n, 0.0);
      fo.B.assign(n, 0.0);
      if (co.kind == FamilyKind::rp) {
        const RcsBasis& basis = *co.rp_basis;
        std::vector<double> col(basis.size());
        auto spline = [&](double x, bool deriv) {
          if (deriv)
            basis.deriv(x, col);
          else
            basis.eval(x, col);
          double s = 0.0;
          for (std::size_t j = 0; j < col.size(); ++j) s += th[co.baseline[j]] * col[j];
          return s;
        };
        for (std::size_t i = 0; i < n; ++i) {
          double y = co.rows.response[i], t0 = co.rows.entry[i], x = std::log(y);
          double sy = spline(x, false);
          fo.B[i] = std::exp(sy) - (t0 > 0 ? std::exp(spline(std::log(t0), false)) : 0.0);
          if (co.rows.event[i] == 1) {
            double ds = spline(x, true);
            fo.logh0[i] = ds > 0 ? sy + std::log(ds) - x : kNaN;
          }
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          double y = co.rows.response[i], t0 = co.rows.entry[i];
          fo.B[i] = surv_cum_hazard(co.kind, y, 0.0, fo.anc) - surv_cum_hazard(co.kind, t0, 0.0, fo.anc);
          if (co.rows.event[i] == 1) fo.logh0[i] = surv_log_hazard(co.kind, y, 0.0, fo.anc);
        }
      }
    }
  }

  double row_value(const Obs& o, std::span<const double> b) const {
    const FastOutcome& fo = fast[o.k];
    if (fo.form == FastOutcome::Form::generic) return p.row_logl(o.k, o.i, theta, b);
    const auto& co = p.outcomes()[o.k];
    const std::size_t C = fo.latent_components.size();
    double eta = fo.fixed[o.i];
    for (std::size_t c = 0; c < C; ++c) eta += fo.Z[o.i * C + c] * b[fo.slots[c]];
    const double y = co.rows.response[o.i];
    switch (fo.form) {
      case FastOutcome::Form::glm:
        return logl_from_eta(co.kind, y, eta, fo.anc, fo.trials.empty() ? 1.0 : fo.trials[o.i]);
      case FastOutcome::Form::ph: {
        double out = -std::exp(eta) * fo.B[o.i];
        if (co.rows.event[o.i] == 1) {
          double lh = eta + fo.logh0[o.i];
          double bh = co.rows.bhazard[o.i];
          out += bh > 0 ? std::log(std::exp(lh) + bh) : lh;
        }
        return out;
      }
      default: {
        SurvivalRecord rec{y, co.rows.event[o.i], co.rows.entry[o.i], co.rows.bhazard[o.i]};
        return surv_logl(rec, co.kind, eta, fo.anc);
      }
    }
  }

  struct Worker {
    Impl& im;
    std::vector<double> b;
    std::size_t evals = 0;
    std::size_t fallbacks = 0;
    int iters = 0;
    std::vector<AdaptState>* cache = nullptr;
    std::size_t cursor = 0;

    explicit Worker(Impl& impl) : im(impl), b(impl.p.latent_count(), 0.0) {}

    double leaf(std::size_t u) {
      ++evals;
      Accumulator acc;
      for (const Obs& o : im.leaf_obs[u]) acc.add(im.row_value(o, b));
      return acc.value();
    }

    double unit(std::size_t d, std::size_t u, AdaptMode mode) {
      const LevelLayout& lv = im.p.levels()[d];
      const LevelPlan& lp = im.plan.levels[d];
      const auto& children = im.p.hierarchy().units[d][u].children;
      auto inner = [&](const double* bv, AdaptMode m) {
        for (std::size_t j = 0; j < lv.dim; ++j) b[lv.first_latent + j] = bv[j];
        if (d + 1 == im.depth) return leaf(u);
        Accumulator acc;
        for (std::size_t c : children) acc.add(unit(d + 1, c, m));
        return acc.value();
      };

      if (lp.method == Method::qmc) {
        const Eigen::MatrixXd& D = im.draws[d];
        const auto M = static_cast<std::size_t>(D.rows());
        std::vector<double> terms(M);
        std::vector<double> bv(lv.dim);
        for (std::size_t m = 0; m < M; ++m) {
          for (std::size_t j = 0; j < lv.dim; ++j)
            bv[j] = D(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j));
          terms[m] = inner(bv.data(), mode);
        }
        return log_sum_exp(terms) - std::log(static_cast<double>(M));
      }

      const ReKernel& kernel = im.kernels[d];
      const GhRule& rule = im.rules[d];
      auto as_fn = [&](AdaptMode m) {
        return LogIntegrand([&, m](const Eigen::VectorXd& bv) { return inner(bv.data(), m); });
      };
      AdaptState state;
      if (!lp.adaptive) {
        state = prior_state(kernel);
      } else if (mode == AdaptMode::replay && cache && cursor < cache->size()) {
        state = (*cache)[cursor++];
      } else {
        state = adapt_locations(as_fn(AdaptMode::fresh), kernel, rule);
        iters += state.iterations;
        if (state.fallback) ++fallbacks;
        if (mode == AdaptMode::record && cache) cache->push_back(state);
      }
      return log_integral_gh(as_fn(mode), kernel, rule, state);
    }

    double top(std::size_t u, AdaptMode mode) {
      if (im.depth == 0) return leaf(0);
      cache = &im.cache[u];
      cursor = 0;
      if (mode == AdaptMode::record) cache->clear();
      iters = 0;
      double v = unit(0, u, mode);
      if (mode != AdaptMode::replay) im.adapt_iters[u] = iters;
      return v;
    }
  };

  double evaluate(std::span<const double> th, AdaptMode mode) {
    prepare(th);
    ++calls;
    std::size_t top = depth == 0 ? 1 : p.hierarchy().unit_count(0);
    std::vector<double> values(top, 0.0);
    std::size_t T = std::min<std::size_t>(static_cast<std::size_t>(threads), top);
    std::vector<Worker> workers;
    for (std::size_t w = 0; w < std::max<std::size_t>(T, 1); ++w) workers.emplace_back(*this);
    if (T <= 1) {
      for (std::size_t u = 0; u < top; ++u) values[u] = workers[0].top(u, mode);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(T);
      for (std::size_t w = 0; w < T; ++w)
        pool.emplace_back([&, w] {
          try {
            for (std::size_t u = w; u < top; u += T) values[u] = workers[w].top(u, mode);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    last_evals = 0;
    for (const auto& w : workers) {
      last_evals += w.evals;
      fallbacks += w.fallbacks;
    }
    for (double v : values)
      if (!std::isfinite(v)) return kNaN;
    return compensated_sum(values);
  }
};

MarginalLikelihood::MarginalLikelihood(const Program& program, IntegrationPlan plan, int threads)
    : program_(program), plan_(std::move(plan)) {
  check_plan(program_, plan_);
  impl_ = std::make_unique<Impl>(program_, plan_, threads);
}

MarginalLikelihood::~MarginalLikelihood() = default;

double MarginalLikelihood::operator()(std::span<const double> theta, AdaptMode mode) {
  if (theta.size() != program_.param_count())
    throw std::invalid_argument("parameter vector has " + std::to_string(theta.size()) + " entries, model has " +
                                std::to_string(program_.param_count()));
  return impl_->evaluate(theta, mode);
}

double MarginalLikelihood::conditional(std::span<const double> theta, const std::vector<bool>& outcomes) const {
  std::vector<double> b(program_.latent_count(), 0.0);
  Accumulator acc;
  for (std::size_t k = 0; k < program_.outcomes().size(); ++k) {
    if (k < outcomes.size() && !outcomes[k]) continue;
    for (std::size_t i = 0; i < program_.outcomes()[k].rows.size(); ++i) acc.add(program_.row_logl(k, i, theta, b));
  }
  double v = acc.value();
  return std::isfinite(v) ? v : kNaN;
}

ProfileReport MarginalLikelihood::profile() const {
  ProfileReport rep;
  const Hierarchy& h = program_.hierarchy();
  for (std::size_t l = 0; l < program_.levels().size(); ++l) {
    const LevelLayout& lv = program_.levels()[l];
    const LevelPlan& lp = plan_.levels[l];
    LevelProfile lpf;
    lpf.name = lv.name;
    lpf.dims = lv.dim;
    lpf.units = h.unit_count(l);
    if (lp.method == Method::aghq) {
      lpf.method = lp.adaptive && lp.points >= 2 ? "aghq" : "ghq";
      lpf.nodes_per_unit = product_size(static_cast<std::size_t>(lp.points), lv.dim);
    } else {
      lpf.method = "qmc";
      lpf.nodes_per_unit = lp.draws > 0 ? static_cast<std::size_t>(lp.draws) : 150 * lv.dim;
    }
    rep.levels.push_back(lpf);
  }
  rep.likelihood_calls = impl_->calls;
  rep.conditional_evaluations = impl_->last_evals;
  rep.adaptation_iterations = impl_->adapt_iters;
  rep.adaptation_fallbacks = impl_->fallbacks;
  return rep;
}

double marginal_logl(const Program& program, const IntegrationPlan& plan, std::span<const double> theta) {
  MarginalLikelihood ml(program, plan);
  return ml(theta);
}

ProfileReport profile_report(const Program& program, const IntegrationPlan& plan, std::span<const double> theta) {
  MarginalLikelihood ml(program, plan);
  ml(theta);
  return ml.profile();
}

}  // namespace mlgm
