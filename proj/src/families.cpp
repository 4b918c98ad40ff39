#include "mlgm/families.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mlgm {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void require(bool ok, const std::string& what) {
  if (!ok) throw std::domain_error(what);
}

bool is_integer(double y) { return std::isfinite(y) && std::floor(y) == y; }

// log(1 - Phi(z)), accurate far into the upper tail.
double log_normal_sf(double z) {
  if (z < 30) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  double z2 = z * z;
  return -kLogSqrt2Pi - 0.5 * z2 - std::log(z) + std::log1p(-1 / z2 + 3 / (z2 * z2) - 15 / (z2 * z2 * z2));
}

// (exp(g t) - 1) / g, continuous through g = 0.
double gompertz_integral(double g, double t) {
  if (std::abs(g) < 1e-5) return t + g * t * t / 2 + g * g * t * t * t / 6;
  return std::expm1(g * t) / g;
}

void check_record(const SurvivalRecord& r) {
  require(r.y > 0, "survival time must be positive");
  require(r.t0 >= 0 && r.t0 < r.y, "entry time must satisfy 0 <= t0 < y");
  require(r.d == 0 || r.d == 1, "event indicator must be 0 or 1");
}

double event_term(const SurvivalRecord& r, double log_h) {
  if (r.d == 0) return 0.0;
  if (r.bhazard > 0) return std::log(std::exp(log_h) + r.bhazard);
  return log_h;
}

}  // namespace

double logl_gaussian(double y, double mu, double sigma) {
  require(sigma > 0, "gaussian sigma must be positive");
  double z = (y - mu) / sigma;
  return -kLogSqrt2Pi - std::log(sigma) - 0.5 * z * z;
}

double logl_poisson(double y, double mu) {
  require(mu > 0, "poisson mean must be positive");
  require(is_integer(y) && y >= 0, "poisson response must be a non-negative integer");
  return -mu + y * std::log(mu) - std::lgamma(y + 1);
}

double logl_bernoulli(double y, double mu) {
  require(mu > 0 && mu < 1, "bernoulli probability must lie in (0, 1)");
  require(y == 0 || y == 1, "bernoulli response must be 0 or 1");
  return y == 1 ? std::log(mu) : std::log1p(-mu);
}

double logl_binomial(double y, double mu, double k) {
  require(mu > 0 && mu < 1, "binomial probability must lie in (0, 1)");
  require(is_integer(k) && k >= 0, "binomial trials must be a non-negative integer");
  require(is_integer(y) && y >= 0 && y <= k, "binomial response must be an integer in [0, trials]");
  return std::lgamma(k + 1) - std::lgamma(y + 1) - std::lgamma(k - y + 1) + y * std::log(mu) +
         (k - y) * std::log1p(-mu);
}

double logl_beta(double y, double mu, double s) {
  require(mu > 0 && mu < 1, "beta mean must lie in (0, 1)");
  require(s > 0, "beta precision must be positive");
  require(y >= 0 && y <= 1, "beta response must lie in [0, 1]");
  double a = mu * s, b = (1 - mu) * s;
  return std::lgamma(s) - std::lgamma(a) - std::lgamma(b) + (a - 1) * std::log(y) + (b - 1) * std::log1p(-y);
}

double logl_negbin(double y, double mu, double alpha) {
  require(mu > 0 && alpha > 0, "negative binomial mean and alpha must be positive");
  require(is_integer(y) && y >= 0, "negative binomial response must be a non-negative integer");
  double m = 1 / alpha;
  double log1p_am = std::log1p(alpha * mu);
  // lgamma(y + m) - lgamma(m) + y log(alpha) as a sum of log1p terms, which
  // stays accurate as alpha -> 0.
  double ratio = 0.0;
  if (y < 1e4)
    for (double j = 0; j < y; ++j) ratio += std::log1p(alpha * j);
  else
    ratio = std::lgamma(y + m) - std::lgamma(m) + y * std::log(alpha);
  return ratio - std::lgamma(y + 1) + y * std::log(mu) - (m + y) * log1p_am;
}

double logl_from_eta(FamilyKind kind, double y, double eta, double anc, double trials) {
  switch (kind) {
    case FamilyKind::gaussian: {
      double z = (y - eta) * std::exp(-anc);
      return -kLogSqrt2Pi - anc - 0.5 * z * z;
    }
    case FamilyKind::poisson:
      return -std::exp(eta) + y * eta - std::lgamma(y + 1);
    case FamilyKind::bernoulli:
      return y * eta - softplus(eta);
    case FamilyKind::binomial:
      return std::lgamma(trials + 1) - std::lgamma(y + 1) - std::lgamma(trials - y + 1) + y * eta -
             trials * softplus(eta);
    case FamilyKind::beta: {
      double s = std::exp(anc);
      double mu = 1 / (1 + std::exp(-eta));
      double a = mu * s, b = (1 - mu) * s;
      return std::lgamma(s) - std::lgamma(a) - std::lgamma(b) + (a - 1) * std::log(y) + (b - 1) * std::log1p(-y);
    }
    case FamilyKind::negbinomial: {
      double alpha = std::exp(anc), m = 1 / alpha;
      // log p = -log(1 + alpha mu), log(1 - p) = log(alpha mu) + log p
      double log_p = -softplus(anc + eta);
      return std::lgamma(y + m) - std::lgamma(y + 1) - std::lgamma(m) + m * log_p + y * (anc + eta + log_p);
    }
    case FamilyKind::null:
      return 0.0;
    default:
      throw std::invalid_argument("logl_from_eta: " + std::string(family_name(kind)) + " is not a mean-scale family");
  }
}

double inverse_link(FamilyKind kind, double eta) {
  switch (kind) {
    case FamilyKind::poisson:
    case FamilyKind::negbinomial:
      return std::exp(eta);
    case FamilyKind::bernoulli:
    case FamilyKind::binomial:
    case FamilyKind::beta:
      return 1 / (1 + std::exp(-eta));
    default:
      return eta;
  }
}

double surv_log_hazard(FamilyKind kind, double t, double eta, double anc) {
  switch (kind) {
    case FamilyKind::exponential:
      return eta;
    case FamilyKind::weibull:
      return eta + anc + (std::exp(anc) - 1) * std::log(t);
    case FamilyKind::gompertz:
      return eta + anc * t;
    case FamilyKind::lognormal: {
      double sigma = std::exp(anc);
      double z = (std::log(t) - eta) / sigma;
      return -kLogSqrt2Pi - 0.5 * z * z - anc - std::log(t) - log_normal_sf(z);
    }
    case FamilyKind::loglogistic: {
      double u = (std::log(t) - eta) * std::exp(-anc);
      return -anc - std::log(t) + u - softplus(u);
    }
    default:
      throw std::invalid_argument(std::string(family_name(kind)) + " has no closed-form hazard");
  }
}

double surv_cum_hazard(FamilyKind kind, double t, double eta, double anc) {
  if (t <= 0) return 0.0;
  switch (kind) {
    case FamilyKind::exponential:
      return std::exp(eta) * t;
    case FamilyKind::weibull:
      return std::exp(eta + std::exp(anc) * std::log(t));
    case FamilyKind::gompertz:
      return std::exp(eta) * gompertz_integral(anc, t);
    case FamilyKind::lognormal:
      return -log_normal_sf((std::log(t) - eta) / std::exp(anc));
    case FamilyKind::loglogistic:
      return softplus((std::log(t) - eta) * std::exp(-anc));
    default:
      throw std::invalid_argument(std::string(family_name(kind)) + " has no closed-form cumulative hazard");
  }
}

double surv_logl(const SurvivalRecord& rec, FamilyKind kind, double eta, double anc) {
  check_record(rec);
  double out = -surv_cum_hazard(kind, rec.y, eta, anc) + surv_cum_hazard(kind, rec.t0, eta, anc);
  if (rec.d == 1) out += event_term(rec, surv_log_hazard(kind, rec.y, eta, anc));
  return out;
}

double hazard_quadrature_logl(const SurvivalRecord& rec, const std::function<double(double)>& log_hazard,
                              const GlRule& rule) {
  check_record(rec);
  auto h = [&](double t) {
    double v = std::exp(log_hazard(t));
    if (!std::isfinite(v)) throw std::domain_error("non-finite hazard at t = " + std::to_string(t));
    return v;
  };
  double out = -gl_integrate_origin(rule, rec.y, h);
  if (rec.t0 > 0) out += gl_integrate_origin(rule, rec.t0, h);
  if (rec.d == 1) out += event_term(rec, log_hazard(rec.y));
  return out;
}

namespace {

double spline_value(const RcsBasis& basis, std::span<const double> gamma, double x, bool derivative) {
  std::vector<double> col(basis.size());
  if (derivative)
    basis.deriv(x, col);
  else
    basis.eval(x, col);
  double s = 0.0;
  for (std::size_t j = 0; j < col.size(); ++j) s += gamma[j] * col[j];
  return s;
}

double rp_finish(const SurvivalRecord& rec, double log_H_y, double log_H_t0, double dlogH_dlogt) {
  double out = -std::exp(log_H_y);
  if (rec.t0 > 0) out += std::exp(log_H_t0);
  if (rec.d == 1) {
    if (!(dlogH_dlogt > 0)) return kNaN;
    out += event_term(rec, log_H_y + std::log(dlogH_dlogt) - std::log(rec.y));
  }
  return out;
}

}  // namespace

double rp_logl(const SurvivalRecord& rec, const RcsBasis& basis, std::span<const double> gamma, double eta) {
  check_record(rec);
  double x = std::log(rec.y);
  double log_H_y = spline_value(basis, gamma, x, false) + eta;
  double log_H_t0 = rec.t0 > 0 ? spline_value(basis, gamma, std::log(rec.t0), false) + eta : 0.0;
  double ds = rec.d == 1 ? spline_value(basis, gamma, x, true) : 0.0;
  return rp_finish(rec, log_H_y, log_H_t0, ds);
}

double rp_logl(const SurvivalRecord& rec, const RcsBasis& basis, std::span<const double> gamma,
               const std::function<double(double)>& eta) {
  check_record(rec);
  double x = std::log(rec.y);
  double log_H_y = spline_value(basis, gamma, x, false) + eta(rec.y);
  double log_H_t0 = rec.t0 > 0 ? spline_value(basis, gamma, std::log(rec.t0), false) + eta(rec.t0) : 0.0;
  double slope = 0.0;
  if (rec.d == 1) {
    double h = 1e-5 * std::max(1.0, std::abs(x));
    double deta = (eta(std::exp(x + h)) - eta(std::exp(x - h))) / (2 * h);
    slope = spline_value(basis, gamma, x, true) + deta;
  }
  return rp_finish(rec, log_H_y, log_H_t0, slope);
}

std::vector<std::string> ancillary_names(FamilyKind kind, int np) {
  switch (kind) {
    case FamilyKind::gaussian:
    case FamilyKind::lognormal:
      return {"lnsigma"};
    case FamilyKind::weibull:
    case FamilyKind::loglogistic:
      return {"lngamma"};
    case FamilyKind::gompertz:
      return {"gamma"};
    case FamilyKind::beta:
      return {"lns"};
    case FamilyKind::negbinomial:
      return {"lnalpha"};
    case FamilyKind::user: {
      std::vector<std::string> out;
      for (int j = 1; j <= np; ++j) out.push_back("anc" + std::to_string(j));
      return out;
    }
    default:
      return {};
  }
}

std::string FamilyRegistry::add(std::string name, UserFamilyHooks hooks) {
  if (!hooks.loglik && !hooks.log_hazard && !hooks.log_cumhazard)
    throw std::invalid_argument("user family '" + name + "' has no hooks");
  hooks_[name] = std::move(hooks);
  return name;
}

const UserFamilyHooks* FamilyRegistry::find(std::string_view name) const {
  auto it = hooks_.find(name);
  return it == hooks_.end() ? nullptr : &it->second;
}

}  // namespace mlgm
