#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlgm/basis.hpp"
#include "mlgm/dsl.hpp"
#include "mlgm/integrate.hpp"

namespace mlgm {

// Densities on the mean scale. Domain violations throw std::domain_error.
double logl_gaussian(double y, double mu, double sigma);
double logl_poisson(double y, double mu);
double logl_bernoulli(double y, double mu);
double logl_binomial(double y, double mu, double k);
double logl_beta(double y, double mu, double s);
double logl_negbin(double y, double mu, double alpha);

/// Same densities written in terms of the linear predictor, without domain
/// checks. `anc` is the family's ancillary on the estimation scale (log
/// sigma, log precision, log alpha); `trials` is used by binomial only.
double logl_from_eta(FamilyKind kind, double y, double eta, double anc, double trials);

/// g^-1 for the default link of each family (identity for null and user).
double inverse_link(FamilyKind kind, double eta);

struct SurvivalRecord {
  double y = 0;
  double d = 0;
  double t0 = 0;
  double bhazard = 0;
};

/// Closed-form survival families: exponential, weibull, gompertz, lognormal,
/// loglogistic. `anc` is log gamma (weibull, loglogistic), gamma (gompertz)
/// or log sigma (lognormal); ignored for exponential.
double surv_log_hazard(FamilyKind kind, double t, double eta, double anc);
double surv_cum_hazard(FamilyKind kind, double t, double eta, double anc);

/// d log(h(y) + h*) - H(y) + H(t0).
double surv_logl(const SurvivalRecord& rec, FamilyKind kind, double eta, double anc);

/// Same contribution with both cumulative hazards computed by
/// gl_integrate_origin of exp(log_hazard).
double hazard_quadrature_logl(const SurvivalRecord& rec, const std::function<double(double)>& log_hazard,
                              const GlRule& rule);

/// Royston-Parmar: log H(t) = s(log t) + eta. `gamma` holds the spline
/// coefficients in basis column order.
double rp_logl(const SurvivalRecord& rec, const RcsBasis& basis, std::span<const double> gamma, double eta);
/// Time-dependent eta; dη/d log t is taken by central differences.
double rp_logl(const SurvivalRecord& rec, const RcsBasis& basis, std::span<const double> gamma,
               const std::function<double(double)>& eta);

/// Number and names of ancillary parameters per family (user: np slots).
std::vector<std::string> ancillary_names(FamilyKind kind, int np);

/// What a user-defined family sees for the observation being evaluated.
class UserContext {
 public:
  virtual ~UserContext() = default;
  virtual double response() const = 0;
  /// Linear predictor of the current outcome (at time() when set).
  virtual double linpred() const = 0;
  /// Linear predictor of outcome `outcome` (1-based) at the same row and time.
  virtual double linpred_of(std::size_t outcome) const = 0;
  /// Ancillary parameter `j` (1-based) on the estimation scale.
  virtual double ancillary(std::size_t j) const = 0;
  /// Time at which a hazard hook is evaluated.
  virtual std::optional<double> time() const = 0;
  virtual double column(std::string_view name) const = 0;
  virtual std::size_t row() const = 0;
};

struct UserFamilyHooks {
  std::function<double(const UserContext&)> loglik;
  std::function<double(const UserContext&)> log_hazard;
  std::function<double(const UserContext&)> log_cumhazard;
};

class FamilyRegistry {
 public:
  /// Adds or replaces a named hook set; returns the name.
  std::string add(std::string name, UserFamilyHooks hooks);
  const UserFamilyHooks* find(std::string_view name) const;

 private:
  std::map<std::string, UserFamilyHooks, std::less<>> hooks_;
};

}  // namespace mlgm
