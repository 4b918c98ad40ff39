#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mlgm/integrate.hpp"
#include "mlgm/predictor.hpp"

namespace mlgm {

enum class Method { aghq, qmc };

struct LevelPlan {
  Method method = Method::aghq;
  int points = 7;      // AGHQ points per dimension
  int draws = 0;       // QMC draws; 0 means 150 per dimension
  bool adaptive = true;
};

struct IntegrationPlan {
  std::vector<LevelPlan> levels;  // outermost first, one per cluster level
  std::size_t skip = 15;          // Halton burn-in
};

/// AGHQ with `points` at every normal level; t levels default to QMC.
IntegrationPlan default_plan(const Program& program, int points = 7, int draws = 0);

/// Throws IntegrationError when the plan does not fit the program.
void check_plan(const Program& program, const IntegrationPlan& plan);

/// How AGHQ locations are obtained for this evaluation: adapted afresh,
/// adapted and stored per unit, or taken from the stored states.
enum class AdaptMode { fresh, record, replay };

struct LevelProfile {
  std::string name;
  std::string method;
  std::size_t dims = 0;
  std::size_t nodes_per_unit = 0;
  std::size_t units = 0;
};

struct ProfileReport {
  std::vector<LevelProfile> levels;
  std::size_t likelihood_calls = 0;
  std::size_t conditional_evaluations = 0;  // during the most recent call
  std::vector<int> adaptation_iterations;   // per top-level unit, most recent adapting call
  std::size_t adaptation_fallbacks = 0;
};

/// Marginal log-likelihood of a compiled program under an integration plan.
/// Halton draws and quadrature rules are fixed at construction.
class MarginalLikelihood {
 public:
  MarginalLikelihood(const Program& program, IntegrationPlan plan, int threads = 1);
  ~MarginalLikelihood();
  MarginalLikelihood(const MarginalLikelihood&) = delete;
  MarginalLikelihood& operator=(const MarginalLikelihood&) = delete;

  /// Returns NaN when any unit's integral is not finite.
  double operator()(std::span<const double> theta, AdaptMode mode = AdaptMode::fresh);

  /// Sum of row log-likelihoods of the selected outcomes with every latent
  /// effect at zero.
  double conditional(std::span<const double> theta, const std::vector<bool>& outcomes) const;

  const Program& program() const { return program_; }
  const IntegrationPlan& plan() const { return plan_; }
  ProfileReport profile() const;

 private:
  struct Impl;
  const Program& program_;
  IntegrationPlan plan_;
  std::unique_ptr<Impl> impl_;
};

double marginal_logl(const Program& program, const IntegrationPlan& plan, std::span<const double> theta);

ProfileReport profile_report(const Program& program, const IntegrationPlan& plan, std::span<const double> theta);

/// Neumaier-compensated sum in the given order.
double compensated_sum(std::span<const double> values);

}  // namespace mlgm
