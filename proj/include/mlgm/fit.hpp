#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mlgm/likelihood.hpp"
#include "mlgm/optim.hpp"
#include "mlgm/predictor.hpp"

namespace mlgm {

struct FitOptions {
  IntegrationPlan plan;          // empty levels: default_plan(points, draws) with `skip`
  int points = 7;
  int draws = 0;
  std::size_t skip = 15;
  int threads = 1;
  std::map<std::string, double> fixed;  // parameters held at the given value
  std::optional<Eigen::VectorXd> start;  // full starting vector, skips initial_values
  MaximizeOptions optimizer;
};

/// One row of the reported table. Log-scale parameters are shown on their
/// natural scale (sd(M1), sigma, ...) with delta-method standard errors.
struct EstimateRow {
  std::string name;
  double estimate = 0;
  double se = 0;
  double lower = 0;
  double upper = 0;
  bool fixed = false;
};

struct FitResult {
  std::vector<ParamSlot> layout;
  Eigen::VectorXd theta;
  Eigen::MatrixXd covariance;
  std::vector<bool> fixed;
  double logl = 0;
  int iterations = 0;
  bool converged = false;
  bool verified = false;
  double gradient_max = 0;
  std::string message;
  std::vector<EstimateRow> table;
  std::vector<IterationRecord> history;
  IntegrationPlan plan;
  ProfileReport profile;
  std::vector<std::pair<std::string, std::vector<double>>> knots;
};

/// Resolved integration plan for a program under the given options.
IntegrationPlan resolve_plan(const Program& program, const FitOptions& options);

/// Fixed-effect starting values from outcome-wise fits with every latent
/// effect at zero; log-sds start at log(0.5), Cholesky terms and @
/// coefficients on latent or EV terms at 0. Values in `fixed` are imposed.
Eigen::VectorXd initial_values(const Program& program, const std::map<std::string, double>& fixed = {});

std::vector<EstimateRow> estimates_table(const Program& program, const Eigen::VectorXd& theta,
                                         const Eigen::MatrixXd& covariance, const std::vector<bool>& fixed);

/// Knots of every spline in the model, labelled by where they are used.
std::vector<std::pair<std::string, std::vector<double>>> model_knots(const Program& program);

FitResult fit(const Program& program, const FitOptions& options = {});

struct CheckResult {
  FitResult baseline;
  FitResult escalated;
  std::vector<std::pair<std::string, double>> shifts;  // |escalated - baseline| per table row
  double max_shift = 0;
  double logl_shift = 0;
};

/// Refits with Q + points_step AGHQ points and draws_factor x QMC draws.
CheckResult check_fit(const Program& program, const FitOptions& options, int points_step = 8, int draws_factor = 4);

}  // namespace mlgm
