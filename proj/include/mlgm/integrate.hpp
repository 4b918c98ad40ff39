#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace mlgm {

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gauss-Hermite rule normalised to the standard normal kernel:
/// sum(w) = 1 and sum(w a^2) = 1.
struct GhRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::size_t size() const { return nodes.size(); }
};

GhRule gh_rule(int points);

/// Gauss-Legendre rule on (-1, 1).
struct GlRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::size_t size() const { return nodes.size(); }
};

GlRule gl_rule(int points);

/// Integral of f over [a, b] with a Gauss-Legendre rule.
template <class F>
double gl_integrate(const GlRule& rule, double a, double b, F&& f) {
  double half = 0.5 * (b - a), mid = 0.5 * (b + a), sum = 0.0;
  for (std::size_t q = 0; q < rule.size(); ++q) sum += rule.weights[q] * f(half * rule.nodes[q] + mid);
  return half * sum;
}

/// Integral of f over [0, b] with the substitution t = b u^6 before the
/// Gauss-Legendre rule. Hazards behaving like t^(p-1) near zero become
/// u^(6p-1), which the rule integrates accurately for p > 0.2 or so.
template <class F>
double gl_integrate_origin(const GlRule& rule, double b, F&& f) {
  double sum = 0.0;
  for (std::size_t q = 0; q < rule.size(); ++q) {
    double u = 0.5 * (rule.nodes[q] + 1.0);
    double u5 = u * u * u * u * u;
    sum += rule.weights[q] * f(b * u5 * u) * 6.0 * u5;
  }
  return 0.5 * b * sum;
}

std::vector<unsigned> first_primes(std::size_t count);
double radical_inverse(std::uint64_t index, unsigned base);

/// Halton points: entry (m, j) is the radical inverse of skip + m + 1 in the
/// j-th prime base (prime_offset selects the first base).
struct HaltonSet {
  std::size_t draws = 0;
  std::size_t dims = 0;
  Eigen::MatrixXd values;  // draws x dims
};

HaltonSet halton(std::size_t draws, std::size_t dims, std::size_t skip, std::size_t prime_offset = 0);

enum class KernelKind { normal, t };

/// Zero-mean random-effect distribution with scale matrix chol * chol^T.
/// For t(df) the covariance is df / (df - 2) times the scale matrix.
struct ReKernel {
  KernelKind kind = KernelKind::normal;
  int df = 0;
  Eigen::MatrixXd chol;  // lower triangular

  std::size_t dim() const { return static_cast<std::size_t>(chol.rows()); }
  double log_density(const Eigen::VectorXd& b) const;
  /// Covariance of the kernel (requires df > 2 for t).
  Eigen::MatrixXd covariance() const;
};

/// Draws with identity scale: rows of Phi^-1(u) for normal; for t, the
/// normal draw times sqrt(df / w) where w is the chi-square(df) quantile of
/// the extra last column.
Eigen::MatrixXd standard_draws(KernelKind kind, int df, const HaltonSet& uniforms);

/// Draws scaled by the kernel's Cholesky factor (rows are draws).
Eigen::MatrixXd kernel_draws(const ReKernel& kernel, const HaltonSet& uniforms);

/// Applies b = chol * z to each row z of `points`.
Eigen::MatrixXd transform_points(const ReKernel& kernel, const Eigen::MatrixXd& points);

/// Tensor-product node index enumeration for r dimensions of Q points.
std::size_t product_size(std::size_t points, std::size_t dims);

/// Centre and Cholesky scale of the normal proposal used by adaptive
/// quadrature.
struct AdaptState {
  Eigen::VectorXd shift;
  Eigen::MatrixXd scale;
  int iterations = 0;
  bool fallback = false;
};

/// Proposal equal to the prior (no adaptation). For t kernels the prior
/// covariance is used when finite, else the scale matrix.
AdaptState prior_state(const ReKernel& kernel);

/// log of the integral of exp(log_f(b)) * kernel(b) db using the product GH
/// rule centred and scaled by `state`. If `moments` is non-null it receives
/// the posterior mean and covariance of b estimated from the same nodes.
using LogIntegrand = std::function<double(const Eigen::VectorXd&)>;

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

double log_integral_gh(const LogIntegrand& log_f, const ReKernel& kernel, const GhRule& rule, const AdaptState& state,
                       Moments* moments = nullptr);

/// Mean-variance adaptation: recentres at the posterior mean and rescales by
/// the posterior covariance until both change by less than `tol` or
/// `max_iter` iterations. When that does not settle it restarts from the
/// posterior mode and curvature, which is also the state used for a
/// one-point rule and the starting state for a two-point rule. Falls back to the prior state when nothing usable is
/// found and flags the result.
AdaptState adapt_locations(const LogIntegrand& log_f, const ReKernel& kernel, const GhRule& rule, double tol = 1e-8,
                           int max_iter = 20);

/// log of the draw average of exp(log_f(b_m)) over kernel draws.
double log_integral_mc(const LogIntegrand& log_f, const ReKernel& kernel, const Eigen::MatrixXd& standard);

/// Numerically stable log(sum(exp(x))).
double log_sum_exp(const std::vector<double>& x);

}  // namespace mlgm
