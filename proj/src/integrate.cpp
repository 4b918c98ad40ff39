#include "mlgm/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace mlgm {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// Eigenvalues of the symmetric tridiagonal Jacobi matrix with zero diagonal.
std::vector<double> jacobi_eigenvalues(int n, const std::function<double(int)>& offdiag) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) J(i, i + 1) = J(i + 1, i) = offdiag(i + 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J, Eigen::EigenvaluesOnly);
  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + n);
  std::sort(ev.begin(), ev.end());
  return ev;
}

}  // namespace

GhRule gh_rule(int points) {
  if (points < 1) throw IntegrationError("Gauss-Hermite rule needs at least one point");
  const int n = points;
  // Golub-Welsch nodes for weight exp(-x^2), polished by Newton on the
  // orthonormal Hermite recurrence; weights from the derivative formula keep
  // full relative accuracy in the tails.
  std::vector<double> x = jacobi_eigenvalues(n, [](int i) { return std::sqrt(i / 2.0); });
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  GhRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = x[i], pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[i] = z;
    rule.weights[i] = 2.0 / (pp * pp);
  }
  // Enforce exact symmetry and rescale to the N(0,1) kernel.
  for (int i = 0; i < n / 2; ++i) {
    double a = 0.5 * (x[n - 1 - i] - x[i]);
    double w = 0.5 * (rule.weights[i] + rule.weights[n - 1 - i]);
    x[i] = -a;
    x[n - 1 - i] = a;
    rule.weights[i] = rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = x[i] * std::numbers::sqrt2;
    rule.weights[i] /= std::sqrt(std::numbers::pi);
    total += rule.weights[i];
  }
  for (auto& w : rule.weights) w /= total;
  return rule;
}

GlRule gl_rule(int points) {
  if (points < 1) throw IntegrationError("Gauss-Legendre rule needs at least one point");
  const int n = points;
  std::vector<double> x = jacobi_eigenvalues(n, [](int i) { return i / std::sqrt(4.0 * i * i - 1.0); });
  GlRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = x[i], pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) <= 1e-16) break;
    }
    x[i] = z;
    rule.weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
  }
  for (int i = 0; i < n / 2; ++i) {
    double a = 0.5 * (x[n - 1 - i] - x[i]);
    double w = 0.5 * (rule.weights[i] + rule.weights[n - 1 - i]);
    x[i] = -a;
    x[n - 1 - i] = a;
    rule.weights[i] = rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
  rule.nodes = x;
  return rule;
}

std::vector<unsigned> first_primes(std::size_t count) {
  std::vector<unsigned> primes;
  for (unsigned c = 2; primes.size() < count; ++c) {
    bool prime = true;
    for (unsigned p : primes) {
      if (p * p > c) break;
      if (c % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(c);
  }
  return primes;
}

double radical_inverse(std::uint64_t index, unsigned base) {
  double result = 0.0, f = 1.0 / base;
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= base;
  }
  return result;
}

HaltonSet halton(std::size_t draws, std::size_t dims, std::size_t skip, std::size_t prime_offset) {
  if (draws < 1 || dims < 1) throw IntegrationError("Halton set needs at least one draw and one dimension");
  auto primes = first_primes(prime_offset + dims);
  HaltonSet set;
  set.draws = draws;
  set.dims = dims;
  set.values.resize(static_cast<Eigen::Index>(draws), static_cast<Eigen::Index>(dims));
  for (std::size_t j = 0; j < dims; ++j)
    for (std::size_t m = 0; m < draws; ++m)
      set.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) =
          radical_inverse(static_cast<std::uint64_t>(skip + m + 1), primes[prime_offset + j]);
  return set;
}

double ReKernel::log_density(const Eigen::VectorXd& b) const {
  const auto r = static_cast<double>(dim());
  Eigen::VectorXd z = chol.triangularView<Eigen::Lower>().solve(b);
  double logdet = chol.diagonal().array().log().sum();
  double q = z.squaredNorm();
  if (kind == KernelKind::normal) return -r * kLogSqrt2Pi - logdet - 0.5 * q;
  double nu = df;
  return std::lgamma(0.5 * (nu + r)) - std::lgamma(0.5 * nu) - 0.5 * r * std::log(nu * std::numbers::pi) - logdet -
         0.5 * (nu + r) * std::log1p(q / nu);
}

Eigen::MatrixXd ReKernel::covariance() const {
  Eigen::MatrixXd s = chol * chol.transpose();
  if (kind == KernelKind::t) {
    if (df <= 2) throw IntegrationError("t kernel with df <= 2 has no finite covariance");
    s *= static_cast<double>(df) / (df - 2.0);
  }
  return s;
}

Eigen::MatrixXd standard_draws(KernelKind kind, int df, const HaltonSet& uniforms) {
  const auto M = static_cast<Eigen::Index>(uniforms.draws);
  const auto cols = static_cast<Eigen::Index>(uniforms.dims);
  const Eigen::Index r = kind == KernelKind::t ? cols - 1 : cols;
  if (r < 1) throw IntegrationError("t draws need r + 1 uniform columns");
  if (kind == KernelKind::t && df < 1) throw IntegrationError("t kernel needs df >= 1");
  boost::math::normal_distribution<double> N;
  Eigen::MatrixXd z(M, r);
  for (Eigen::Index m = 0; m < M; ++m) {
    for (Eigen::Index j = 0; j < r; ++j) z(m, j) = boost::math::quantile(N, uniforms.values(m, j));
    if (kind == KernelKind::t) {
      double w = 2.0 * boost::math::gamma_p_inv(0.5 * df, uniforms.values(m, r));
      z.row(m) *= std::sqrt(df / w);
    }
  }
  return z;
}

Eigen::MatrixXd transform_points(const ReKernel& kernel, const Eigen::MatrixXd& points) {
  return points * kernel.chol.transpose();
}

Eigen::MatrixXd kernel_draws(const ReKernel& kernel, const HaltonSet& uniforms) {
  std::size_t expected = kernel.dim() + (kernel.kind == KernelKind::t ? 1 : 0);
  if (uniforms.dims != expected)
    throw IntegrationError("kernel draws need " + std::to_string(expected) + " uniform columns, got " +
                           std::to_string(uniforms.dims));
  return transform_points(kernel, standard_draws(kernel.kind, kernel.df, uniforms));
}

std::size_t product_size(std::size_t points, std::size_t dims) {
  std::size_t n = 1;
  for (std::size_t j = 0; j < dims; ++j) n *= points;
  return n;
}

AdaptState prior_state(const ReKernel& kernel) {
  AdaptState s;
  const auto r = static_cast<Eigen::Index>(kernel.dim());
  s.shift = Eigen::VectorXd::Zero(r);
  s.scale = kernel.chol;
  if (kernel.kind == KernelKind::t && kernel.df > 2) s.scale *= std::sqrt(kernel.df / (kernel.df - 2.0));
  return s;
}

double log_sum_exp(const std::vector<double>& x) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x)
    if (v > mx) mx = v;
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

double log_integral_gh(const LogIntegrand& log_f, const ReKernel& kernel, const GhRule& rule, const AdaptState& state,
                       Moments* moments) {
  const std::size_t r = kernel.dim();
  const std::size_t Q = rule.size();
  const std::size_t total = product_size(Q, r);
  const auto R = static_cast<Eigen::Index>(r);
  double log_det_scale = state.scale.diagonal().array().log().sum();

  std::vector<double> terms(total);
  std::vector<Eigen::VectorXd> nodes;
  if (moments) nodes.reserve(total);
  std::vector<std::size_t> idx(r, 0);
  Eigen::VectorXd a(R), b(R);
  for (std::size_t n = 0; n < total; ++n) {
    double logw = 0.0, log_phi = 0.0;
    for (std::size_t j = 0; j < r; ++j) {
      a[static_cast<Eigen::Index>(j)] = rule.nodes[idx[j]];
      logw += std::log(rule.weights[idx[j]]);
      log_phi += -kLogSqrt2Pi - 0.5 * rule.nodes[idx[j]] * rule.nodes[idx[j]];
    }
    b = state.shift + state.scale * a;
    terms[n] = logw + log_f(b) + kernel.log_density(b) + log_det_scale - log_phi;
    if (moments) nodes.push_back(b);
    for (std::size_t j = 0; j < r; ++j) {
      if (++idx[j] < Q) break;
      idx[j] = 0;
    }
  }
  double out = log_sum_exp(terms);
  if (moments) {
    moments->mean = Eigen::VectorXd::Zero(R);
    moments->cov = Eigen::MatrixXd::Zero(R, R);
    if (std::isfinite(out)) {
      std::vector<double> w(total);
      for (std::size_t n = 0; n < total; ++n) w[n] = std::exp(terms[n] - out);
      for (std::size_t n = 0; n < total; ++n) moments->mean += w[n] * nodes[n];
      for (std::size_t n = 0; n < total; ++n) {
        Eigen::VectorXd d = nodes[n] - moments->mean;
        moments->cov += w[n] * d * d.transpose();
      }
    }
  }
  return out;
}

namespace {

// Posterior mode and curvature found by Newton steps in coordinates
// standardised by the prior scale. Flags a fallback when the curvature is not
// negative definite at the end.
AdaptState mode_state(const LogIntegrand& log_f, const ReKernel& kernel) {
  AdaptState prior = prior_state(kernel);
  const Eigen::Index r = static_cast<Eigen::Index>(kernel.dim());
  const Eigen::MatrixXd& S = prior.scale;
  auto g = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd b = S * z;
    return log_f(b) + kernel.log_density(b);
  };
  auto derivatives = [&](const Eigen::VectorXd& z, double g0, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    const double hg = 1e-4, hh = 1e-2;
    grad.resize(r);
    hess.resize(r, r);
    for (Eigen::Index i = 0; i < r; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Unit(r, i);
      grad[i] = (g(z + hg * e) - g(z - hg * e)) / (2 * hg);
      hess(i, i) = (g(z + hh * e) - 2 * g0 + g(z - hh * e)) / (hh * hh);
      for (Eigen::Index j = 0; j < i; ++j) {
        Eigen::VectorXd f = Eigen::VectorXd::Unit(r, j);
        hess(i, j) = hess(j, i) = (g(z + hh * (e + f)) - g(z + hh * (e - f)) - g(z - hh * (e - f)) +
                                   g(z - hh * (e + f))) / (4 * hh * hh);
      }
    }
  };
  Eigen::VectorXd z = Eigen::VectorXd::Zero(r), grad;
  Eigen::MatrixXd hess;
  double gz = g(z);
  if (!std::isfinite(gz)) {
    prior.fallback = true;
    return prior;
  }
  int it = 0;
  for (; it < 50; ++it) {
    derivatives(z, gz, grad, hess);
    Eigen::MatrixXd neg = -hess;
    double ridge = 0;
    Eigen::LLT<Eigen::MatrixXd> llt(neg);
    while (llt.info() != Eigen::Success && ridge < 1e6) {
      ridge = ridge == 0 ? 1e-6 : ridge * 10;
      llt.compute(neg + ridge * Eigen::MatrixXd::Identity(r, r));
    }
    Eigen::VectorXd step = llt.solve(grad);
    double t = 1;
    Eigen::VectorXd next = z + step;
    double gn = g(next);
    for (int k = 0; k < 30 && !(gn >= gz); ++k) {
      t *= 0.5;
      next = z + t * step;
      gn = g(next);
    }
    if (!(gn >= gz)) break;
    z = next;
    gz = gn;
    if ((t * step).cwiseAbs().maxCoeff() < 1e-10) break;
  }
  derivatives(z, gz, grad, hess);
  Eigen::LLT<Eigen::MatrixXd> llt(-hess);
  if (llt.info() != Eigen::Success || !z.allFinite()) {
    prior.fallback = true;
    return prior;
  }
  Eigen::MatrixXd cov = S * llt.solve(Eigen::MatrixXd::Identity(r, r)) * S.transpose();
  AdaptState out;
  out.shift = S * z;
  out.scale = Eigen::LLT<Eigen::MatrixXd>(0.5 * (cov + cov.transpose())).matrixL();
  out.iterations = it + 1;
  return out;
}

// Mean-variance iterations from `cur`. Returns false when the moments stop
// being usable or the iterations run out.
bool iterate_moments(const LogIntegrand& log_f, const ReKernel& kernel, const GhRule& rule, double tol, int max_iter,
                     AdaptState& cur) {
  for (int it = 1; it <= max_iter; ++it) {
    Moments m;
    double v = log_integral_gh(log_f, kernel, rule, cur, &m);
    Eigen::LLT<Eigen::MatrixXd> llt(m.cov);
    if (!std::isfinite(v) || !m.mean.allFinite() || !m.cov.allFinite() || llt.info() != Eigen::Success ||
        !(llt.matrixL().toDenseMatrix().diagonal().array() > 0).all())
      return false;
    Eigen::MatrixXd L = llt.matrixL();
    double change = std::max((m.mean - cur.shift).cwiseAbs().maxCoeff(), (L - cur.scale).cwiseAbs().maxCoeff());
    cur.shift = m.mean;
    cur.scale = L;
    ++cur.iterations;
    if (change < tol) return true;
  }
  return false;
}

}  // namespace

AdaptState adapt_locations(const LogIntegrand& log_f, const ReKernel& kernel, const GhRule& rule, double tol, int max_iter) {
  AdaptState start = prior_state(kernel);
  if (kernel.kind == KernelKind::t && kernel.df <= 2)
    throw IntegrationError("mean-variance adaptation needs a t kernel with df > 2");
  if (kernel.dim() == 0) return start;
  if (rule.size() < 2) return mode_state(log_f, kernel);
  // Two nodes cannot fix the scale (any scale reproduces itself for a
  // symmetric posterior), so start them from the mode and curvature.
  AdaptState cur = rule.size() == 2 ? mode_state(log_f, kernel) : start;
  if (cur.fallback) cur = start;
  if (iterate_moments(log_f, kernel, rule, tol, max_iter, cur)) return cur;
  // Restart from the mode when the moments from the prior do not settle.
  AdaptState mode = mode_state(log_f, kernel);
  AdaptState second = mode;
  second.iterations += cur.iterations;
  if (!mode.fallback && iterate_moments(log_f, kernel, rule, tol, max_iter, second)) return second;
  if (!mode.fallback) return mode;
  if (cur.shift.allFinite() && cur.iterations > 0) return cur;
  start.fallback = true;
  start.iterations = cur.iterations;
  return start;
}

double log_integral_mc(const LogIntegrand& log_f, const ReKernel& kernel, const Eigen::MatrixXd& standard) {
  const Eigen::Index M = standard.rows();
  std::vector<double> terms(static_cast<std::size_t>(M));
  Eigen::VectorXd b(standard.cols());
  for (Eigen::Index m = 0; m < M; ++m) {
    b = kernel.chol * standard.row(m).transpose();
    terms[static_cast<std::size_t>(m)] = log_f(b);
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(M));
}

}  // namespace mlgm
