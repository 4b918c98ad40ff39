#include "mlgm/optim.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace mlgm {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

bool is_free(const std::vector<bool>& free, std::size_t i) { return free.empty() || free[i]; }

std::vector<Eigen::Index> free_indices(const std::vector<bool>& free, Eigen::Index n) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i)
    if (is_free(free, static_cast<std::size_t>(i))) idx.push_back(i);
  return idx;
}

double scaled_gradient(const Eigen::VectorXd& g, const Eigen::VectorXd& theta, const std::vector<Eigen::Index>& idx) {
  double m = 0.0;
  for (auto i : idx) m = std::max(m, std::abs(g[i]) * std::max(std::abs(theta[i]), 1.0));
  return m;
}

}  // namespace

Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& theta, const std::vector<bool>& free,
                            double step_scale) {
  const Eigen::Index n = theta.size();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd x = theta;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_free(free, static_cast<std::size_t>(i))) continue;
    double h = std::cbrt(kEps) * std::max(std::abs(theta[i]), 1.0) * step_scale;
    double gi = std::numeric_limits<double>::quiet_NaN();
    for (int attempt = 0; attempt <= 8; ++attempt, h *= 0.5) {
      x[i] = theta[i] + h;
      double fp = f(x);
      x[i] = theta[i] - h;
      double fm = f(x);
      x[i] = theta[i];
      if (std::isfinite(fp) && std::isfinite(fm)) {
        gi = (fp - fm) / (2 * h);
        break;
      }
    }
    g[i] = gi;
  }
  return g;
}

Eigen::MatrixXd fd_hessian(const ScalarFn& f, const Eigen::VectorXd& theta, const std::vector<bool>& free, double f0) {
  const Eigen::Index n = theta.size();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  if (!std::isfinite(f0)) f0 = f(theta);
  auto idx = free_indices(free, n);
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h[i] = std::pow(kEps, 0.25) * std::max(std::abs(theta[i]), 1.0);
  Eigen::VectorXd x = theta;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    Eigen::Index i = idx[a];
    x[i] = theta[i] + h[i];
    double fp = f(x);
    x[i] = theta[i] - h[i];
    double fm = f(x);
    x[i] = theta[i];
    H(i, i) = (fp - 2 * f0 + fm) / (h[i] * h[i]);
    for (std::size_t c = 0; c < a; ++c) {
      Eigen::Index j = idx[c];
      double v[4];
      const int si[4] = {1, 1, -1, -1}, sj[4] = {1, -1, 1, -1};
      for (int q = 0; q < 4; ++q) {
        x[i] = theta[i] + si[q] * h[i];
        x[j] = theta[j] + sj[q] * h[j];
        v[q] = f(x);
      }
      x[i] = theta[i];
      x[j] = theta[j];
      H(i, j) = H(j, i) = (v[0] - v[1] - v[2] + v[3]) / (4 * h[i] * h[j]);
    }
  }
  return H;
}

OptimResult maximize(const Objective& objective, const Eigen::VectorXd& theta0, const MaximizeOptions& opt) {
  const ScalarFn& value = objective.value;
  const ScalarFn& refresh = objective.refresh ? objective.refresh : objective.value;
  const Eigen::Index n = theta0.size();
  if (!opt.free.empty() && static_cast<Eigen::Index>(opt.free.size()) != n)
    throw OptimError("free-parameter mask has the wrong length");
  auto idx = free_indices(opt.free, n);
  const auto m = static_cast<Eigen::Index>(idx.size());

  auto apply_floor = [&](Eigen::VectorXd& x) {
    for (std::size_t i : opt.floored) {
      auto j = static_cast<Eigen::Index>(i);
      if (is_free(opt.free, i) && x[j] < opt.floor) x[j] = opt.floor;
    }
  };

  OptimResult res;
  Eigen::VectorXd theta = theta0;
  apply_floor(theta);
  double f = refresh(theta);
  if (!std::isfinite(f)) throw OptimError("log-likelihood is not finite at the starting values");

  auto log_line = [&](const IterationRecord& r) {
    if (!opt.log) return;
    char buf[160];
    std::snprintf(buf, sizeof buf, "iteration %d: logl = %.10g  max|g| = %.3g  halvings = %d\n", r.iteration, r.logl,
                  r.gradient_max, r.halvings);
    *opt.log << buf;
  };

  double change = std::numeric_limits<double>::infinity();
  int stuck = 0;
  Eigen::VectorXd g;
  Eigen::MatrixXd H;
  int it = 0;
  for (;; ++it) {
    g = fd_gradient(value, theta, opt.free);
    if (!g.allFinite()) {
      res.message = "gradient could not be evaluated";
      break;
    }
    res.gradient_max = scaled_gradient(g, theta, idx);
    if (it == 0) {
      IterationRecord r{0, f, res.gradient_max, 0, 0.0};
      res.history.push_back(r);
      log_line(r);
    }
    if (change < opt.rel_tol && res.gradient_max < opt.grad_tol) {
      res.converged = true;
      break;
    }
    if (m == 0) {
      res.converged = true;
      break;
    }
    if (it >= opt.max_iter) {
      res.message = "maximum iterations reached";
      break;
    }
    H = fd_hessian(value, theta, opt.free, f);
    if (!H.allFinite()) {
      res.message = "Hessian could not be evaluated";
      break;
    }

    Eigen::MatrixXd A(m, m);
    Eigen::VectorXd gf(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      gf[a] = g[idx[a]];
      for (Eigen::Index b = 0; b < m; ++b) A(a, b) = -H(idx[a], idx[b]);
    }
    double tau = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    while (llt.info() != Eigen::Success) {
      tau = tau == 0.0 ? 1e-8 : tau * 2;
      if (tau > 1e30) break;
      llt.compute(A + tau * Eigen::MatrixXd::Identity(m, m));
    }
    Eigen::VectorXd step = llt.info() == Eigen::Success ? Eigen::VectorXd(llt.solve(gf)) : gf;

    Eigen::VectorXd trial = theta;
    double ft = -std::numeric_limits<double>::infinity();
    double s = 1.0;
    int halvings = 0;
    bool accepted = false;
    for (; halvings <= opt.max_halvings; ++halvings, s *= 0.5) {
      trial = theta;
      for (Eigen::Index a = 0; a < m; ++a) trial[idx[a]] += s * step[a];
      apply_floor(trial);
      ft = value(trial);
      if (std::isfinite(ft) && ft >= f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No ascent along the Newton direction: the current point is as good as
      // the objective's resolution allows.
      if (++stuck >= 2) {
        res.message = "no improving step found";
        res.converged = res.gradient_max < opt.grad_tol;
        break;
      }
      change = 0.0;
      IterationRecord r{it + 1, f, res.gradient_max, halvings, tau};
      res.history.push_back(r);
      log_line(r);
      continue;
    }
    stuck = 0;
    theta = trial;
    double fnew = refresh(theta);
    if (!std::isfinite(fnew)) fnew = ft;
    change = std::abs(fnew - f) / std::max(std::abs(fnew), 1.0);
    f = fnew;
    IterationRecord r{it + 1, f, res.gradient_max, halvings, tau};
    res.history.push_back(r);
    log_line(r);
  }
  res.iterations = it;
  res.theta = theta;
  res.logl = f;

  // Final Hessian at the reported point.
  H = fd_hessian(value, theta, opt.free, f);
  res.hessian = H;
  res.covariance = Eigen::MatrixXd::Zero(n, n);
  if (m > 0 && H.allFinite()) {
    Eigen::MatrixXd A(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) A(a, b) = -H(idx[a], idx[b]);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    res.verified = llt.info() == Eigen::Success;
    if (res.verified) {
      Eigen::MatrixXd V = llt.solve(Eigen::MatrixXd::Identity(m, m));
      for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b) res.covariance(idx[a], idx[b]) = V(a, b);
    }
  } else if (m == 0) {
    res.verified = true;
  }
  if (res.converged && !res.verified) {
    res.converged = false;
    res.message = "optimum not verified";
  }
  if (res.converged && res.message.empty()) res.message = "converged";
  return res;
}

}  // namespace mlgm
