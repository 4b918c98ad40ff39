#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlgm/data.hpp"
#include "mlgm/simulate.hpp"

namespace mlgm::testing {

inline DataFrame frame_of(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in);
}

/// Random-intercept linear model y = b0 + b1 x + u_id + e.
inline DataFrame lmm_frame(std::size_t clusters, std::size_t per, std::uint64_t seed, double sd_u = 1.0,
                           double sigma = 1.0) {
  SimConfig c;
  c.spec = parse_model_spec("(y x M1[id], family(gaussian))");
  c.theta = {{"x", 0.5}, {"_cons", 1.0}, {"lnsigma", std::log(sigma)}, {"lns_M1", std::log(sd_u)}};
  c.units = {clusters, per};
  c.covariates.push_back(parse_generator("x=normal(0,1)"));
  c.seed = seed;
  return simulate(c);
}

/// Exact marginal log-likelihood of the random-intercept linear model.
inline double lmm_closed_form(const DataFrame& f, double b0, double b1, double sigma, double sd_u) {
  auto id = f.column("id");
  auto y = f.column("y");
  auto x = f.column("x");
  std::map<double, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < f.rows(); ++i) groups[id[i]].push_back(i);
  double total = 0.0;
  for (const auto& [key, rows] : groups) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd V = Eigen::MatrixXd::Constant(n, n, sd_u * sd_u);
    V.diagonal().array() += sigma * sigma;
    Eigen::VectorXd r(n);
    for (Eigen::Index j = 0; j < n; ++j) r[j] = y[rows[j]] - b0 - b1 * x[rows[j]];
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    Eigen::MatrixXd L = llt.matrixL();
    double logdet = 2 * L.diagonal().array().log().sum();
    total += -0.5 * n * std::log(2 * M_PI) - 0.5 * logdet - 0.5 * r.dot(llt.solve(r));
  }
  return total;
}

/// Maximum-likelihood estimates from Newton iterations on the exact
/// log-likelihood (variances on the log scale).
struct LmmEstimates {
  double b0, b1, sigma, sd_u, logl;
};

inline LmmEstimates lmm_ml(const DataFrame& f) {
  // Parameters: b0, b1, log sigma, log sd_u.
  auto yc = f.column("y");
  double ybar = 0, yss = 0;
  for (double v : yc) ybar += v / static_cast<double>(yc.size());
  for (double v : yc) yss += (v - ybar) * (v - ybar) / static_cast<double>(yc.size());
  Eigen::Vector4d p(ybar, 0.0, 0.5 * std::log(0.5 * yss), 0.5 * std::log(0.5 * yss));
  auto ll = [&](const Eigen::Vector4d& q) { return lmm_closed_form(f, q[0], q[1], std::exp(q[2]), std::exp(q[3])); };
  for (int it = 0; it < 200; ++it) {
    Eigen::Vector4d g;
    Eigen::Matrix4d H;
    const double h = 1e-4;
    double f0 = ll(p);
    for (int i = 0; i < 4; ++i) {
      Eigen::Vector4d a = p, b = p;
      a[i] += h;
      b[i] -= h;
      double fa = ll(a), fb = ll(b);
      g[i] = (fa - fb) / (2 * h);
      H(i, i) = (fa - 2 * f0 + fb) / (h * h);
      for (int j = 0; j < i; ++j) {
        Eigen::Vector4d pp = p, pm = p, mp = p, mm = p;
        pp[i] += h, pp[j] += h;
        pm[i] += h, pm[j] -= h;
        mp[i] -= h, mp[j] += h;
        mm[i] -= h, mm[j] -= h;
        H(i, j) = H(j, i) = (ll(pp) - ll(pm) - ll(mp) + ll(mm)) / (4 * h * h);
      }
    }
    // Newton direction on a negative definite version of H.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(H);
    Eigen::Vector4d lam = eig.eigenvalues().cwiseMin(-1e-6 * eig.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::Vector4d step = -eig.eigenvectors() * (eig.eigenvectors().transpose() * g).cwiseQuotient(lam);
    double s = 1.0;
    while (s > 1e-8 && !(ll(p + s * step) >= f0)) s *= 0.5;
    p += s * step;
    if (step.lpNorm<Eigen::Infinity>() * s < 1e-12) break;
  }
  return {p[0], p[1], std::exp(p[2]), std::exp(p[3]), ll(p)};
}

}  // namespace mlgm::testing
