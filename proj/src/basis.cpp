#include "mlgm/basis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace mlgm {

FpBasis::FpBasis(std::vector<double> powers) : powers_(std::move(powers)) {
  if (powers_.empty()) throw BasisError("fractional polynomial needs at least one power");
  std::sort(powers_.begin(), powers_.end());
  log_order_.resize(powers_.size());
  for (std::size_t j = 0; j < powers_.size(); ++j)
    log_order_[j] = (j > 0 && powers_[j] == powers_[j - 1]) ? log_order_[j - 1] + 1 : 0;
}

bool FpBasis::needs_positive() const {
  for (std::size_t j = 0; j < powers_.size(); ++j)
    if (powers_[j] <= 0 || powers_[j] != std::floor(powers_[j]) || log_order_[j] > 0) return true;
  return false;
}

void FpBasis::eval(double t, std::span<double> out) const {
  if (!(t > 0) && needs_positive())
    throw BasisError("fractional polynomial requires t > 0, got " + std::to_string(t));
  for (std::size_t j = 0; j < powers_.size(); ++j) {
    double p = powers_[j];
    // power 0 is log t; its repeats continue the log sequence
    int m = log_order_[j] + (p == 0 ? 1 : 0);
    double base = p == 0 ? 1.0 : std::pow(t, p);
    out[j] = m == 0 ? base : base * std::pow(std::log(t), m);
  }
}

std::vector<double> FpBasis::eval(double t) const {
  std::vector<double> out(size());
  eval(t, out);
  return out;
}

void FpBasis::deriv(double t, std::span<double> out) const {
  if (!(t > 0) && needs_positive())
    throw BasisError("fractional polynomial requires t > 0, got " + std::to_string(t));
  for (std::size_t j = 0; j < powers_.size(); ++j) {
    double p = powers_[j];
    int m = log_order_[j] + (p == 0 ? 1 : 0);
    if (m == 0) {
      out[j] = p * std::pow(t, p - 1);
      continue;
    }
    double lt = std::log(t), tp1 = std::pow(t, p - 1);
    out[j] = p * tp1 * std::pow(lt, m) + m * tp1 * std::pow(lt, m - 1);
  }
}

RcsBasis::RcsBasis(std::vector<double> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 2) throw BasisError("restricted cubic spline needs at least 2 knots");
  for (std::size_t j = 1; j < knots_.size(); ++j)
    if (!(knots_[j] > knots_[j - 1])) throw BasisError("spline knots must be strictly increasing");
}

namespace {
inline double cube_plus(double v) { return v > 0 ? v * v * v : 0.0; }
inline double square_plus(double v) { return v > 0 ? v * v : 0.0; }
inline double plus(double v) { return v > 0 ? v : 0.0; }
}  // namespace

void RcsBasis::eval(double x, std::span<double> out) const {
  const std::size_t K = knots_.size();
  const double k1 = knots_.front(), kK = knots_.back();
  out[0] = x;
  for (std::size_t j = 1; j + 1 < K; ++j) {
    double lam = (kK - knots_[j]) / (kK - k1);
    out[j] = cube_plus(x - knots_[j]) - lam * cube_plus(x - k1) - (1 - lam) * cube_plus(x - kK);
  }
}

std::vector<double> RcsBasis::eval(double x) const {
  std::vector<double> out(size());
  eval(x, out);
  return out;
}

void RcsBasis::deriv(double x, std::span<double> out) const {
  const std::size_t K = knots_.size();
  const double k1 = knots_.front(), kK = knots_.back();
  out[0] = 1.0;
  for (std::size_t j = 1; j + 1 < K; ++j) {
    double lam = (kK - knots_[j]) / (kK - k1);
    out[j] = 3 * (square_plus(x - knots_[j]) - lam * square_plus(x - k1) - (1 - lam) * square_plus(x - kK));
  }
}

std::vector<double> RcsBasis::deriv(double x) const {
  std::vector<double> out(size());
  deriv(x, out);
  return out;
}

void RcsBasis::deriv2(double x, std::span<double> out) const {
  const std::size_t K = knots_.size();
  const double k1 = knots_.front(), kK = knots_.back();
  out[0] = 0.0;
  for (std::size_t j = 1; j + 1 < K; ++j) {
    double lam = (kK - knots_[j]) / (kK - k1);
    out[j] = 6 * (plus(x - knots_[j]) - lam * plus(x - k1) - (1 - lam) * plus(x - kK));
  }
}

double centile(std::vector<double> values, double percent) {
  if (values.empty()) throw BasisError("centile of an empty set");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double P = n * percent / 100.0;
  double fl = std::floor(P);
  // treat P within rounding of an integer as integral
  if (std::abs(P - std::round(P)) < 1e-9 * std::max(1.0, n)) {
    auto i = static_cast<std::size_t>(std::round(P));
    if (i == 0) return values.front();
    if (i >= values.size()) return values.back();
    return 0.5 * (values[i - 1] + values[i]);
  }
  auto i = static_cast<std::size_t>(fl) + 1;
  return values[std::min(i, values.size()) - 1];
}

RcsBasis default_knots(const std::vector<double>& log_times, int df) {
  if (df < 1) throw BasisError("spline df must be >= 1");
  std::set<double> distinct(log_times.begin(), log_times.end());
  if (distinct.size() < static_cast<std::size_t>(df) + 1)
    throw BasisError("need at least " + std::to_string(df + 1) + " distinct event times for df(" + std::to_string(df) +
                     "), have " + std::to_string(distinct.size()));
  std::vector<double> knots{*distinct.begin()};
  for (int j = 1; j < df; ++j) knots.push_back(centile(log_times, 100.0 * j / df));
  knots.push_back(*distinct.rbegin());
  // Ties in the centiles would collapse knots; keep them distinct.
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  if (knots.size() != static_cast<std::size_t>(df) + 1)
    throw BasisError("event times too concentrated to place " + std::to_string(df + 1) + " distinct knots");
  return RcsBasis(std::move(knots));
}

}  // namespace mlgm
