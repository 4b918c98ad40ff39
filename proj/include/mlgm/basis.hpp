#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace mlgm {

class BasisError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fractional polynomial in t. Power 0 means log t; a repeated power p
/// contributes t^p, t^p log t, t^p log^2 t, ... Requires t > 0 unless every
/// power is a distinct positive integer.
class FpBasis {
 public:
  explicit FpBasis(std::vector<double> powers);

  std::size_t size() const { return powers_.size(); }
  const std::vector<double>& powers() const { return powers_; }

  void eval(double t, std::span<double> out) const;
  std::vector<double> eval(double t) const;
  /// d/dt of each column.
  void deriv(double t, std::span<double> out) const;
  /// False when every column is a distinct positive integer power of t.
  bool needs_positive() const;

 private:
  std::vector<double> powers_;
  std::vector<int> log_order_;  // multiplicity index of each power
};

/// Restricted cubic spline on an arbitrary axis x: column 1 is x, columns
/// 2..K-1 are the truncated-cubic terms for the interior knots. Linear beyond
/// the boundary knots.
class RcsBasis {
 public:
  explicit RcsBasis(std::vector<double> knots);

  std::size_t size() const { return knots_.size() - 1; }
  const std::vector<double>& knots() const { return knots_; }

  void eval(double x, std::span<double> out) const;
  std::vector<double> eval(double x) const;
  void deriv(double x, std::span<double> out) const;
  std::vector<double> deriv(double x) const;
  void deriv2(double x, std::span<double> out) const;

 private:
  std::vector<double> knots_;
};

/// Centile with the averaging rule: with n sorted values and P = n p / 100,
/// returns x[P] when P is fractional (1-based, rounded up) and the mean of
/// x[P] and x[P+1] when P is integral.
double centile(std::vector<double> values, double percent);

/// Boundary knots at the extremes of `log_times`, interior knots at equally
/// spaced centiles. `log_times` should hold uncensored event times only.
RcsBasis default_knots(const std::vector<double>& log_times, int df);

}  // namespace mlgm
