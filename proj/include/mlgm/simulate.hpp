#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlgm/data.hpp"
#include "mlgm/dsl.hpp"

namespace mlgm {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Covariate generator written as name=dist[:level], dist one of
/// normal(mean,sd), uniform(lo,hi), bernoulli(p), constant(v). With a level
/// the value is drawn once per unit of that level.
struct CovariateGen {
  enum class Dist { normal, uniform, bernoulli, constant };
  std::string name;
  Dist dist = Dist::normal;
  double a = 0.0;
  double b = 1.0;
  std::string level;
};

CovariateGen parse_generator(const std::string& text);

struct SimConfig {
  ModelSpec spec;
  std::map<std::string, double> theta;  // every model parameter by name
  /// Units per level, outermost first; an extra trailing entry gives rows
  /// per innermost unit (default: number of times, or 1).
  std::vector<std::size_t> units;
  std::vector<CovariateGen> covariates;
  std::vector<double> times;  // timevar values within each innermost unit
  double horizon = std::numeric_limits<double>::infinity();  // administrative censoring
  double censor_rate = 0.0;                                   // exponential censoring
  std::uint64_t seed = 1;
};

/// Long-format data for `config.spec` with the true parameter values. When a
/// longitudinal outcome has a timevar, survival responses go on the first
/// row of each innermost unit and later measurements after the event are
/// dropped. Survival outcomes sharing a response column are competing risks.
DataFrame simulate(const SimConfig& config);

}  // namespace mlgm
