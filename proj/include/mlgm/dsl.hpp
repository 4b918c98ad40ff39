#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace mlgm {

/// Raised for malformed or inconsistent model specifications. `position` is a
/// character offset into the specification text when one is meaningful.
class SpecError : public std::runtime_error {
 public:
  explicit SpecError(const std::string& what, std::size_t position = npos)
      : std::runtime_error(what), position_(position) {}
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

enum class FamilyKind {
  gaussian,
  poisson,
  bernoulli,
  beta,
  binomial,
  negbinomial,
  exponential,
  weibull,
  gompertz,
  lognormal,
  loglogistic,
  rp,
  user,
  null
};

std::string_view family_name(FamilyKind kind);
bool is_survival(FamilyKind kind);

struct FamilyOptions {
  FamilyKind kind = FamilyKind::gaussian;
  std::string failure;
  std::string ltrunc;
  std::string bhazard;
  std::string scale;          // rp only: "h"
  int df = 0;                 // rp baseline spline degrees of freedom
  std::vector<double> knots;  // rp baseline knots on the log-time axis
  std::string trials;         // binomial: column name or integer literal
  std::string loglf;          // user hooks, resolved against a FamilyRegistry
  std::string hazard;
  std::string cumhazard;

  bool operator==(const FamilyOptions&) const = default;
};

struct Covariate {
  std::string column;
  bool operator==(const Covariate&) const = default;
};
struct Intercept {
  bool operator==(const Intercept&) const = default;
};
struct Latent {
  std::string name;
  std::vector<std::string> path;  // outermost level first
  bool operator==(const Latent&) const = default;
};
struct FracPoly {
  std::vector<double> powers;
  bool operator==(const FracPoly&) const = default;
};
struct Spline {
  int df = 0;
  std::vector<double> knots;
  bool log_time = false;
  bool operator==(const Spline&) const = default;
};

enum class EvKind { ev, dev, d2ev, iev };
std::string_view ev_name(EvKind kind);

struct EvLink {
  EvKind kind = EvKind::ev;
  std::string target;  // response name or 1-based outcome position
  bool operator==(const EvLink&) const = default;
};

using Element = std::variant<Covariate, Intercept, Latent, FracPoly, Spline, EvLink>;

/// Product of elements (joined by `#`) with an optional named coefficient.
struct Component {
  std::vector<Element> elements;
  std::optional<std::string> coefficient;

  bool has_latent() const;
  bool has_ev() const;
  bool operator==(const Component&) const = default;
};

enum class Covariance { independent, unstructured };

struct ReDistribution {
  bool t = false;
  int df = 0;
  bool operator==(const ReDistribution&) const = default;
};

struct OutcomeSpec {
  std::optional<std::string> response;
  FamilyOptions family;
  std::optional<std::string> timevar;
  int np = 0;
  bool constant = true;
  std::vector<Component> components;

  // Options written at outcome level; they apply to the levels of this
  // outcome's latent effects.
  std::optional<Covariance> covariance;
  std::optional<bool> t_distribution;
  std::optional<int> t_df;

  bool operator==(const OutcomeSpec&) const = default;
};

struct LevelSpec {
  std::string name;
  Covariance covariance = Covariance::independent;
  ReDistribution distribution;
  std::vector<std::string> latents;  // dimension order
  bool operator==(const LevelSpec&) const = default;
};

struct LatentInfo {
  std::size_t level = 0;  // index into ModelSpec::levels (0 = outermost)
  std::size_t index = 0;  // dimension within the level
  bool operator==(const LatentInfo&) const = default;
};

struct ModelSpec {
  std::vector<OutcomeSpec> outcomes;

  // Spec-level options as written.
  std::optional<Covariance> covariance;
  std::optional<bool> t_distribution;
  std::optional<int> t_df;

  // Derived by finalize_spec().
  std::vector<LevelSpec> levels;
  std::map<std::string, LatentInfo> latents;
  std::vector<std::size_t> evaluation_order;  // EV targets before callers

  /// 0-based outcome index named by an EV link.
  std::size_t resolve_target(const EvLink& link) const;
  /// True if the outcome's linear predictor depends on time.
  bool time_dependent(std::size_t outcome) const;

  bool operator==(const ModelSpec&) const = default;
};

ModelSpec parse_model_spec(std::string_view text);

/// Resolves levels, latent registry and EV ordering; checks invariants.
/// Called by the parser and by spec_from_json.
void finalize_spec(ModelSpec& spec);

/// Canonical single-line text form; parse_model_spec(render_spec(s)) == s.
std::string render_spec(const ModelSpec& spec);

nlohmann::ordered_json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::ordered_json& doc);

}  // namespace mlgm
