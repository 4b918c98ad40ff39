#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlgm/basis.hpp"
#include "mlgm/data.hpp"
#include "mlgm/dsl.hpp"
#include "mlgm/families.hpp"
#include "mlgm/integrate.hpp"

namespace mlgm {

enum class Transform { identity, exp };

enum class SlotKind { coefficient, baseline, constant, ancillary, log_sd, chol };

struct ParamSlot {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::string name;
  Transform transform = Transform::identity;
  SlotKind kind = SlotKind::coefficient;
  std::size_t outcome = npos;  // owning outcome (0-based), npos for level parameters
  std::size_t level = npos;    // owning level for log-sd / Cholesky slots
};

struct CompiledElement {
  enum class Kind { covariate, intercept, latent, fp, rcs, ev };
  Kind kind = Kind::intercept;
  const double* column = nullptr;  // covariate values, one per frame row
  std::string column_name;
  std::size_t latent = 0;          // global latent slot
  std::shared_ptr<const FpBasis> fp;
  std::shared_ptr<const RcsBasis> rcs;
  bool log_time = false;
  EvKind ev = EvKind::ev;
  std::size_t target = 0;
};

struct CompiledComponent {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<CompiledElement> elements;
  std::size_t width = 1;             // columns of the fp/rcs element, else 1
  std::size_t vector_element = npos;  // index of the fp/rcs element
  std::size_t coef = npos;           // first parameter index; npos means a fixed coefficient of 1
  std::size_t latent_count = 0;
  bool has_ev = false;
  bool time_dependent = false;
  std::string label;
};

enum class UserMode { none, loglik, hazard, cumhazard };

struct CompiledOutcome {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  FamilyKind kind = FamilyKind::gaussian;
  std::string label;  // response name or "outcome k"
  std::vector<CompiledComponent> components;
  std::size_t cons = npos;
  std::vector<std::size_t> ancillary;
  std::vector<std::size_t> baseline;      // RP spline coefficients
  std::shared_ptr<const RcsBasis> rp_basis;
  bool survival = false;                  // survival families and user hazard families
  bool time_dependent = false;
  const double* response = nullptr;
  const double* timevar = nullptr;
  const double* trials = nullptr;         // binomial trials column
  double trials_constant = 1;
  const UserFamilyHooks* hooks = nullptr;
  UserMode user_mode = UserMode::none;
  OutcomeRows rows;
};

struct LevelLayout {
  std::string name;
  std::size_t first_latent = 0;  // global slot of the first latent effect at this level
  std::size_t dim = 0;
  std::vector<std::size_t> log_sd;  // parameter index per dimension
  std::vector<std::size_t> chol;    // parameter indices of L(i, j), i > j, row by row
  Covariance covariance = Covariance::independent;
  KernelKind kernel = KernelKind::normal;
  int df = 0;
};

struct CompileOptions {
  const FamilyRegistry* registry = nullptr;
  int gl_points = 30;
};

/// Compiled model: parameter layout, element evaluators and the level
/// hierarchy. Owns a copy of the data it was compiled against.
class Program {
 public:
  Program(const ModelSpec& spec, const DataFrame& frame, const CompileOptions& options = {});
  Program(const Program&) = delete;
  Program& operator=(const Program&) = delete;

  const ModelSpec& spec() const { return spec_; }
  const DataFrame& frame() const { return *frame_; }
  const Hierarchy& hierarchy() const { return hierarchy_; }
  const std::vector<CompiledOutcome>& outcomes() const { return outcomes_; }
  const std::vector<LevelLayout>& levels() const { return levels_; }
  const std::vector<ParamSlot>& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }
  std::size_t latent_count() const { return latent_names_.size(); }
  const std::vector<std::string>& latent_names() const { return latent_names_; }
  const GlRule& gl() const { return gl_; }
  std::size_t param_index(const std::string& name) const;  // throws if unknown
  std::vector<std::string> param_names() const;

  /// Time used for outcome k's time functions at `row` when none is given:
  /// the survival time for survival outcomes, else the timevar value.
  std::optional<double> row_time(std::size_t k, std::size_t row) const;

  /// Complex linear predictor of outcome k at data row `row`. `b` holds every
  /// latent effect in global slot order; `t` overrides the row time.
  double linpred(std::size_t k, std::size_t row, std::span<const double> theta, std::span<const double> b,
                 std::optional<double> t = std::nullopt) const;
  double ev(std::size_t target, EvKind kind, std::size_t row, std::span<const double> theta, std::span<const double> b,
            std::optional<double> t) const;

  /// Value of one component (sum over its coefficient columns).
  double component_value(std::size_t k, const CompiledComponent& c, std::size_t row, std::span<const double> theta,
                         std::span<const double> b, std::optional<double> t) const;

  /// Conditional log-likelihood of observation `i` (index into the outcome's
  /// rows) given all latent effects.
  double row_logl(std::size_t k, std::size_t i, std::span<const double> theta, std::span<const double> b) const;

  /// Lower-triangular scale factor of level l's latent effects.
  Eigen::MatrixXd level_chol(std::size_t l, std::span<const double> theta) const;

 private:
  double element_scalar(std::size_t k, const CompiledElement& e, std::size_t row, std::span<const double> theta,
                        std::span<const double> b, std::optional<double> t) const;
  double time_or_row(std::size_t k, std::size_t row, std::optional<double> t) const;

  ModelSpec spec_;
  std::unique_ptr<DataFrame> frame_;
  Hierarchy hierarchy_;
  std::vector<CompiledOutcome> outcomes_;
  std::vector<LevelLayout> levels_;
  std::vector<ParamSlot> params_;
  std::vector<std::string> latent_names_;
  GlRule gl_;
};

std::unique_ptr<Program> compile(const ModelSpec& spec, const DataFrame& frame, const CompileOptions& options = {});

/// Linear predictor for outcome k (0-based) at a frame row.
double eval_linpred(const Program& program, std::size_t k, std::size_t row, std::span<const double> theta,
                    std::span<const double> b, std::optional<double> t = std::nullopt);
double eval_ev(const Program& program, std::size_t target, EvKind kind, std::size_t row, std::span<const double> theta,
               std::span<const double> b, std::optional<double> t);

}  // namespace mlgm
