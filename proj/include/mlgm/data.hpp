#pragma once

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlgm/dsl.hpp"

namespace mlgm {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// Named numeric columns of equal length; NaN marks a missing cell.
class DataFrame {
 public:
  DataFrame() = default;
  explicit DataFrame(std::size_t rows) : rows_(rows) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  bool has(std::string_view name) const;
  std::span<const double> column(std::string_view name) const;
  std::span<double> column(std::string_view name);

  /// Adds or replaces a column. The first column fixes the row count.
  void set_column(const std::string& name, std::vector<double> values);

 private:
  std::size_t rows_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reads comma-separated data with a header row. Cells that are empty, "."
/// or "NA" are missing. Columns listed in `required` must parse as numbers
/// everywhere; other non-numeric columns are kept as all-missing. An empty
/// `required` list makes every column strict.
DataFrame read_csv(std::istream& in, const std::vector<std::string>& required = {});
DataFrame load_csv(const std::string& path, const std::vector<std::string>& required = {});
void write_csv(std::ostream& out, const DataFrame& frame);

/// Every column name a spec reads (responses, covariates, options, levels).
std::vector<std::string> referenced_columns(const ModelSpec& spec);

struct Unit {
  double id = 0;
  std::size_t parent = static_cast<std::size_t>(-1);
  std::vector<std::size_t> children;  // units at the next depth, sorted by id
  std::vector<std::size_t> rows;      // only filled at the innermost depth
};

/// Nested clusters, depth 0 = outermost level. Units are ordered by id.
struct Hierarchy {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::vector<std::string> levels;
  std::vector<std::vector<Unit>> units;
  std::vector<std::size_t> row_leaf;  // innermost unit per row, npos if excluded

  std::size_t depth() const { return levels.size(); }
  std::size_t unit_count(std::size_t d) const { return units[d].size(); }
};

/// Groups rows by (outermost, ..., innermost) id. Rows with `include[i] ==
/// false` are skipped; an empty mask includes every row.
Hierarchy build_hierarchy(const DataFrame& frame, const std::vector<std::string>& level_columns,
                          const std::vector<bool>& include = {});

/// Rows used by one outcome with the per-row quantities its family needs.
struct OutcomeRows {
  std::vector<std::size_t> rows;
  std::vector<double> response;
  std::vector<double> event;    // survival only
  std::vector<double> entry;    // survival only, 0 without ltrunc()
  std::vector<double> bhazard;  // survival only, 0 without bhazard()

  std::size_t size() const { return rows.size(); }
};

std::vector<OutcomeRows> split_outcome_rows(const DataFrame& frame, const ModelSpec& spec);

/// Rows used by at least one outcome.
std::vector<bool> used_rows(const std::vector<OutcomeRows>& outcome_rows, std::size_t n);

}  // namespace mlgm
