#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mlgm/data.hpp"
#include "mlgm/dsl.hpp"

namespace mlgm {

struct ValidationIssue {
  std::size_t outcome = 0;   // 1-based, 0 for spec-wide issues
  std::size_t position = 0;  // 1-based element position within the outcome, 0 if n/a
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  std::size_t levels = 1;  // cluster levels plus the observation level
  std::vector<std::string> level_names;
  std::vector<std::size_t> units_per_level;  // outermost first
  std::size_t latent_effects = 0;

  bool ok() const { return issues.empty(); }
  std::string summary() const;
};

/// Checks a parsed spec against a data frame without throwing.
ValidationReport validate_spec(const ModelSpec& spec, const DataFrame& frame);

}  // namespace mlgm
