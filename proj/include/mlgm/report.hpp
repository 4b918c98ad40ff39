#pragma once

#include <iosfwd>

#include <json.hpp>

#include "mlgm/fit.hpp"

namespace mlgm {

/// Ordered result document. Contains no timings, so identical inputs give
/// identical text.
nlohmann::ordered_json fit_document(const Program& program, const FitResult& result);

/// name,estimate,se,lower,upper,fixed with full precision.
void write_estimates_csv(std::ostream& out, const FitResult& result);

nlohmann::ordered_json check_document(const Program& program, const CheckResult& check);

/// name,baseline,escalated,shift per table row.
void write_check_csv(std::ostream& out, const CheckResult& check);

std::string format_number(double v);

}  // namespace mlgm
