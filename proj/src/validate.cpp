#include "mlgm/validate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace mlgm {

std::string ValidationReport::summary() const {
  std::ostringstream os;
  os << levels << " level" << (levels == 1 ? "" : "s") << ", " << latent_effects << " latent effect"
     << (latent_effects == 1 ? "" : "s");
  for (std::size_t l = 0; l < level_names.size(); ++l) os << "; " << level_names[l] << ": " << units_per_level[l] << " units";
  for (const auto& issue : issues) {
    os << "\n  error";
    if (issue.outcome) os << " (outcome " << issue.outcome;
    if (issue.outcome && issue.position) os << ", element " << issue.position;
    if (issue.outcome) os << ")";
    os << ": " << issue.message;
  }
  return os.str();
}

ValidationReport validate_spec(const ModelSpec& spec, const DataFrame& frame) {
  ValidationReport rep;
  rep.latent_effects = spec.latents.size();
  rep.levels = spec.levels.size() + 1;

  auto need = [&](std::size_t k, std::size_t pos, const std::string& col, const char* role) {
    if (!frame.has(col)) rep.issues.push_back({k, pos, std::string(role) + " column '" + col + "' not found in data"});
  };

  for (std::size_t k = 0; k < spec.outcomes.size(); ++k) {
    const auto& o = spec.outcomes[k];
    std::size_t K = k + 1;
    if (o.response) need(K, 0, *o.response, "response");
    if (o.timevar) need(K, 0, *o.timevar, "timevar");
    if (!o.family.failure.empty()) need(K, 0, o.family.failure, "failure");
    if (!o.family.ltrunc.empty()) need(K, 0, o.family.ltrunc, "ltrunc");
    if (!o.family.bhazard.empty()) need(K, 0, o.family.bhazard, "bhazard");
    for (std::size_t c = 0; c < o.components.size(); ++c)
      for (const auto& e : o.components[c].elements) {
        if (const auto* cov = std::get_if<Covariate>(&e)) need(K, c + 1, cov->column, "covariate");
        if (const auto* lat = std::get_if<Latent>(&e))
          for (const auto& p : lat->path) need(K, c + 1, p, "level");
      }

    // Failure indicator must be 0/1 and entry times must precede exits.
    if (!o.family.failure.empty() && frame.has(o.family.failure) && o.response && frame.has(*o.response)) {
      auto d = frame.column(o.family.failure);
      auto y = frame.column(*o.response);
      for (std::size_t i = 0; i < frame.rows(); ++i) {
        if (is_missing(d[i])) continue;
        if (d[i] != 0 && d[i] != 1) {
          rep.issues.push_back({K, 0, "failure column '" + o.family.failure + "' is not 0/1 at row " + std::to_string(i + 1)});
          break;
        }
      }
      if (!o.family.ltrunc.empty() && frame.has(o.family.ltrunc)) {
        auto t0 = frame.column(o.family.ltrunc);
        for (std::size_t i = 0; i < frame.rows(); ++i) {
          if (is_missing(d[i]) || is_missing(t0[i]) || is_missing(y[i])) continue;
          if (t0[i] > y[i]) {
            rep.issues.push_back({K, 0, "ltrunc exceeds response time at row " + std::to_string(i + 1)});
            break;
          }
        }
      }
    }
  }
  if (!rep.ok()) return rep;

  try {
    auto rows = split_outcome_rows(frame, spec);
    for (std::size_t k = 0; k < spec.outcomes.size(); ++k) {
      const auto& o = spec.outcomes[k];
      auto bad = [&](auto&& pred, const std::string& what) {
        for (std::size_t r = 0; r < rows[k].size(); ++r)
          if (!pred(rows[k].response[r], rows[k].rows[r])) {
            rep.issues.push_back({k + 1, 0, "response must be " + what + " (row " + std::to_string(rows[k].rows[r] + 1) + ")"});
            return;
          }
      };
      auto count = [](double y, std::size_t) { return y >= 0 && y == std::floor(y); };
      switch (o.family.kind) {
        case FamilyKind::poisson:
        case FamilyKind::negbinomial:
          bad(count, "a non-negative integer");
          break;
        case FamilyKind::bernoulli:
          bad([](double y, std::size_t) { return y == 0 || y == 1; }, "0 or 1");
          break;
        case FamilyKind::beta:
          bad([](double y, std::size_t) { return y > 0 && y < 1; }, "strictly between 0 and 1");
          break;
        case FamilyKind::binomial: {
          const std::string& tr = o.family.trials;
          bool literal = !tr.empty() && std::all_of(tr.begin(), tr.end(), ::isdigit);
          if (!literal && !frame.has(tr)) {
            rep.issues.push_back({k + 1, 0, "trials column '" + tr + "' not found in data"});
            break;
          }
          auto n = literal ? std::span<const double>() : frame.column(tr);
          double fixed_n = literal ? std::stod(tr) : 0;
          bad([&](double y, std::size_t i) { return count(y, i) && y <= (literal ? fixed_n : n[i]); },
              "an integer between 0 and the number of trials");
          break;
        }
        default:
          if (is_survival(o.family.kind)) bad([](double y, std::size_t) { return y > 0; }, "a positive time");
      }
    }
    if (!rep.ok()) return rep;
    std::vector<std::string> level_cols;
    for (const auto& l : spec.levels) level_cols.push_back(l.name);
    Hierarchy h = build_hierarchy(frame, level_cols, used_rows(rows, frame.rows()));
    for (std::size_t d = 0; d < h.depth(); ++d) {
      rep.level_names.push_back(h.levels[d]);
      rep.units_per_level.push_back(h.unit_count(d));
    }
  } catch (const std::exception& e) {
    rep.issues.push_back({0, 0, e.what()});
  }
  return rep;
}

}  // namespace mlgm
