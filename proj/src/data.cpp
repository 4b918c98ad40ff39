#include "mlgm/data.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace mlgm {

bool DataFrame::has(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::span<const double> DataFrame::column(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw DataError("no column named '" + std::string(name) + "'");
  return columns_[it->second];
}

std::span<double> DataFrame::column(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw DataError("no column named '" + std::string(name) + "'");
  return columns_[it->second];
}

void DataFrame::set_column(const std::string& name, std::vector<double> values) {
  if (names_.empty() && rows_ == 0) rows_ = values.size();
  if (values.size() != rows_)
    throw DataError("column '" + name + "' has " + std::to_string(values.size()) + " rows, expected " + std::to_string(rows_));
  if (auto it = index_.find(name); it != index_.end()) {
    columns_[it->second] = std::move(values);
    return;
  }
  index_[name] = names_.size();
  names_.push_back(name);
  columns_.push_back(std::move(values));
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  for (auto& c : cells) {
    auto b = c.find_first_not_of(" \t");
    auto e = c.find_last_not_of(" \t");
    c = b == std::string::npos ? "" : c.substr(b, e - b + 1);
    if (c.size() >= 2 && c.front() == '"' && c.back() == '"') c = c.substr(1, c.size() - 2);
  }
  return cells;
}

bool parse_cell(const std::string& cell, double& out) {
  if (cell.empty() || cell == "." || cell == "NA") {
    out = kMissing;
    return true;
  }
  char* end = nullptr;
  out = std::strtod(cell.c_str(), &end);
  return end != cell.c_str() && *end == '\0';
}

}  // namespace

DataFrame read_csv(std::istream& in, const std::vector<std::string>& required) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input: missing header row");
  std::vector<std::string> header = split_line(line);
  std::set<std::string> strict(required.begin(), required.end());
  for (const auto& name : strict)
    if (std::find(header.begin(), header.end(), name) == header.end())
      throw DataError("CSV has no column named '" + name + "'");

  std::vector<std::vector<double>> cols(header.size());
  std::vector<bool> numeric(header.size(), true);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError("CSV row " + std::to_string(row + 1) + " has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    for (std::size_t j = 0; j < header.size(); ++j) {
      double v = kMissing;
      if (!parse_cell(cells[j], v)) {
        if (strict.empty() || strict.count(header[j]))
          throw DataError("non-numeric value '" + cells[j] + "' in column '" + header[j] + "' at row " + std::to_string(row + 1));
        numeric[j] = false;
        v = kMissing;
      }
      cols[j].push_back(v);
    }
    ++row;
  }
  DataFrame frame(row);
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (!numeric[j]) std::fill(cols[j].begin(), cols[j].end(), kMissing);
    frame.set_column(header[j], std::move(cols[j]));
  }
  return frame;
}

DataFrame load_csv(const std::string& path, const std::vector<std::string>& required) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read data file '" + path + "'");
  return read_csv(in, required);
}

void write_csv(std::ostream& out, const DataFrame& frame) {
  const auto& names = frame.names();
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < frame.rows(); ++i) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      double v = frame.column(names[j])[i];
      if (j) out << ',';
      if (!is_missing(v)) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
      }
    }
    out << '\n';
  }
}

namespace {

void collect_element_columns(const Element& e, std::vector<std::string>& out) {
  if (const auto* c = std::get_if<Covariate>(&e)) out.push_back(c->column);
  if (const auto* l = std::get_if<Latent>(&e)) out.insert(out.end(), l->path.begin(), l->path.end());
}

// Columns an outcome's linear predictor reads, following EV links.
std::vector<std::string> predictor_columns(const ModelSpec& spec, std::size_t k) {
  std::vector<std::string> cols;
  std::set<std::size_t> seen;
  std::vector<std::size_t> stack{k};
  while (!stack.empty()) {
    std::size_t j = stack.back();
    stack.pop_back();
    if (!seen.insert(j).second) continue;
    for (const auto& c : spec.outcomes[j].components)
      for (const auto& e : c.elements) {
        collect_element_columns(e, cols);
        if (const auto* ev = std::get_if<EvLink>(&e)) stack.push_back(spec.resolve_target(*ev));
      }
  }
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  return cols;
}

bool is_integer_text(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

std::vector<std::string> referenced_columns(const ModelSpec& spec) {
  std::vector<std::string> cols;
  for (const auto& o : spec.outcomes) {
    if (o.response) cols.push_back(*o.response);
    if (o.timevar) cols.push_back(*o.timevar);
    for (const auto* s : {&o.family.failure, &o.family.ltrunc, &o.family.bhazard})
      if (!s->empty()) cols.push_back(*s);
    if (!o.family.trials.empty() && !is_integer_text(o.family.trials)) cols.push_back(o.family.trials);
    for (const auto& c : o.components)
      for (const auto& e : c.elements) collect_element_columns(e, cols);
  }
  for (const auto& l : spec.levels) cols.push_back(l.name);
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  return cols;
}

Hierarchy build_hierarchy(const DataFrame& frame, const std::vector<std::string>& level_columns,
                          const std::vector<bool>& include) {
  Hierarchy h;
  h.levels = level_columns;
  h.row_leaf.assign(frame.rows(), Hierarchy::npos);
  std::size_t D = level_columns.size();
  h.units.resize(D);
  if (D == 0) return h;

  std::vector<std::span<const double>> ids;
  for (const auto& name : level_columns) {
    if (!frame.has(name)) throw DataError("level column '" + name + "' not found");
    ids.push_back(frame.column(name));
  }
  // Strict nesting: each id at depth d > 0 has a single parent id.
  std::vector<std::map<double, double>> parent_of(D);
  std::vector<std::set<double>> seen(D);
  for (std::size_t i = 0; i < frame.rows(); ++i) {
    if (!include.empty() && !include[i]) continue;
    for (std::size_t d = 0; d < D; ++d) {
      double id = ids[d][i];
      if (is_missing(id)) throw DataError("missing id in level column '" + level_columns[d] + "' at row " + std::to_string(i + 1));
      seen[d].insert(id);
      if (d > 0) {
        auto [it, inserted] = parent_of[d].emplace(id, ids[d - 1][i]);
        if (!inserted && it->second != ids[d - 1][i]) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s %g appears under two different %s units (%g and %g); nesting must be strict",
                        level_columns[d].c_str(), id, level_columns[d - 1].c_str(), it->second, ids[d - 1][i]);
          throw DataError(buf);
        }
      }
    }
  }
  std::vector<std::map<double, std::size_t>> index(D);
  for (std::size_t d = 0; d < D; ++d) {
    for (double id : seen[d]) {
      index[d][id] = h.units[d].size();
      Unit u;
      u.id = id;
      if (d > 0) u.parent = index[d - 1].at(parent_of[d].at(id));
      h.units[d].push_back(std::move(u));
    }
    if (d > 0)
      for (std::size_t u = 0; u < h.units[d].size(); ++u) h.units[d - 1][h.units[d][u].parent].children.push_back(u);
  }
  for (std::size_t i = 0; i < frame.rows(); ++i) {
    if (!include.empty() && !include[i]) continue;
    std::size_t leaf = index[D - 1].at(ids[D - 1][i]);
    h.row_leaf[i] = leaf;
    h.units[D - 1][leaf].rows.push_back(i);
  }
  return h;
}

std::vector<OutcomeRows> split_outcome_rows(const DataFrame& frame, const ModelSpec& spec) {
  std::vector<OutcomeRows> out(spec.outcomes.size());
  for (std::size_t k = 0; k < spec.outcomes.size(); ++k) {
    const auto& o = spec.outcomes[k];
    OutcomeRows& r = out[k];
    if (o.family.kind == FamilyKind::null) continue;
    std::string where = "outcome " + std::to_string(k + 1);
    bool survival = is_survival(o.family.kind) || !o.family.hazard.empty() || !o.family.cumhazard.empty();
    auto y = frame.column(*o.response);
    std::span<const double> fail, t0, bh;
    if (!o.family.failure.empty()) fail = frame.column(o.family.failure);
    if (!o.family.ltrunc.empty()) t0 = frame.column(o.family.ltrunc);
    if (!o.family.bhazard.empty()) bh = frame.column(o.family.bhazard);
    std::vector<std::span<const double>> used;
    std::vector<std::string> used_names = predictor_columns(spec, k);
    if (o.timevar && !survival) used_names.push_back(*o.timevar);
    for (const auto& l : spec.levels) used_names.push_back(l.name);
    for (const auto& name : used_names) used.push_back(frame.column(name));

    for (std::size_t i = 0; i < frame.rows(); ++i) {
      bool take = survival && !fail.empty() ? !is_missing(fail[i]) : !is_missing(y[i]);
      if (!take) continue;
      if (is_missing(y[i])) throw DataError(where + ": missing response at row " + std::to_string(i + 1));
      for (std::size_t c = 0; c < used.size(); ++c)
        if (is_missing(used[c][i]))
          throw DataError(where + ": missing value in column '" + used_names[c] + "' at row " + std::to_string(i + 1));
      r.rows.push_back(i);
      r.response.push_back(y[i]);
      if (survival) {
        double d = fail.empty() ? 1.0 : fail[i];
        double entry = t0.empty() ? 0.0 : t0[i];
        double h = bh.empty() ? 0.0 : bh[i];
        if (d != 0.0 && d != 1.0) throw DataError(where + ": failure indicator must be 0/1 at row " + std::to_string(i + 1));
        if (!(y[i] > 0)) throw DataError(where + ": survival time must be positive at row " + std::to_string(i + 1));
        if (is_missing(entry) || entry < 0 || entry >= y[i])
          throw DataError(where + ": entry time must satisfy 0 <= t0 < y at row " + std::to_string(i + 1));
        if (is_missing(h) || h < 0) throw DataError(where + ": expected hazard must be >= 0 at row " + std::to_string(i + 1));
        r.event.push_back(d);
        r.entry.push_back(entry);
        r.bhazard.push_back(h);
      }
    }
    if (r.rows.empty()) throw DataError(where + " has zero usable rows");
  }
  return out;
}

std::vector<bool> used_rows(const std::vector<OutcomeRows>& outcome_rows, std::size_t n) {
  std::vector<bool> used(n, false);
  for (const auto& r : outcome_rows)
    for (std::size_t i : r.rows) used[i] = true;
  return used;
}

}  // namespace mlgm
