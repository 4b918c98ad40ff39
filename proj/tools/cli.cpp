#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mlgm/data.hpp"
#include "mlgm/dsl.hpp"
#include "mlgm/fit.hpp"
#include "mlgm/report.hpp"
#include "mlgm/simulate.hpp"
#include "mlgm/validate.hpp"

namespace mlgm::cli {

namespace {

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<std::string, std::string> split_assignment(const std::string& text, const std::string& flag) {
  auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw InputError(flag + " expects name=value, got '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

double to_double(const std::string& text, const std::string& flag) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw InputError(flag + ": '" + text + "' is not a number");
}

std::map<std::string, double> parse_values(const std::vector<std::string>& items, const std::string& flag) {
  std::map<std::string, double> out;
  for (const auto& item : items) {
    auto [name, value] = split_assignment(item, flag);
    out[name] = to_double(value, flag);
  }
  return out;
}

struct ModelArgs {
  std::string spec;
  std::string spec_file;
  std::string redistribution;
  int df = 0;

  void add(CLI::App& app) {
    auto* s = app.add_option("--spec", spec, "Model specification text");
    auto* f = app.add_option("--spec-file", spec_file, "File holding the model specification");
    s->excludes(f);
    app.add_option("--redistribution", redistribution, "Latent-effect distribution for every level")
        ->check(CLI::IsMember({"normal", "t"}));
    app.add_option("--df", df, "Degrees of freedom of the t distribution")->check(CLI::PositiveNumber);
  }

  ModelSpec load() const {
    std::string text;
    if (!spec.empty())
      text = spec;
    else if (!spec_file.empty())
      text = read_file(spec_file);
    else
      throw InputError("one of --spec or --spec-file is required");
    ModelSpec m = parse_model_spec(text);
    if (redistribution.empty() && df == 0) return m;
    for (auto& o : m.outcomes) {
      o.t_distribution.reset();
      o.t_df.reset();
    }
    if (!redistribution.empty()) m.t_distribution = redistribution == "t";
    if (df > 0) m.t_df = df;
    return parse_model_spec(render_spec(m));
  }
};

struct FitArgs {
  ModelArgs model;
  std::string data;
  int points = 7;
  int draws = 0;
  std::size_t skip = 15;
  int threads = 1;
  std::string out;
  std::string format = "doc";
  std::vector<std::string> fix;
  std::vector<std::string> method;
  int max_iter = 300;
  bool quiet = false;

  void add(CLI::App& app) {
    model.add(app);
    app.add_option("--data", data, "CSV data file")->required();
    app.add_option("--points", points, "Adaptive Gauss-Hermite points per dimension")->check(CLI::PositiveNumber);
    app.add_option("--draws", draws, "Quasi-Monte Carlo draws (default 150 per dimension)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--skip", skip, "Initial Halton points discarded");
    app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", out, "Output file (default standard output)");
    app.add_option("--format", format, "Output format")->check(CLI::IsMember({"doc", "csv"}));
    app.add_option("--fix", fix, "Hold a parameter at a value: name=value");
    app.add_option("--method", method, "Integration method for a level: level=aghq|qmc");
    app.add_option("--max-iter", max_iter, "Newton iteration limit")->check(CLI::NonNegativeNumber);
    app.add_flag("--quiet", quiet, "Do not print the iteration log");
  }

  FitOptions options(const Program& program, std::ostream& err) const {
    FitOptions o;
    o.points = points;
    o.draws = draws;
    o.skip = skip;
    o.threads = threads;
    o.fixed = parse_values(fix, "--fix");
    for (const auto& [name, v] : o.fixed) program.param_index(name);
    if (!method.empty()) {
      o.plan = default_plan(program, points, draws);
      o.plan.skip = skip;
      for (const auto& item : method) {
        auto [level, m] = split_assignment(item, "--method");
        std::size_t l = 0;
        while (l < program.levels().size() && program.levels()[l].name != level) ++l;
        if (l == program.levels().size()) throw InputError("--method: unknown level '" + level + "'");
        if (m == "aghq")
          o.plan.levels[l].method = Method::aghq;
        else if (m == "qmc")
          o.plan.levels[l].method = Method::qmc;
        else
          throw InputError("--method: unknown method '" + m + "'");
      }
    }
    o.optimizer.max_iter = max_iter;
    if (!quiet) o.optimizer.log = &err;
    return o;
  }
};

std::unique_ptr<Program> load_program(const FitArgs& a) {
  ModelSpec spec = a.model.load();
  DataFrame frame = load_csv(a.data, referenced_columns(spec));
  ValidationReport report = validate_spec(spec, frame);
  if (!report.ok()) throw InputError("validate: " + report.summary());
  return compile(spec, frame);
}

void emit(const std::string& path, std::ostream& out, const std::string& text) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
}

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  auto program = load_program(a);
  FitResult r = fit(*program, a.options(*program, err));
  std::ostringstream text;
  if (a.format == "csv")
    write_estimates_csv(text, r);
  else
    text << fit_document(*program, r).dump(2) << '\n';
  emit(a.out, out, text.str());
  if (!r.converged) err << "fit: " << r.message << '\n';
  return r.converged ? kConverged : kNotConverged;
}

int cmd_check(const FitArgs& a, int points_step, int draws_factor, std::ostream& out, std::ostream& err) {
  auto program = load_program(a);
  CheckResult c = check_fit(*program, a.options(*program, err), points_step, draws_factor);
  std::ostringstream text;
  if (a.format == "csv")
    write_check_csv(text, c);
  else
    text << check_document(*program, c).dump(2) << '\n';
  emit(a.out, out, text.str());
  bool ok = c.baseline.converged && c.escalated.converged;
  if (!ok) err << "check: a fit did not converge\n";
  return ok ? kConverged : kNotConverged;
}

struct SimArgs {
  ModelArgs model;
  std::string from;
  std::vector<std::size_t> units;
  std::vector<std::string> covariates;
  std::vector<double> times;
  std::vector<std::string> theta;
  double horizon = std::numeric_limits<double>::infinity();
  double censor_rate = 0.0;
  std::uint64_t seed = 1;
  std::string out;

  void add(CLI::App& app) {
    model.add(app);
    app.add_option("--from", from, "Result document of a previous fit (model and parameter values)");
    app.add_option("--units", units, "Units per level, outermost first; optional rows per innermost unit")
        ->delimiter(',')
        ->required();
    app.add_option("--cov", covariates, "Covariate generator name=dist(args)[:level]");
    app.add_option("--times", times, "Time values within each innermost unit")->delimiter(',');
    app.add_option("--theta", theta, "True parameter value name=value");
    app.add_option("--horizon", horizon, "Administrative censoring time")->check(CLI::PositiveNumber);
    app.add_option("--censor-rate", censor_rate, "Rate of exponential censoring")->check(CLI::NonNegativeNumber);
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--out", out, "Output CSV (default standard output)");
  }
};

int cmd_simulate(const SimArgs& a, std::ostream& out) {
  SimConfig cfg;
  if (!a.from.empty()) {
    nlohmann::ordered_json doc;
    try {
      doc = nlohmann::ordered_json::parse(read_file(a.from));
      cfg.spec = parse_model_spec(doc.at("model").get<std::string>());
      for (const auto& p : doc.at("parameters")) cfg.theta[p.at("name").get<std::string>()] = p.at("value").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError("--from: '" + a.from + "' is not a result document (" + e.what() + ")");
    }
    if (!a.model.spec.empty() || !a.model.spec_file.empty()) cfg.spec = a.model.load();
  } else {
    cfg.spec = a.model.load();
  }
  for (const auto& [name, v] : parse_values(a.theta, "--theta")) cfg.theta[name] = v;
  cfg.units = a.units;
  for (const auto& c : a.covariates) cfg.covariates.push_back(parse_generator(c));
  cfg.times = a.times;
  cfg.horizon = a.horizon;
  cfg.censor_rate = a.censor_rate;
  cfg.seed = a.seed;
  DataFrame frame = simulate(cfg);
  std::ostringstream text;
  write_csv(text, frame);
  emit(a.out, out, text.str());
  return kConverged;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilevel generalized models: fit, simulate, check", "mlgm"};
  app.require_subcommand(1);
  FitArgs fit_args, check_args;
  SimArgs sim_args;
  int points_step = 8, draws_factor = 4;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to data");
  fit_args.add(*fit_cmd);
  auto* check_cmd = app.add_subcommand("check", "Refit at a finer integration resolution and report shifts");
  check_args.add(*check_cmd);
  check_cmd->add_option("--points-step", points_step, "Extra quadrature points per dimension")
      ->check(CLI::NonNegativeNumber);
  check_cmd->add_option("--draws-factor", draws_factor, "Multiplier for QMC draws")->check(CLI::PositiveNumber);
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate data from a model");
  sim_args.add(*sim_cmd);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : kInputError;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit_args, out, err);
    if (*check_cmd) return cmd_check(check_args, points_step, draws_factor, out, err);
    return cmd_simulate(sim_args, out);
  } catch (const SpecError& e) {
    err << "dsl: " << e.what() << '\n';
  } catch (const DataError& e) {
    err << "data: " << e.what() << '\n';
  } catch (const SimulationError& e) {
    err << "simulate: " << e.what() << '\n';
  } catch (const OptimError& e) {
    err << "optim: " << e.what() << '\n';
  } catch (const InputError& e) {
    err << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return kInputError;
}

}  // namespace mlgm::cli
