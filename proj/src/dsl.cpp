#include "mlgm/dsl.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>

namespace mlgm {

namespace {

struct FamilyEntry {
  std::string_view name;
  FamilyKind kind;
};

constexpr FamilyEntry kFamilies[] = {
    {"gaussian", FamilyKind::gaussian},       {"poisson", FamilyKind::poisson},
    {"bernoulli", FamilyKind::bernoulli},     {"beta", FamilyKind::beta},
    {"binomial", FamilyKind::binomial},       {"negbinomial", FamilyKind::negbinomial},
    {"nbinomial", FamilyKind::negbinomial},   {"exponential", FamilyKind::exponential},
    {"weibull", FamilyKind::weibull},         {"gompertz", FamilyKind::gompertz},
    {"lognormal", FamilyKind::lognormal},     {"loglogistic", FamilyKind::loglogistic},
    {"rp", FamilyKind::rp},                   {"user", FamilyKind::user},
    {"null", FamilyKind::null},
};

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::optional<EvKind> ev_kind_from(std::string_view id) {
  if (id == "EV") return EvKind::ev;
  if (id == "dEV") return EvKind::dev;
  if (id == "d2EV") return EvKind::d2ev;
  if (id == "iEV") return EvKind::iev;
  return std::nullopt;
}

bool is_integer_literal(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

/// One `key(args)` or bare `key` option with the source position of the key.
struct RawOption {
  std::string key;
  std::optional<std::string> args;
  std::size_t pos = 0;
  std::size_t args_pos = 0;
};

class Parser {
 public:
  explicit Parser(std::string_view text, std::size_t base = 0) : s_(text), base_(base) {}

  ModelSpec parse_spec() {
    ModelSpec spec;
    skip_ws();
    if (at_end()) fail("empty model specification");
    while (!at_end() && peek() == '(') {
      spec.outcomes.push_back(parse_outcome());
      skip_ws();
    }
    if (spec.outcomes.empty()) fail("expected '(' to open an outcome");
    skip_ws();
    if (!at_end()) {
      if (peek() != ',') fail("expected ',' or '(' after outcome");
      ++pos_;
      for (const auto& opt : parse_options(false)) apply_global_option(spec, opt);
    }
    skip_ws();
    if (!at_end()) fail("unexpected trailing text");
    return spec;
  }

  std::vector<RawOption> parse_options(bool stop_at_paren) {
    std::vector<RawOption> out;
    for (;;) {
      skip_ws();
      if (at_end() || (stop_at_paren && peek() == ')')) break;
      RawOption opt;
      opt.pos = here();
      opt.key = ident("option name");
      if (!at_end() && peek() == '(') {
        ++pos_;
        opt.args_pos = here();
        opt.args = balanced();
      }
      out.push_back(std::move(opt));
    }
    return out;
  }

 private:
  std::string_view s_;
  std::size_t base_;
  std::size_t pos_ = 0;

  std::size_t here() const { return base_ + pos_; }
  bool at_end() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw SpecError("syntax error at position " + std::to_string(here()) + ": " + msg, here());
  }
  void expect(char c) {
    skip_ws();
    if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string ident(const char* what) {
    skip_ws();
    if (at_end() || !is_ident_start(peek())) fail(std::string("expected ") + what);
    std::size_t start = pos_;
    while (!at_end() && is_ident_char(peek())) ++pos_;
    return std::string(s_.substr(start, pos_ - start));
  }
  // Text up to the matching ')'; the opening '(' has been consumed.
  std::string balanced() {
    std::size_t start = pos_;
    int depth = 1;
    while (!at_end()) {
      char c = peek();
      if (c == '(') ++depth;
      if (c == ')' && --depth == 0) {
        std::string inner(s_.substr(start, pos_ - start));
        ++pos_;
        return inner;
      }
      ++pos_;
    }
    fail("unbalanced parenthesis");
  }
  std::vector<double> numbers_until_paren() {
    std::vector<double> out;
    for (;;) {
      skip_ws();
      if (at_end()) fail("expected ')'");
      if (peek() == ')') {
        ++pos_;
        return out;
      }
      const char* begin = s_.data() + pos_;
      char* end = nullptr;
      double v = std::strtod(begin, &end);
      if (end == begin || static_cast<std::size_t>(end - s_.data()) > s_.size()) fail("expected a number");
      pos_ += static_cast<std::size_t>(end - begin);
      out.push_back(v);
    }
  }

  OutcomeSpec parse_outcome() {
    std::size_t open = here();
    expect('(');
    OutcomeSpec out;
    std::vector<Component> terms;
    std::vector<std::size_t> term_pos;
    for (;;) {
      skip_ws();
      if (at_end()) fail("unterminated outcome opened at position " + std::to_string(open));
      if (peek() == ',' || peek() == ')') break;
      term_pos.push_back(here());
      terms.push_back(parse_term());
    }
    bool have_family = false;
    if (peek() == ',') {
      ++pos_;
      for (const auto& opt : parse_options(true)) have_family |= apply_outcome_option(out, opt);
    }
    expect(')');
    if (!have_family) throw SpecError("outcome at position " + std::to_string(open) + " has no family() option", open);

    if (out.family.kind != FamilyKind::null) {
      if (terms.empty()) throw SpecError("outcome at position " + std::to_string(open) + " has no response variable", open);
      const Component& first = terms.front();
      const auto* cov = first.elements.size() == 1 ? std::get_if<Covariate>(&first.elements[0]) : nullptr;
      if (cov == nullptr || first.coefficient)
        throw SpecError("syntax error at position " + std::to_string(term_pos[0]) + ": response must be a plain variable name",
                        term_pos[0]);
      out.response = cov->column;
      terms.erase(terms.begin());
    }
    out.components = std::move(terms);
    return out;
  }

  Component parse_term() {
    Component c;
    c.elements.push_back(parse_factor());
    for (;;) {
      if (!at_end() && peek() == '#') {
        ++pos_;
        c.elements.push_back(parse_factor());
        continue;
      }
      break;
    }
    if (!at_end() && peek() == '@') {
      ++pos_;
      c.coefficient = ident("coefficient name after '@'");
    }
    return c;
  }

  Element parse_factor() {
    skip_ws();
    std::size_t start = here();
    std::string id = ident("model element");
    if (auto kind = ev_kind_from(id); kind && !at_end() && peek() == '[') {
      ++pos_;
      skip_ws();
      std::size_t t0 = pos_;
      while (!at_end() && is_ident_char(peek())) ++pos_;
      std::string target(s_.substr(t0, pos_ - t0));
      if (target.empty()) fail("expected outcome reference inside " + id + "[]");
      expect(']');
      return EvLink{*kind, target};
    }
    if (std::isupper(static_cast<unsigned char>(id[0]))) {
      if (at_end() || peek() != '[')
        throw SpecError("syntax error at position " + std::to_string(start) + ": latent effect " + id +
                            " requires a level specification such as " + id + "[id]",
                        start);
      ++pos_;
      return Latent{id, parse_level_path()};
    }
    if (id == "fp" && !at_end() && peek() == '(') {
      ++pos_;
      auto powers = numbers_until_paren();
      if (powers.empty()) fail("fp() requires at least one power");
      std::sort(powers.begin(), powers.end());
      return FracPoly{powers};
    }
    if (id == "rcs" && !at_end() && peek() == '(') {
      ++pos_;
      std::size_t inner_pos = here();
      std::string inner = balanced();
      Spline sp;
      Parser sub(inner, inner_pos);
      for (const auto& opt : sub.parse_options(false)) {
        if (opt.key == "df" && opt.args) {
          sp.df = parse_int(*opt.args, opt.args_pos, "rcs df");
        } else if (opt.key == "knots" && opt.args) {
          sp.knots = parse_number_list(*opt.args, opt.args_pos);
        } else if (opt.key == "log" && !opt.args) {
          sp.log_time = true;
        } else {
          throw SpecError("syntax error at position " + std::to_string(opt.pos) + ": unknown rcs() option " + opt.key, opt.pos);
        }
      }
      if (sp.knots.empty() && sp.df < 1) throw SpecError("rcs() needs df(#) >= 1 or knots()", start);
      if (!sp.knots.empty()) {
        if (sp.knots.size() < 2) throw SpecError("rcs() needs at least 2 knots", start);
        if (!std::is_sorted(sp.knots.begin(), sp.knots.end()) ||
            std::adjacent_find(sp.knots.begin(), sp.knots.end()) != sp.knots.end())
          throw SpecError("rcs() knots must be strictly increasing", start);
        sp.df = static_cast<int>(sp.knots.size()) - 1;
      }
      return sp;
    }
    if (id == "_cons") return Intercept{};
    return Covariate{id};
  }

  std::vector<std::string> parse_level_path() {
    std::vector<std::string> names{ident("cluster variable")};
    char sep = 0;
    for (;;) {
      skip_ws();
      if (at_end()) fail("expected ']'");
      char c = peek();
      if (c == ']') {
        ++pos_;
        break;
      }
      if (c != '>' && c != '<') fail("expected '>', '<' or ']' in level specification");
      if (sep != 0 && sep != c) fail("cannot mix '<' and '>' in one level specification");
      sep = c;
      ++pos_;
      names.push_back(ident("cluster variable"));
    }
    if (sep == '<') std::reverse(names.begin(), names.end());
    return names;
  }

  static int parse_int(const std::string& text, std::size_t pos, const char* what) {
    std::string t = text;
    t.erase(std::remove_if(t.begin(), t.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }), t.end());
    if (!is_integer_literal(t))
      throw SpecError("syntax error at position " + std::to_string(pos) + ": " + what + " must be a non-negative integer", pos);
    return std::stoi(t);
  }

  static std::vector<double> parse_number_list(const std::string& text, std::size_t pos) {
    std::vector<double> out;
    const char* p = text.c_str();
    for (;;) {
      while (*p != 0 && std::isspace(static_cast<unsigned char>(*p))) ++p;
      if (*p == 0) break;
      char* end = nullptr;
      double v = std::strtod(p, &end);
      if (end == p) throw SpecError("syntax error at position " + std::to_string(pos) + ": expected numbers", pos);
      out.push_back(v);
      p = end;
    }
    return out;
  }

  static std::string single_word(const RawOption& opt) {
    if (!opt.args) throw SpecError("option " + opt.key + "() requires an argument", opt.pos);
    std::string t = *opt.args;
    auto b = t.find_first_not_of(" \t\r\n");
    auto e = t.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) throw SpecError("option " + opt.key + "() requires an argument", opt.pos);
    t = t.substr(b, e - b + 1);
    if (!std::all_of(t.begin(), t.end(), is_ident_char))
      throw SpecError("syntax error at position " + std::to_string(opt.args_pos) + ": bad argument to " + opt.key + "()",
                      opt.args_pos);
    return t;
  }

  static Covariance parse_covariance(const RawOption& opt) {
    std::string v = single_word(opt);
    if (v == "independent" || v == "ind") return Covariance::independent;
    if (v == "unstructured" || v == "un") return Covariance::unstructured;
    throw SpecError("unknown covariance structure '" + v + "'", opt.args_pos);
  }

  static bool parse_redistribution(const RawOption& opt) {
    std::string v = single_word(opt);
    if (v == "t") return true;
    if (v == "normal" || v == "gaussian") return false;
    throw SpecError("unknown random-effect distribution '" + v + "'", opt.args_pos);
  }

  static void apply_global_option(ModelSpec& spec, const RawOption& opt) {
    if (opt.key == "covariance") {
      spec.covariance = parse_covariance(opt);
    } else if (opt.key == "redistribution") {
      spec.t_distribution = parse_redistribution(opt);
    } else if (opt.key == "df" && opt.args) {
      spec.t_df = parse_int(*opt.args, opt.args_pos, "df");
    } else {
      throw SpecError("unknown option '" + opt.key + "' at position " + std::to_string(opt.pos), opt.pos);
    }
  }

  // Returns true if the option was family().
  static bool apply_outcome_option(OutcomeSpec& out, const RawOption& opt) {
    if (opt.key == "family") {
      if (!opt.args) throw SpecError("family() requires a distribution name", opt.pos);
      parse_family(out.family, *opt.args, opt.args_pos);
      return true;
    }
    if (opt.key == "timevar") {
      out.timevar = single_word(opt);
    } else if (opt.key == "np") {
      if (!opt.args) throw SpecError("np() requires an argument", opt.pos);
      out.np = parse_int(*opt.args, opt.args_pos, "np");
    } else if (opt.key == "nocons" || opt.key == "noconstant") {
      out.constant = false;
    } else if (opt.key == "covariance") {
      out.covariance = parse_covariance(opt);
    } else if (opt.key == "redistribution") {
      out.t_distribution = parse_redistribution(opt);
    } else if (opt.key == "df" && opt.args) {
      out.t_df = parse_int(*opt.args, opt.args_pos, "df");
    } else {
      throw SpecError("unknown option '" + opt.key + "' at position " + std::to_string(opt.pos), opt.pos);
    }
    return false;
  }

  static void parse_family(FamilyOptions& fam, const std::string& text, std::size_t pos) {
    auto comma = text.find(',');
    std::string name = text.substr(0, comma);
    auto b = name.find_first_not_of(" \t\r\n");
    auto e = name.find_last_not_of(" \t\r\n");
    name = b == std::string::npos ? "" : name.substr(b, e - b + 1);
    auto it = std::find_if(std::begin(kFamilies), std::end(kFamilies), [&](const FamilyEntry& f) { return f.name == name; });
    if (it == std::end(kFamilies)) throw SpecError("unknown family '" + name + "'", pos);
    fam.kind = it->kind;
    if (comma == std::string::npos) return;
    Parser sub(std::string_view(text).substr(comma + 1), pos + comma + 1);
    for (const auto& opt : sub.parse_options(false)) {
      const std::string& k = opt.key;
      if (k == "failure") {
        fam.failure = single_word(opt);
      } else if (k == "ltrunc") {
        fam.ltrunc = single_word(opt);
      } else if (k == "bhazard") {
        fam.bhazard = single_word(opt);
      } else if (k == "scale") {
        fam.scale = single_word(opt);
        if (fam.scale != "h" && fam.scale != "hazard")
          throw SpecError("only scale(h) (log cumulative hazard) is supported", opt.args_pos);
        fam.scale = "h";
      } else if (k == "df" && opt.args) {
        fam.df = parse_int(*opt.args, opt.args_pos, "df");
      } else if (k == "knots" && opt.args) {
        fam.knots = parse_number_list(*opt.args, opt.args_pos);
      } else if (k == "trials" || k == "n") {
        fam.trials = single_word(opt);
      } else if (k == "loglf" || k == "llf" || k == "loglfunction") {
        fam.loglf = single_word(opt);
      } else if (k == "hfunction" || k == "hazard") {
        fam.hazard = single_word(opt);
      } else if (k == "cumhazard" || k == "chfunction") {
        fam.cumhazard = single_word(opt);
      } else {
        throw SpecError("unknown family option '" + k + "' at position " + std::to_string(opt.pos), opt.pos);
      }
    }
  }
};

void check_family(const OutcomeSpec& out, std::size_t k) {
  const auto& f = out.family;
  std::string where = "outcome " + std::to_string(k + 1);
  if (f.kind == FamilyKind::null) {
    if (out.response) throw SpecError(where + ": null family takes no response");
    if (!f.failure.empty()) throw SpecError(where + ": null family takes no failure()");
    return;
  }
  if (is_survival(f.kind) && f.failure.empty()) throw SpecError(where + ": survival family requires failure()");
  if (f.kind == FamilyKind::rp) {
    if (f.knots.empty() && f.df < 1) throw SpecError(where + ": rp family requires df(#) >= 1 or knots()");
    if (!f.knots.empty()) {
      if (f.knots.size() < 2) throw SpecError(where + ": rp knots() needs at least 2 knots");
      if (f.df != 0 && f.df != static_cast<int>(f.knots.size()) - 1)
        throw SpecError(where + ": rp df() disagrees with the number of knots");
    }
  }
  if (f.kind == FamilyKind::binomial && f.trials.empty()) throw SpecError(where + ": binomial family requires trials()");
  if (f.kind == FamilyKind::user) {
    if (f.loglf.empty() && f.hazard.empty() && f.cumhazard.empty())
      throw SpecError(where + ": user family requires loglf(), hfunction() or cumhazard()");
    if (!f.loglf.empty() && (!f.hazard.empty() || !f.cumhazard.empty()))
      throw SpecError(where + ": user family takes either loglf() or hazard hooks, not both");
  } else if (!f.loglf.empty() || !f.hazard.empty() || !f.cumhazard.empty()) {
    throw SpecError(where + ": loglf()/hfunction()/cumhazard() are only valid with family(user)");
  }
  if (!is_survival(f.kind) && (!f.ltrunc.empty() || !f.bhazard.empty()))
    throw SpecError(where + ": ltrunc()/bhazard() require a survival family");
}

void render_element(std::string& out, const Element& e) {
  std::visit(
      [&](const auto& el) {
        using T = std::decay_t<decltype(el)>;
        if constexpr (std::is_same_v<T, Covariate>) {
          out += el.column;
        } else if constexpr (std::is_same_v<T, Intercept>) {
          out += "_cons";
        } else if constexpr (std::is_same_v<T, Latent>) {
          out += el.name + "[";
          for (std::size_t i = 0; i < el.path.size(); ++i) out += (i ? ">" : "") + el.path[i];
          out += "]";
        } else if constexpr (std::is_same_v<T, FracPoly>) {
          out += "fp(";
          for (std::size_t i = 0; i < el.powers.size(); ++i) out += (i ? " " : "") + format_number(el.powers[i]);
          out += ")";
        } else if constexpr (std::is_same_v<T, Spline>) {
          out += "rcs(";
          if (el.knots.empty()) {
            out += "df(" + std::to_string(el.df) + ")";
          } else {
            out += "knots(";
            for (std::size_t i = 0; i < el.knots.size(); ++i) out += (i ? " " : "") + format_number(el.knots[i]);
            out += ")";
          }
          if (el.log_time) out += " log";
          out += ")";
        } else {
          out += std::string(ev_name(el.kind)) + "[" + el.target + "]";
        }
      },
      e);
}

std::string_view covariance_name(Covariance c) { return c == Covariance::independent ? "independent" : "unstructured"; }

}  // namespace

std::string_view family_name(FamilyKind kind) {
  for (const auto& f : kFamilies)
    if (f.kind == kind) return f.name;
  return "?";
}

bool is_survival(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::exponential:
    case FamilyKind::weibull:
    case FamilyKind::gompertz:
    case FamilyKind::lognormal:
    case FamilyKind::loglogistic:
    case FamilyKind::rp:
      return true;
    default:
      return false;
  }
}

std::string_view ev_name(EvKind kind) {
  switch (kind) {
    case EvKind::ev:
      return "EV";
    case EvKind::dev:
      return "dEV";
    case EvKind::d2ev:
      return "d2EV";
    case EvKind::iev:
      return "iEV";
  }
  return "EV";
}

bool Component::has_latent() const {
  return std::any_of(elements.begin(), elements.end(), [](const Element& e) { return std::holds_alternative<Latent>(e); });
}

bool Component::has_ev() const {
  return std::any_of(elements.begin(), elements.end(), [](const Element& e) { return std::holds_alternative<EvLink>(e); });
}

std::size_t ModelSpec::resolve_target(const EvLink& link) const {
  if (is_integer_literal(link.target)) {
    std::size_t k = std::stoul(link.target);
    if (k < 1 || k > outcomes.size())
      throw SpecError(std::string(ev_name(link.kind)) + "[" + link.target + "] refers to a non-existent outcome");
    return k - 1;
  }
  std::optional<std::size_t> found;
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    if (outcomes[k].response && *outcomes[k].response == link.target) {
      if (found) throw SpecError("EV target '" + link.target + "' is ambiguous; use the outcome position instead");
      found = k;
    }
  }
  if (!found) throw SpecError("EV target '" + link.target + "' does not name an outcome response");
  return *found;
}

bool ModelSpec::time_dependent(std::size_t outcome) const {
  std::set<std::size_t> visiting;
  std::function<bool(std::size_t)> rec = [&](std::size_t k) -> bool {
    if (!visiting.insert(k).second) return false;
    for (const auto& c : outcomes[k].components) {
      for (const auto& e : c.elements) {
        if (std::holds_alternative<FracPoly>(e) || std::holds_alternative<Spline>(e)) return true;
        if (const auto* ev = std::get_if<EvLink>(&e)) {
          if (ev->kind != EvKind::ev) return true;
          if (rec(resolve_target(*ev))) return true;
        }
      }
    }
    return false;
  };
  return rec(outcome);
}

void finalize_spec(ModelSpec& spec) {
  if (spec.outcomes.empty()) throw SpecError("model specification has no outcomes");
  spec.levels.clear();
  spec.latents.clear();
  spec.evaluation_order.clear();

  // Level chain: every latent path must be a prefix of the longest one.
  std::vector<std::string> chain;
  std::map<std::string, std::vector<std::string>> paths;
  for (std::size_t k = 0; k < spec.outcomes.size(); ++k) {
    const auto& out = spec.outcomes[k];
    check_family(out, k);
    std::set<std::string> coef_in_outcome;
    for (const auto& c : out.components) {
      int vector_elems = 0;
      for (const auto& e : c.elements) {
        if (std::holds_alternative<FracPoly>(e) || std::holds_alternative<Spline>(e)) ++vector_elems;
        const auto* lat = std::get_if<Latent>(&e);
        if (lat == nullptr) continue;
        auto [it, inserted] = paths.emplace(lat->name, lat->path);
        if (!inserted && it->second != lat->path)
          throw SpecError("latent effect " + lat->name + " is used with inconsistent level paths");
        if (lat->path.size() > chain.size()) {
          if (!std::equal(chain.begin(), chain.end(), lat->path.begin()))
            throw SpecError("level paths do not form a single nesting chain (at " + lat->name + ")");
          chain = lat->path;
        } else if (!std::equal(lat->path.begin(), lat->path.end(), chain.begin())) {
          throw SpecError("level paths do not form a single nesting chain (at " + lat->name + ")");
        }
      }
      if (vector_elems > 1)
        throw SpecError("outcome " + std::to_string(k + 1) + ": a component may contain at most one fp()/rcs() element");
    }
  }
  // Paths seen before the chain grew must still be prefixes.
  for (const auto& [name, path] : paths)
    if (!std::equal(path.begin(), path.end(), chain.begin()))
      throw SpecError("level paths do not form a single nesting chain (at " + name + ")");

  for (const auto& name : chain) spec.levels.push_back(LevelSpec{name, Covariance::independent, {}, {}});
  for (const auto& out : spec.outcomes)
    for (const auto& c : out.components)
      for (const auto& e : c.elements)
        if (const auto* lat = std::get_if<Latent>(&e); lat && !spec.latents.count(lat->name)) {
          std::size_t level = lat->path.size() - 1;
          spec.latents[lat->name] = LatentInfo{level, spec.levels[level].latents.size()};
          spec.levels[level].latents.push_back(lat->name);
        }

  // Per-level covariance and distribution: outcome-level settings win over
  // spec-level ones; conflicting outcome-level settings are an error.
  for (std::size_t l = 0; l < spec.levels.size(); ++l) {
    std::optional<Covariance> cov;
    std::optional<bool> tdist;
    std::optional<int> tdf;
    for (const auto& out : spec.outcomes) {
      bool touches = false;
      for (const auto& c : out.components)
        for (const auto& e : c.elements)
          if (const auto* lat = std::get_if<Latent>(&e); lat && lat->path.size() - 1 == l) touches = true;
      if (!touches) continue;
      auto merge = [&](auto& slot, const auto& value, const char* what) {
        if (!value) return;
        if (slot && *slot != *value)
          throw SpecError(std::string("conflicting outcome-level ") + what + " settings for level " + spec.levels[l].name);
        slot = value;
      };
      merge(cov, out.covariance, "covariance");
      merge(tdist, out.t_distribution, "redistribution");
      merge(tdf, out.t_df, "df");
    }
    LevelSpec& lv = spec.levels[l];
    lv.covariance = cov.value_or(spec.covariance.value_or(Covariance::independent));
    lv.distribution.t = tdist.value_or(spec.t_distribution.value_or(false));
    if (lv.distribution.t) {
      int df = tdf.value_or(spec.t_df.value_or(0));
      if (df < 1) throw SpecError("redistribution(t) requires df(#) >= 1 for level " + lv.name);
      lv.distribution.df = df;
    }
  }

  // EV links: resolve targets and order outcomes so targets come first.
  std::size_t n = spec.outcomes.size();
  std::vector<std::set<std::size_t>> deps(n);
  for (std::size_t k = 0; k < n; ++k)
    for (const auto& c : spec.outcomes[k].components)
      for (const auto& e : c.elements)
        if (const auto* ev = std::get_if<EvLink>(&e)) {
          std::size_t j = spec.resolve_target(*ev);
          if (j == k) throw SpecError("outcome " + std::to_string(k + 1) + " links its own expected value (cyclic EV reference)");
          if (is_survival(spec.outcomes[j].family.kind))
            throw SpecError("EV links to survival outcomes are not supported (outcome " + std::to_string(j + 1) + ")");
          deps[k].insert(j);
        }
  std::vector<int> state(n, 0);
  std::function<void(std::size_t)> visit = [&](std::size_t k) {
    if (state[k] == 2) return;
    if (state[k] == 1) throw SpecError("cyclic EV reference involving outcome " + std::to_string(k + 1));
    state[k] = 1;
    for (std::size_t j : deps[k]) visit(j);
    state[k] = 2;
    spec.evaluation_order.push_back(k);
  };
  for (std::size_t k = 0; k < n; ++k) visit(k);

  // Time functions in an outcome that is not survival need a time variable.
  for (std::size_t k = 0; k < n; ++k) {
    const auto& out = spec.outcomes[k];
    bool survival_like = is_survival(out.family.kind) || !out.family.hazard.empty() || !out.family.cumhazard.empty();
    if (survival_like || out.family.kind == FamilyKind::null) continue;
    if (!out.timevar && spec.time_dependent(k))
      throw SpecError("outcome " + std::to_string(k + 1) + " uses a function of time but has no timevar()");
  }

  // A shared @name must have the same width wherever it appears.
  std::map<std::string, std::size_t> widths;
  for (const auto& out : spec.outcomes)
    for (const auto& c : out.components) {
      if (!c.coefficient) continue;
      std::size_t w = 1;
      for (const auto& e : c.elements) {
        if (const auto* fp = std::get_if<FracPoly>(&e)) w = fp->powers.size();
        if (const auto* sp = std::get_if<Spline>(&e)) w = static_cast<std::size_t>(sp->df);
      }
      auto [it, inserted] = widths.emplace(*c.coefficient, w);
      if (!inserted && it->second != w)
        throw SpecError("coefficient @" + *c.coefficient + " is reused with a different number of columns");
    }
}

ModelSpec parse_model_spec(std::string_view text) {
  ModelSpec spec = Parser(text).parse_spec();
  finalize_spec(spec);
  return spec;
}

std::string render_spec(const ModelSpec& spec) {
  std::string out;
  for (std::size_t k = 0; k < spec.outcomes.size(); ++k) {
    const auto& o = spec.outcomes[k];
    if (k) out += " ";
    out += "(";
    bool first = true;
    auto sep = [&] {
      if (!first) out += " ";
      first = false;
    };
    if (o.response) {
      sep();
      out += *o.response;
    }
    for (const auto& c : o.components) {
      sep();
      for (std::size_t i = 0; i < c.elements.size(); ++i) {
        if (i) out += "#";
        render_element(out, c.elements[i]);
      }
      if (c.coefficient) out += "@" + *c.coefficient;
    }
    out += ", family(" + std::string(family_name(o.family.kind));
    std::vector<std::string> fo;
    const auto& f = o.family;
    if (!f.failure.empty()) fo.push_back("failure(" + f.failure + ")");
    if (!f.ltrunc.empty()) fo.push_back("ltrunc(" + f.ltrunc + ")");
    if (!f.bhazard.empty()) fo.push_back("bhazard(" + f.bhazard + ")");
    if (!f.scale.empty()) fo.push_back("scale(" + f.scale + ")");
    if (f.df) fo.push_back("df(" + std::to_string(f.df) + ")");
    if (!f.knots.empty()) {
      std::string s = "knots(";
      for (std::size_t i = 0; i < f.knots.size(); ++i) s += (i ? " " : "") + format_number(f.knots[i]);
      fo.push_back(s + ")");
    }
    if (!f.trials.empty()) fo.push_back("trials(" + f.trials + ")");
    if (!f.loglf.empty()) fo.push_back("loglf(" + f.loglf + ")");
    if (!f.hazard.empty()) fo.push_back("hfunction(" + f.hazard + ")");
    if (!f.cumhazard.empty()) fo.push_back("cumhazard(" + f.cumhazard + ")");
    for (std::size_t i = 0; i < fo.size(); ++i) out += (i ? " " : ", ") + fo[i];
    out += ")";
    if (o.timevar) out += " timevar(" + *o.timevar + ")";
    if (o.np) out += " np(" + std::to_string(o.np) + ")";
    if (!o.constant) out += " nocons";
    if (o.covariance) out += " covariance(" + std::string(covariance_name(*o.covariance)) + ")";
    if (o.t_distribution) out += std::string(" redistribution(") + (*o.t_distribution ? "t" : "normal") + ")";
    if (o.t_df) out += " df(" + std::to_string(*o.t_df) + ")";
    out += ")";
  }
  std::vector<std::string> g;
  if (spec.covariance) g.push_back("covariance(" + std::string(covariance_name(*spec.covariance)) + ")");
  if (spec.t_distribution) g.push_back(std::string("redistribution(") + (*spec.t_distribution ? "t" : "normal") + ")");
  if (spec.t_df) g.push_back("df(" + std::to_string(*spec.t_df) + ")");
  for (std::size_t i = 0; i < g.size(); ++i) out += (i ? " " : ", ") + g[i];
  return out;
}

// --- structured (JSON) form ----------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

ojson element_to_json(const Element& e) {
  return std::visit(
      [](const auto& el) -> ojson {
        using T = std::decay_t<decltype(el)>;
        if constexpr (std::is_same_v<T, Covariate>) {
          return {{"type", "covariate"}, {"column", el.column}};
        } else if constexpr (std::is_same_v<T, Intercept>) {
          return {{"type", "cons"}};
        } else if constexpr (std::is_same_v<T, Latent>) {
          return {{"type", "latent"}, {"name", el.name}, {"levels", el.path}};
        } else if constexpr (std::is_same_v<T, FracPoly>) {
          return {{"type", "fp"}, {"powers", el.powers}};
        } else if constexpr (std::is_same_v<T, Spline>) {
          return {{"type", "rcs"}, {"df", el.df}, {"knots", el.knots}, {"log", el.log_time}};
        } else {
          return {{"type", "ev"}, {"kind", std::string(ev_name(el.kind))}, {"target", el.target}};
        }
      },
      e);
}

Element element_from_json(const ojson& j) {
  std::string type = j.at("type").get<std::string>();
  if (type == "covariate") return Covariate{j.at("column").get<std::string>()};
  if (type == "cons") return Intercept{};
  if (type == "latent") return Latent{j.at("name").get<std::string>(), j.at("levels").get<std::vector<std::string>>()};
  if (type == "fp") return FracPoly{j.at("powers").get<std::vector<double>>()};
  if (type == "rcs")
    return Spline{j.value("df", 0), j.value("knots", std::vector<double>{}), j.value("log", false)};
  if (type == "ev") {
    auto kind = ev_kind_from(j.at("kind").get<std::string>());
    if (!kind) throw SpecError("unknown EV kind in structured spec");
    return EvLink{*kind, j.at("target").get<std::string>()};
  }
  throw SpecError("unknown element type '" + type + "' in structured spec");
}

void put_options(ojson& j, const std::optional<Covariance>& cov, const std::optional<bool>& t, const std::optional<int>& df) {
  if (cov) j["covariance"] = std::string(covariance_name(*cov));
  if (t) j["redistribution"] = *t ? "t" : "normal";
  if (df) j["df"] = *df;
}

void get_options(const ojson& j, std::optional<Covariance>& cov, std::optional<bool>& t, std::optional<int>& df) {
  if (j.contains("covariance")) {
    std::string v = j["covariance"].get<std::string>();
    if (v == "independent") cov = Covariance::independent;
    else if (v == "unstructured") cov = Covariance::unstructured;
    else throw SpecError("unknown covariance '" + v + "' in structured spec");
  }
  if (j.contains("redistribution")) {
    std::string v = j["redistribution"].get<std::string>();
    if (v != "t" && v != "normal") throw SpecError("unknown redistribution '" + v + "' in structured spec");
    t = v == "t";
  }
  if (j.contains("df")) df = j["df"].get<int>();
}

}  // namespace

nlohmann::ordered_json spec_to_json(const ModelSpec& spec) {
  ojson doc;
  doc["outcomes"] = ojson::array();
  for (const auto& o : spec.outcomes) {
    ojson jo;
    if (o.response) jo["response"] = *o.response;
    ojson fam{{"name", std::string(family_name(o.family.kind))}};
    const auto& f = o.family;
    if (!f.failure.empty()) fam["failure"] = f.failure;
    if (!f.ltrunc.empty()) fam["ltrunc"] = f.ltrunc;
    if (!f.bhazard.empty()) fam["bhazard"] = f.bhazard;
    if (!f.scale.empty()) fam["scale"] = f.scale;
    if (f.df) fam["df"] = f.df;
    if (!f.knots.empty()) fam["knots"] = f.knots;
    if (!f.trials.empty()) fam["trials"] = f.trials;
    if (!f.loglf.empty()) fam["loglf"] = f.loglf;
    if (!f.hazard.empty()) fam["hfunction"] = f.hazard;
    if (!f.cumhazard.empty()) fam["cumhazard"] = f.cumhazard;
    jo["family"] = fam;
    if (o.timevar) jo["timevar"] = *o.timevar;
    if (o.np) jo["np"] = o.np;
    if (!o.constant) jo["constant"] = false;
    jo["components"] = ojson::array();
    for (const auto& c : o.components) {
      ojson jc;
      jc["elements"] = ojson::array();
      for (const auto& e : c.elements) jc["elements"].push_back(element_to_json(e));
      if (c.coefficient) jc["coefficient"] = *c.coefficient;
      jo["components"].push_back(jc);
    }
    put_options(jo, o.covariance, o.t_distribution, o.t_df);
    doc["outcomes"].push_back(jo);
  }
  ojson g = ojson::object();
  put_options(g, spec.covariance, spec.t_distribution, spec.t_df);
  doc["options"] = g;
  return doc;
}

ModelSpec spec_from_json(const nlohmann::ordered_json& doc) {
  ModelSpec spec;
  try {
    for (const auto& jo : doc.at("outcomes")) {
      OutcomeSpec o;
      if (jo.contains("response")) o.response = jo["response"].get<std::string>();
      const auto& fam = jo.at("family");
      std::string name = fam.at("name").get<std::string>();
      auto it = std::find_if(std::begin(kFamilies), std::end(kFamilies), [&](const FamilyEntry& f) { return f.name == name; });
      if (it == std::end(kFamilies)) throw SpecError("unknown family '" + name + "'");
      o.family.kind = it->kind;
      o.family.failure = fam.value("failure", "");
      o.family.ltrunc = fam.value("ltrunc", "");
      o.family.bhazard = fam.value("bhazard", "");
      o.family.scale = fam.value("scale", "");
      o.family.df = fam.value("df", 0);
      o.family.knots = fam.value("knots", std::vector<double>{});
      o.family.trials = fam.value("trials", "");
      o.family.loglf = fam.value("loglf", "");
      o.family.hazard = fam.value("hfunction", "");
      o.family.cumhazard = fam.value("cumhazard", "");
      if (jo.contains("timevar")) o.timevar = jo["timevar"].get<std::string>();
      o.np = jo.value("np", 0);
      o.constant = jo.value("constant", true);
      for (const auto& jc : jo.at("components")) {
        Component c;
        for (const auto& je : jc.at("elements")) c.elements.push_back(element_from_json(je));
        if (c.elements.empty()) throw SpecError("structured spec has an empty component");
        if (jc.contains("coefficient")) c.coefficient = jc["coefficient"].get<std::string>();
        o.components.push_back(std::move(c));
      }
      get_options(jo, o.covariance, o.t_distribution, o.t_df);
      spec.outcomes.push_back(std::move(o));
    }
    if (doc.contains("options")) get_options(doc["options"], spec.covariance, spec.t_distribution, spec.t_df);
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed structured spec: ") + e.what());
  }
  finalize_spec(spec);
  return spec;
}

}  // namespace mlgm
