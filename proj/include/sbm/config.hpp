#pragma once

// Run and sweep configuration: a small TOML subset (sections, scalars,
// strings, flat lists, # comments) mapped onto the library types.

#include <charconv>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "model.hpp"
#include "solver.hpp"

namespace sbm {

struct ConfigValue {
  std::variant<double, bool, std::string, std::vector<double>> v;
  bool integral = false;  // number written without fraction/exponent
};

using ConfigSection = std::map<std::string, ConfigValue>;
using ConfigDocument = std::map<std::string, ConfigSection>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(std::string_view line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

inline std::optional<double> parse_number(std::string_view s, bool* integral = nullptr) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::string buf;
  for (char ch : s)
    if (ch != '_') buf.push_back(ch);
  if (buf == "inf") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  const char* first = buf.data();
  const char* last = buf.data() + buf.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || buf.empty()) return std::nullopt;
  if (integral) *integral = buf.find_first_of(".eE") == std::string::npos;
  return out;
}

inline ConfigValue parse_value(std::string_view raw, const std::string& where) {
  const std::string_view s = trim(raw);
  ConfigValue val;
  if (s.empty()) throw ConfigError(where + ": missing value");
  if (s == "true" || s == "false") {
    val.v = (s == "true");
    return val;
  }
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw ConfigError(where + ": unterminated string");
    val.v = std::string(s.substr(1, s.size() - 2));
    return val;
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw ConfigError(where + ": unterminated list");
    std::vector<double> items;
    std::string_view body = trim(s.substr(1, s.size() - 2));
    while (!body.empty()) {
      const auto comma = body.find(',');
      const std::string_view item = trim(body.substr(0, comma));
      if (!item.empty()) {
        const auto x = parse_number(item);
        if (!x) throw ConfigError(where + ": list items must be numbers");
        items.push_back(*x);
      }
      if (comma == std::string_view::npos) break;
      body = body.substr(comma + 1);
    }
    val.v = std::move(items);
    return val;
  }
  bool integral = false;
  const auto x = parse_number(s, &integral);
  if (!x) throw ConfigError(where + ": cannot parse value '" + std::string(s) + "'");
  val.v = *x;
  val.integral = integral;
  return val;
}

}  // namespace detail

inline ConfigDocument parse_config(std::string_view text) {
  ConfigDocument doc;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno);
    const std::string body = detail::strip_comment(line);
    const std::string_view s = detail::trim(body);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(detail::trim(s.substr(1, s.size() - 2)));
      doc[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string key(detail::trim(s.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    auto& sec = doc[section];
    if (sec.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    sec[key] = detail::parse_value(s.substr(eq + 1), where);
  }
  return doc;
}

inline ConfigDocument load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------

struct OutputOptions {
  std::string dir = "out";
  bool emit_profile = true;
};

struct CheckOptions {
  std::size_t gamma_probes = 16;
  std::size_t f_nz = 33;
  std::size_t f_nt = 1025;
};

struct SweepGrid {
  std::vector<double> beta1, beta2;
  std::size_t workers = 1;
};

struct RunConfig {
  double beta1 = 1.2, beta2 = 0.9;
  std::optional<double> epsilon;
  InitialDataSpec spec;
  StepControl ctrl;
  double t_end = 0.01;
  OutputOptions output;
  CheckOptions checks;
  std::optional<SweepGrid> sweep;

  ModelParams params() const { return make_params(beta1, beta2, epsilon); }

  /// Every module constraint, before anything runs.
  void validate() const {
    const ModelParams p = params();
    spec.validate(p);
    ctrl.validate();
    if (!(t_end > 0.0)) throw ConfigError("solver constraint violated: t_end > 0");
    if (checks.gamma_probes < 1) throw ConfigError("checks constraint violated: gamma_probes >= 1");
    if (checks.f_nz < 16) throw ConfigError("checks constraint violated: f_nz >= 16");
    if (checks.f_nt < 9 || (checks.f_nt - 1) % 8 != 0)
      throw ConfigError("checks constraint violated: f_nt - 1 is a positive multiple of 8");
    if (sweep) {
      if (sweep->beta1.empty() || sweep->beta2.empty())
        throw ConfigError("sweep constraint violated: beta1 and beta2 lists are non-empty");
      if (sweep->workers < 1) throw ConfigError("sweep constraint violated: workers >= 1");
    }
  }
};

namespace detail {

class SectionReader {
 public:
  SectionReader(const ConfigDocument& doc, const std::string& name) : name_(name) {
    if (auto it = doc.find(name); it != doc.end()) sec_ = &it->second;
  }

  /// Rejects keys no accessor asked for.
  void finish() const {
    if (!sec_) return;
    for (const auto& [k, v] : *sec_)
      if (!used_.count(k)) throw ConfigError("unknown key '" + k + "' in [" + name_ + "]");
  }

  void number(const char* key, double& out) {
    if (const ConfigValue* v = find(key)) {
      const auto* d = std::get_if<double>(&v->v);
      if (!d) throw ConfigError(where(key) + " must be a number");
      out = *d;
    }
  }

  void number(const char* key, std::optional<double>& out) {
    if (find(key)) {
      double d = 0.0;
      number(key, d);
      out = d;
    }
  }

  void count(const char* key, std::size_t& out) {
    if (const ConfigValue* v = find(key)) {
      const auto* d = std::get_if<double>(&v->v);
      if (!d || !v->integral || *d < 0.0) throw ConfigError(where(key) + " must be a non-negative integer");
      out = static_cast<std::size_t>(*d);
    }
  }

  void flag(const char* key, bool& out) {
    if (const ConfigValue* v = find(key)) {
      const auto* b = std::get_if<bool>(&v->v);
      if (!b) throw ConfigError(where(key) + " must be true or false");
      out = *b;
    }
  }

  void text(const char* key, std::string& out) {
    if (const ConfigValue* v = find(key)) {
      const auto* s = std::get_if<std::string>(&v->v);
      if (!s) throw ConfigError(where(key) + " must be a string");
      out = *s;
    }
  }

  bool list(const char* key, std::vector<double>& out) {
    if (const ConfigValue* v = find(key)) {
      const auto* l = std::get_if<std::vector<double>>(&v->v);
      if (!l) throw ConfigError(where(key) + " must be a list of numbers");
      out = *l;
      return true;
    }
    return false;
  }

 private:
  const ConfigValue* find(const char* key) {
    if (!sec_) return nullptr;
    auto it = sec_->find(key);
    if (it == sec_->end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }
  std::string where(const char* key) const { return "[" + name_ + "] " + key; }

  std::string name_;
  const ConfigSection* sec_ = nullptr;
  std::set<std::string> used_;
};

}  // namespace detail

/// Maps a parsed document onto a RunConfig and validates it. Unknown
/// sections and keys are rejected so typos do not pass silently.
inline RunConfig make_run_config(const ConfigDocument& doc) {
  static const std::set<std::string> known{"model", "data", "solver", "output", "checks", "sweep"};
  for (const auto& [name, sec] : doc)
    if (!known.count(name)) throw ConfigError("unknown section [" + name + "]");

  RunConfig c;
  {
    detail::SectionReader r(doc, "model");
    r.number("beta1", c.beta1);
    r.number("beta2", c.beta2);
    r.number("epsilon", c.epsilon);
    r.finish();
  }
  {
    detail::SectionReader r(doc, "data");
    std::string frame = to_string(c.spec.frame);
    r.text("frame", frame);
    c.spec.frame = frame_from_string(frame);
    r.number("L0", c.spec.L0);
    r.number("L1", c.spec.L1);
    r.number("L2", c.spec.L2);
    r.number("L3", c.spec.L3);
    r.number("L4", c.spec.L4);
    r.count("markers", c.spec.n_markers);
    std::vector<double> plateau;
    if (r.list("plateau", plateau)) {
      if (plateau.size() != 2) throw ConfigError("[data] plateau must be a list [lo, hi]");
      c.spec.plateau_lo = plateau[0];
      c.spec.plateau_hi = plateau[1];
    }
    r.number("ramp", c.spec.warmup_ramp);
    r.number("amplitude", c.spec.amplitude);
    r.finish();
  }
  {
    detail::SectionReader r(doc, "solver");
    r.number("dt_init", c.ctrl.dt_init);
    r.number("dt_min", c.ctrl.dt_min);
    r.number("dt_safety", c.ctrl.dt_safety);
    r.number("rk_tol", c.ctrl.rk_tol);
    r.number("omega_cap", c.ctrl.omega_cap);
    r.number("h_max", c.ctrl.h_max);
    r.number("refine_tol", c.ctrl.refine_tol);
    r.number("t_end", c.t_end);
    r.count("frame_stride", c.ctrl.frame_stride);
    r.count("max_markers", c.ctrl.max_markers);
    r.count("max_steps", c.ctrl.max_steps);
    r.finish();
  }
  {
    detail::SectionReader r(doc, "output");
    r.text("dir", c.output.dir);
    r.flag("emit_profile", c.output.emit_profile);
    r.finish();
  }
  {
    detail::SectionReader r(doc, "checks");
    r.count("gamma_probes", c.checks.gamma_probes);
    r.count("f_nz", c.checks.f_nz);
    r.count("f_nt", c.checks.f_nt);
    r.finish();
  }
  if (doc.count("sweep")) {
    detail::SectionReader r(doc, "sweep");
    SweepGrid g;
    r.list("beta1", g.beta1);
    r.list("beta2", g.beta2);
    r.count("workers", g.workers);
    r.finish();
    c.sweep = std::move(g);
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) { return make_run_config(load_config_file(path)); }

}  // namespace sbm
