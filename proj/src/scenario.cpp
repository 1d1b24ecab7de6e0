#include "svcg/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "svcg/lqg_layered.hpp"

namespace svcg {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr int kSchemaVersion = 1;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ValidationError(path + ": " + what);
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) fail(path + "." + key, "required field missing");
  return obj.at(key);
}

double number(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(path, "must be finite");
  return x;
}

double number_or(const json& obj, const std::string& key, double dflt, const std::string& path) {
  return obj.contains(key) ? number(obj.at(key), path + "." + key) : dflt;
}

long long integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(path, "must be an integer");
  return v.get<long long>();
}

std::string text(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "must be a string");
  return v.get<std::string>();
}

Range range(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) fail(path, "must be a [lo, hi] pair");
  Range r{number(v[0], path + "[0]"), number(v[1], path + "[1]")};
  if (r.lo > r.hi) fail(path, "lo must not exceed hi");
  return r;
}

std::vector<Range> bands(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "must be a non-empty list of [lo, hi] pairs");
  std::vector<Range> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(range(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) fail(path + "." + it.key(), "unknown field");
  }
}

QuadraticAgent parse_static_agent(const json& a, const std::string& path) {
  if (!a.is_object()) fail(path, "must be an object");
  check_keys(a, {"curvature", "linear_coef"}, path);
  QuadraticAgent q{number(require(a, "curvature", path), path + ".curvature"),
                   number(require(a, "linear_coef", path), path + ".linear_coef")};
  if (!(q.curvature < 0.0)) fail(path + ".curvature", "must be strictly negative");
  return q;
}

LqAgent parse_lq_agent(const json& a, int horizon, bool stochastic, const std::string& path) {
  if (!a.is_object()) fail(path, "must be an object");
  check_keys(a, {"a", "b", "q", "r", "x0", "x_target", "drive", "exo_gain", "exo_signal", "noise_variance",
                 "init_variance", "noise_law"},
             path);
  LqAgent g;
  g.horizon = horizon;
  g.a = number_or(a, "a", 1.0, path);
  g.b = number(require(a, "b", path), path + ".b");
  g.q = number_or(a, "q", 0.0, path);
  g.r = number(require(a, "r", path), path + ".r");
  g.x0 = number_or(a, "x0", 0.0, path);
  g.x_target = number_or(a, "x_target", 0.0, path);
  g.drive = number_or(a, "drive", 0.0, path);
  g.exo_gain = number_or(a, "exo_gain", 0.0, path);
  if (!(g.r < 0.0)) fail(path + ".r", "must be strictly negative");
  if (g.q > 0.0) fail(path + ".q", "must be non-positive");
  if (g.b == 0.0) fail(path + ".b", "must be nonzero");
  if (a.contains("exo_signal")) {
    const json& h = a.at("exo_signal");
    if (!h.is_array() || static_cast<int>(h.size()) != horizon) {
      fail(path + ".exo_signal", "must be a list of length horizon (" + std::to_string(horizon) + ")");
    }
    g.exo_signal.resize(horizon);
    for (int t = 0; t < horizon; ++t) g.exo_signal[t] = number(h[static_cast<std::size_t>(t)], path + ".exo_signal");
  }
  if (stochastic) {
    g.noise_variance = number_or(a, "noise_variance", 0.0, path);
    g.init_variance = number_or(a, "init_variance", 0.0, path);
    if (g.noise_variance < 0.0) fail(path + ".noise_variance", "must be non-negative");
    if (g.init_variance < 0.0) fail(path + ".init_variance", "must be non-negative");
    if (a.contains("noise_law")) {
      const std::string law = text(a.at("noise_law"), path + ".noise_law");
      if (law == "gaussian") {
        g.noise_law = NoiseLaw::kGaussian;
      } else if (law == "uniform") {
        g.noise_law = NoiseLaw::kUniform;
      } else {
        fail(path + ".noise_law", "must be \"gaussian\" or \"uniform\"");
      }
    }
  } else if (a.contains("noise_variance") || a.contains("init_variance") || a.contains("noise_law")) {
    fail(path, "noise fields are only valid in lqg mode");
  }
  return g;
}

Strategy parse_strategy(const json& v, const std::string& path) {
  if (!v.is_object()) fail(path, "must be an object");
  check_keys(v, {"kind", "offset", "q", "r", "a", "b", "zero_noise_bids"}, path);
  const std::string kind = text(require(v, "kind", path), path + ".kind");
  Strategy s;
  if (kind == "truthful") {
    s.kind = StrategyKind::kTruthful;
  } else if (kind == "additive_offset") {
    s = Strategy::additive(number(require(v, "offset", path), path + ".offset"));
  } else if (kind == "zero_noise") {
    s = Strategy::zero_noise();
  } else if (kind == "param_misreport") {
    s.kind = StrategyKind::kParamMisreport;
    if (v.contains("q")) s.q = number(v.at("q"), path + ".q");
    if (v.contains("r")) s.r = number(v.at("r"), path + ".r");
    if (v.contains("a")) s.a = number(v.at("a"), path + ".a");
    if (v.contains("b")) s.b = number(v.at("b"), path + ".b");
    if (s.r && !(*s.r < 0.0)) fail(path + ".r", "must be strictly negative");
    if (s.q && *s.q > 0.0) fail(path + ".q", "must be non-positive");
    if (s.b && *s.b == 0.0) fail(path + ".b", "must be nonzero");
    if (v.contains("zero_noise_bids")) {
      if (!v.at("zero_noise_bids").is_boolean()) fail(path + ".zero_noise_bids", "must be a boolean");
      s.zero_noise_bids = v.at("zero_noise_bids").get<bool>();
    }
  } else {
    fail(path + ".kind", "unknown strategy \"" + kind + "\"");
  }
  return s;
}

MechanismSpec parse_mechanism(const json& m, std::size_t n, const std::string& path) {
  MechanismSpec spec;
  if (!m.is_object()) fail(path, "must be an object");
  check_keys(m, {"kind", "c", "normalize", "h"}, path);
  const std::string kind = text(require(m, "kind", path), path + ".kind");
  if (kind == "vcg") {
    spec.kind = MechanismKind::kVcg;
  } else if (kind == "svcg") {
    spec.kind = MechanismKind::kSvcg;
    const json& c = require(m, "c", path);
    if (c.is_string()) {
      const std::string mode = c.get<std::string>();
      if (mode == "auto-minmax") {
        spec.scaling = ScalingMode::kAutoMinmax;
      } else if (mode == "auto-interval-midpoint") {
        spec.scaling = ScalingMode::kAutoMidpoint;
      } else {
        fail(path + ".c", "must be a number, \"auto-minmax\" or \"auto-interval-midpoint\"");
      }
    } else {
      spec.c = number(c, path + ".c");
    }
  } else if (kind == "groves") {
    spec.kind = MechanismKind::kGroves;
    if (m.contains("h")) {
      const json& h = m.at("h");
      if (!h.is_array() || h.size() != n) fail(path + ".h", "must list one value per agent");
      spec.h.resize(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) spec.h[static_cast<Eigen::Index>(i)] = number(h[i], path + ".h");
    }
  } else {
    fail(path + ".kind", "must be \"vcg\", \"svcg\" or \"groves\"");
  }
  if (m.contains("normalize")) {
    if (!m.at("normalize").is_boolean()) fail(path + ".normalize", "must be a boolean");
    spec.normalize = m.at("normalize").get<bool>();
  }
  return spec;
}

Experiment parse_experiment(const json& e, Mode mode, std::size_t n_agents, const std::string& path) {
  if (!e.is_object()) fail(path, "must be an object");
  check_keys(e, {"kind", "n_list", "agent", "grid_points", "grid_half_width", "bid_grid", "profiles",
                 "profile_scale", "strategy_profiles", "n_runs", "analytic", "trajectories"},
             path);
  Experiment x;
  x.kind = experiment_from_name(text(require(e, "kind", path), path + ".kind"));
  if (e.contains("n_list")) {
    const json& l = e.at("n_list");
    if (!l.is_array() || l.empty()) fail(path + ".n_list", "must be a non-empty list");
    for (const auto& v : l) {
      const long long k = integer(v, path + ".n_list");
      if (k < 3) fail(path + ".n_list", "every N must be at least 3");
      x.n_list.push_back(static_cast<int>(k));
    }
  }
  if (x.kind == ExperimentKind::kAsymptotics && x.n_list.empty()) fail(path + ".n_list", "required for asymptotics");
  if (e.contains("agent")) {
    const long long a = integer(e.at("agent"), path + ".agent");
    if (a < 0 || static_cast<std::size_t>(a) >= std::max<std::size_t>(n_agents, 1)) fail(path + ".agent", "out of range");
    x.agent = static_cast<std::size_t>(a);
  }
  if (e.contains("grid_points")) {
    const long long g = integer(e.at("grid_points"), path + ".grid_points");
    if (g < 1) fail(path + ".grid_points", "must be positive");
    x.grid_points = static_cast<int>(g);
  }
  x.grid_half_width = number_or(e, "grid_half_width", x.grid_half_width, path);
  if (x.grid_half_width < 0.0) fail(path + ".grid_half_width", "must be non-negative");
  if (e.contains("bid_grid")) {
    for (const auto& v : e.at("bid_grid")) x.bid_grid.push_back(number(v, path + ".bid_grid"));
  }
  if (e.contains("profiles")) {
    const long long p = integer(e.at("profiles"), path + ".profiles");
    if (p < 0) fail(path + ".profiles", "must be non-negative");
    x.profiles = static_cast<std::size_t>(p);
  }
  x.profile_scale = number_or(e, "profile_scale", x.profile_scale, path);
  if (e.contains("strategy_profiles")) {
    if (mode != Mode::kLqg) fail(path + ".strategy_profiles", "only valid in lqg mode");
    const json& ps = e.at("strategy_profiles");
    if (!ps.is_array() || ps.empty()) fail(path + ".strategy_profiles", "must be a non-empty list");
    for (std::size_t k = 0; k < ps.size(); ++k) {
      const std::string pp = path + ".strategy_profiles[" + std::to_string(k) + "]";
      check_keys(ps[k], {"name", "strategies"}, pp);
      StrategyProfile prof;
      prof.name = text(require(ps[k], "name", pp), pp + ".name");
      prof.strategies.assign(n_agents, Strategy::truthful());
      const json& ss = require(ps[k], "strategies", pp);
      if (!ss.is_array() || ss.size() > n_agents) fail(pp + ".strategies", "must list at most one strategy per agent");
      for (std::size_t i = 0; i < ss.size(); ++i) {
        prof.strategies[i] = parse_strategy(ss[i], pp + ".strategies[" + std::to_string(i) + "]");
      }
      x.strategy_profiles.push_back(std::move(prof));
    }
  }
  if (e.contains("n_runs")) {
    const long long r = integer(e.at("n_runs"), path + ".n_runs");
    if (r < 0) fail(path + ".n_runs", "must be non-negative");
    x.n_runs = static_cast<std::size_t>(r);
  }
  if (e.contains("analytic")) {
    if (!e.at("analytic").is_boolean()) fail(path + ".analytic", "must be a boolean");
    x.analytic = e.at("analytic").get<bool>();
  }
  if (e.contains("trajectories")) {
    const long long r = integer(e.at("trajectories"), path + ".trajectories");
    if (r < 0) fail(path + ".trajectories", "must be non-negative");
    x.trajectories = static_cast<std::size_t>(r);
  }
  if (x.kind == ExperimentKind::kSimulate) {
    if (mode != Mode::kLqg) fail(path + ".kind", "simulate requires lqg mode");
    if (x.strategy_profiles.empty()) {
      x.strategy_profiles.push_back({"truthful", std::vector<Strategy>(n_agents, Strategy::truthful())});
    }
  }
  return x;
}

Scenario parse_one(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "scenario must be an object");
  check_keys(j, {"schema_version", "name", "mode", "horizon", "agents", "population", "mechanism", "experiment",
                 "seed", "output"},
             path);
  if (j.contains("schema_version") && integer(j.at("schema_version"), path + ".schema_version") != kSchemaVersion) {
    fail(path + ".schema_version", "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  Scenario s;
  s.source = j.dump();
  s.name = j.contains("name") ? text(j.at("name"), path + ".name") : "scenario";
  const std::string mode = text(require(j, "mode", path), path + ".mode");
  if (mode == "static") {
    s.mode = Mode::kStatic;
  } else if (mode == "dynamic") {
    s.mode = Mode::kDynamic;
  } else if (mode == "lqg") {
    s.mode = Mode::kLqg;
  } else {
    fail(path + ".mode", "must be \"static\", \"dynamic\" or \"lqg\"");
  }
  if (s.mode != Mode::kStatic) {
    const long long T = integer(require(j, "horizon", path), path + ".horizon");
    if (T < 1) fail(path + ".horizon", "must be a positive integer");
    s.horizon = static_cast<int>(T);
  }
  if (j.contains("seed")) {
    const long long seed = integer(j.at("seed"), path + ".seed");
    if (seed < 0) fail(path + ".seed", "must be non-negative");
    s.seed = static_cast<std::uint64_t>(seed);
  }
  if (j.contains("output")) s.output = text(j.at("output"), path + ".output");

  const json& ex = require(j, "experiment", path);
  const bool population_run = ex.is_object() && ex.contains("kind") && ex.at("kind") == "asymptotics";
  if (!population_run) {
    const json& agents = require(j, "agents", path);
    if (!agents.is_array()) fail(path + ".agents", "must be a list");
    if (agents.size() < 2) fail(path + ".agents", "at least 2 agents required (got " + std::to_string(agents.size()) + ")");
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const std::string ap = path + ".agents[" + std::to_string(i) + "]";
      if (s.mode == Mode::kStatic) {
        s.static_agents.push_back(parse_static_agent(agents[i], ap));
      } else {
        s.lq_agents.push_back(parse_lq_agent(agents[i], s.horizon, s.mode == Mode::kLqg, ap));
      }
    }
  }
  if (j.contains("population")) {
    const json& p = j.at("population");
    const std::string pp = path + ".population";
    if (s.mode == Mode::kStatic) {
      check_keys(p, {"curvature", "linear_bands"}, pp);
      PopulationBounds b;
      if (p.contains("curvature")) b.curvature = range(p.at("curvature"), pp + ".curvature");
      if (p.contains("linear_bands")) b.linear_bands = bands(p.at("linear_bands"), pp + ".linear_bands");
      if (!(b.curvature.hi < 0.0)) fail(pp + ".curvature", "upper bound must be strictly negative");
      for (const auto& r : b.linear_bands) {
        if (!(r.lo > 0.0)) fail(pp + ".linear_bands", "lower bounds must be strictly positive");
      }
      s.static_population = b;
    } else {
      check_keys(p, {"a", "b", "q", "r", "drive_bands", "x0", "noise_variance", "init_variance"}, pp);
      DynamicBounds b;
      b.horizon = s.horizon;
      if (p.contains("a")) b.a = range(p.at("a"), pp + ".a");
      if (p.contains("b")) b.b = range(p.at("b"), pp + ".b");
      if (p.contains("q")) b.q = range(p.at("q"), pp + ".q");
      if (p.contains("r")) b.r = range(p.at("r"), pp + ".r");
      if (p.contains("drive_bands")) b.drive_bands = bands(p.at("drive_bands"), pp + ".drive_bands");
      if (p.contains("x0")) b.x0 = range(p.at("x0"), pp + ".x0");
      b.noise_variance = number_or(p, "noise_variance", 0.0, pp);
      b.init_variance = number_or(p, "init_variance", 0.0, pp);
      if (!(b.r.hi < 0.0)) fail(pp + ".r", "upper bound must be strictly negative");
      if (b.q.hi > 0.0) fail(pp + ".q", "upper bound must be non-positive");
      if (!(b.b.lo > 0.0)) fail(pp + ".b", "lower bound must be strictly positive");
      if (b.a.lo < 0.0) fail(pp + ".a", "bounds on |a| must be non-negative");
      if (b.noise_variance < 0.0 || b.init_variance < 0.0) fail(pp, "variances must be non-negative");
      s.dynamic_population = b;
    }
  }
  if (population_run && !s.static_population && !s.dynamic_population) {
    fail(path + ".population", "required for asymptotics");
  }
  const std::size_t n = s.mode == Mode::kStatic ? s.static_agents.size() : s.lq_agents.size();
  s.mechanism = j.contains("mechanism") ? parse_mechanism(j.at("mechanism"), n, path + ".mechanism") : MechanismSpec{};
  s.experiment = parse_experiment(ex, s.mode, n, path + ".experiment");
  return s;
}

}  // namespace

const char* experiment_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kSolve: return "solve";
    case ExperimentKind::kPayments: return "payments";
    case ExperimentKind::kInterval: return "interval";
    case ExperimentKind::kMinmax: return "minmax";
    case ExperimentKind::kAsymptotics: return "asymptotics";
    case ExperimentKind::kIcCheck: return "ic_check";
    case ExperimentKind::kSimulate: return "simulate";
  }
  return "unknown";
}

ExperimentKind experiment_from_name(const std::string& name) {
  for (auto k : {ExperimentKind::kSolve, ExperimentKind::kPayments, ExperimentKind::kInterval, ExperimentKind::kMinmax,
                 ExperimentKind::kAsymptotics, ExperimentKind::kIcCheck, ExperimentKind::kSimulate}) {
    if (name == experiment_name(k)) return k;
  }
  std::string alt = name;
  for (auto& ch : alt) ch = ch == '-' ? '_' : ch;
  if (alt != name) return experiment_from_name(alt);
  throw ValidationError("experiment.kind: unknown experiment \"" + name + "\"");
}

std::vector<Scenario> parse_scenarios_text(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("parse error: ") + e.what());
  }
  std::vector<Scenario> out;
  const json* list = nullptr;
  if (j.is_array()) {
    list = &j;
  } else if (j.is_object() && j.contains("scenarios")) {
    list = &j.at("scenarios");
    if (!list->is_array()) fail("scenarios", "must be a list");
  }
  if (list) {
    if (list->empty()) fail("scenarios", "batch is empty");
    for (std::size_t i = 0; i < list->size(); ++i) out.push_back(parse_one((*list)[i], "scenarios[" + std::to_string(i) + "]"));
  } else {
    out.push_back(parse_one(j, "scenario"));
  }
  return out;
}

std::vector<Scenario> parse_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenarios_text(ss.str());
}

Scenario parse_scenario(const std::string& path) {
  auto all = parse_scenario_file(path);
  if (all.size() != 1) throw ValidationError("expected a single scenario in " + path);
  return all.front();
}

const Table& Results::table(const std::string& name) const {
  for (const auto& t : tables) {
    if (t.name == name) return t;
  }
  throw Error("no result table named " + name);
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  if (std::string(buf) == "-0") return "0";
  return buf;
}

namespace {

std::string cell_text(const Cell& c) {
  if (std::holds_alternative<double>(c)) return format_number(std::get<double>(c));
  if (std::holds_alternative<long long>(c)) return std::to_string(std::get<long long>(c));
  return std::get<std::string>(c);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string to_csv(const Table& t) {
  std::ostringstream os;
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << csv_escape(t.columns[i]);
  os << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_escape(cell_text(row[i]));
    os << "\n";
  }
  return os.str();
}

std::string to_pretty(const Table& t) {
  std::vector<std::size_t> width(t.columns.size());
  for (std::size_t i = 0; i < t.columns.size(); ++i) width[i] = t.columns[i].size();
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i) width[i] = std::max(width[i], cell_text(row[i]).size());
  }
  std::ostringstream os;
  os << "== " << t.name << " ==\n";
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << cells[i];
    }
    os << "\n";
  };
  line(t.columns);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  line(rule);
  for (const auto& row : t.rows) {
    std::vector<std::string> cells;
    for (const auto& c : row) cells.push_back(cell_text(c));
    line(cells);
  }
  return os.str();
}

Table parse_csv(const std::string& name, const std::string& body) {
  Table t;
  t.name = name;
  std::istringstream in(body);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      if (quoted) {
        if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (ch == '"') {
          quoted = false;
        } else {
          cur += ch;
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    fields.push_back(cur);
    if (header) {
      t.columns = fields;
      header = false;
      continue;
    }
    std::vector<Cell> row;
    for (const auto& f : fields) {
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (!f.empty() && end && *end == '\0') {
        row.emplace_back(v);
      } else {
        row.emplace_back(f);
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

Cell num(double x) { return Cell{x}; }
Cell idx(std::size_t i) { return Cell{static_cast<long long>(i)}; }

Table summary_table() { return Table{"summary", {"quantity", "value"}, {}}; }
void put(Table& t, const std::string& k, double v) { t.rows.push_back({Cell{k}, num(v)}); }

double resolve_c(const MechanismSpec& m, const ScalingInterval& iv, const DistortionTerms& terms) {
  switch (m.kind) {
    case MechanismKind::kVcg: return 1.0;
    case MechanismKind::kGroves: return 0.0;
    case MechanismKind::kSvcg: break;
  }
  switch (m.scaling) {
    case ScalingMode::kFixed: return m.c;
    case ScalingMode::kAutoMinmax: return minmax_over_interval(terms, iv, m.normalize).c_star;
    case ScalingMode::kAutoMidpoint:
      if (!iv.mpb_holds || iv.lower > iv.upper) throw InfeasibleIntervalError("scaling interval infeasible");
      return 0.5 * (iv.lower + iv.upper);
  }
  return 1.0;
}

Vec groves_h(const MechanismSpec& m, Eigen::Index n) { return m.h.size() ? m.h : Vec::Zero(n); }

Vec payments_for(const MechanismSpec& m, double c, const Vec& exclusion, const Vec& others) {
  if (m.kind == MechanismKind::kGroves) return groves_h(m, exclusion.size()) - others;
  return svcg_from_terms(exclusion, others, c);
}

void interval_rows(Table& s, const ScalingInterval& iv) {
  put(s, "c_lower", iv.lower);
  put(s, "c_upper", iv.upper);
  put(s, "mpb_holds", iv.mpb_holds ? 1.0 : 0.0);
}

Table asymptotics_table(const std::vector<AsymptoticsRow>& rows) {
  Table t{"asymptotics", {"N", "c_lower", "c_upper", "c_star", "payment_gap"}, {}};
  for (const auto& r : rows) {
    t.rows.push_back({Cell{static_cast<long long>(r.n)}, num(r.c_lower), num(r.c_upper), num(r.c_star), num(r.payment_gap)});
  }
  return t;
}

Results run_static(const Scenario& s) {
  Results res;
  const auto& x = s.experiment;
  if (x.kind == ExperimentKind::kAsymptotics) {
    res.tables.push_back(asymptotics_table(asymptotics_experiment(x.n_list, *s.static_population, s.seed)));
    return res;
  }
  const auto& agents = s.static_agents;
  const MarketOutcome o = solve_balanced_qp(agents);
  const ScalingInterval iv = scaling_interval(agents, o);
  const DistortionTerms terms = distortion_terms(o);
  Table sum = summary_table();
  put(sum, "multiplier", o.multiplier);
  put(sum, "total_welfare", o.total_welfare);

  if (x.kind == ExperimentKind::kIcCheck) {
    StaticPaymentRule rule{s.mechanism.kind, resolve_c(s.mechanism, iv, terms)};
    const auto grid = misreport_grid(agents[x.agent], x.grid_points, x.grid_half_width);
    const IcReport rep = ic_bruteforce_check(agents, x.agent, grid, {}, rule);
    res.tables.push_back(Table{"ic_check", {"agent", "evaluations", "violations", "max_gain"},
                               {{idx(x.agent), idx(rep.evaluations), idx(rep.violations.size()), num(rep.max_gain)}}});
    return res;
  }

  Table alloc{"allocations", {"agent", "allocation", "utility", "exclusion_welfare", "lagrange_payment"}, {}};
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    alloc.rows.push_back({idx(i), num(o.allocations[k]), num(o.utilities[k]), num(o.exclusion_welfares[k]),
                          num(terms.lagrange[k])});
  }
  res.tables.push_back(alloc);
  if (x.kind == ExperimentKind::kInterval || x.kind == ExperimentKind::kMinmax) interval_rows(sum, iv);
  if (x.kind == ExperimentKind::kMinmax) {
    const MinMaxResult mm = minmax_over_interval(terms, iv, s.mechanism.normalize);
    put(sum, "normalized", s.mechanism.normalize ? 1.0 : 0.0);
    put(sum, "c_star", mm.c_star);
    put(sum, "z_star", mm.z_star);
    Table d{"distortions", {"agent", "distortion"}, {}};
    for (Eigen::Index i = 0; i < mm.distortions.size(); ++i) d.rows.push_back({idx(static_cast<std::size_t>(i)), num(mm.distortions[i])});
    res.tables.push_back(d);
  }
  if (x.kind == ExperimentKind::kPayments) {
    const double c = resolve_c(s.mechanism, iv, terms);
    const Vec p = payments_for(s.mechanism, c, o.exclusion_welfares, others_welfare(o));
    Table pt{"payments", {"agent", "allocation", "payment", "net_utility"}, {}};
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      pt.rows.push_back({idx(i), num(o.allocations[k]), num(p[k]), num(o.utilities[k] - p[k])});
    }
    put(sum, "c", c);
    put(sum, "payment_total", p.sum());
    res.tables.push_back(pt);
  }
  res.tables.push_back(sum);
  return res;
}

Results run_dynamic(const Scenario& s) {
  Results res;
  const auto& x = s.experiment;
  if (x.kind == ExperimentKind::kAsymptotics) {
    res.tables.push_back(asymptotics_table(dynamic_asymptotics_experiment(x.n_list, *s.dynamic_population, s.seed)));
    return res;
  }
  const auto& agents = s.lq_agents;
  const DynamicOutcome o = solve_dynamic(agents);
  const ScalingInterval iv = dynamic_scaling_interval(agents, o);
  const DistortionTerms terms = dynamic_distortion_terms(o);
  if (x.kind == ExperimentKind::kIcCheck) {
    const double c = s.mechanism.kind == MechanismKind::kGroves ? 1.0 : resolve_c(s.mechanism, iv, terms);
    const LqAgent truth = agents[x.agent];
    std::vector<LqAgent> grid;
    const int k = x.grid_points;
    auto axis = [&](double v, int j) {
      const double t = k == 1 ? 0.0 : -1.0 + 2.0 * j / (k - 1);
      return v + t * x.grid_half_width * std::max(std::abs(v), 0.1);
    };
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        for (int d = 0; d < k; ++d) {
          LqAgent g = truth;
          g.q = std::min(0.0, axis(truth.q, a));
          g.r = axis(truth.r, b);
          g.x0 = axis(truth.x0, d);
          if (g.r < 0.0) grid.push_back(g);
        }
      }
    }
    const DynamicIcReport rep = dynamic_ic_check(agents, x.agent, grid, {}, c);
    res.tables.push_back(Table{"ic_check", {"agent", "evaluations", "violations", "max_gain"},
                               {{idx(x.agent), idx(rep.evaluations), idx(rep.violations), num(rep.max_gain)}}});
    return res;
  }
  Table traj{"controls", {"agent", "t", "control", "state", "multiplier"}, {}};
  for (std::size_t i = 0; i < agents.size(); ++i) {
    for (int t = 0; t < s.horizon; ++t) {
      const auto k = static_cast<Eigen::Index>(i);
      traj.rows.push_back({idx(i), Cell{static_cast<long long>(t)}, num(o.controls(k, t)), num(o.states(k, t)),
                           num(o.multipliers[t])});
    }
  }
  res.tables.push_back(traj);
  Table alloc{"allocations", {"agent", "utility", "exclusion_welfare", "lagrange_payment"}, {}};
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    alloc.rows.push_back({idx(i), num(o.utilities[k]), num(o.exclusion_welfares[k]), num(terms.lagrange[k])});
  }
  res.tables.push_back(alloc);
  Table sum = summary_table();
  put(sum, "total_welfare", o.total_welfare);
  if (x.kind == ExperimentKind::kInterval || x.kind == ExperimentKind::kMinmax) interval_rows(sum, iv);
  if (x.kind == ExperimentKind::kMinmax) {
    const MinMaxResult mm = minmax_over_interval(terms, iv, s.mechanism.normalize);
    put(sum, "normalized", s.mechanism.normalize ? 1.0 : 0.0);
    put(sum, "c_star", mm.c_star);
    put(sum, "z_star", mm.z_star);
  }
  if (x.kind == ExperimentKind::kPayments) {
    const double c = resolve_c(s.mechanism, iv, terms);
    const Vec others = terms.others_welfare;
    const Vec p = payments_for(s.mechanism, c, o.exclusion_welfares, others);
    Table pt{"payments", {"agent", "allocation", "payment", "net_utility"}, {}};
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      pt.rows.push_back({idx(i), num(o.controls.row(k).sum()), num(p[k]), num(o.utilities[k] - p[k])});
    }
    put(sum, "c", c);
    put(sum, "payment_total", p.sum());
    res.tables.push_back(pt);
  }
  res.tables.push_back(sum);
  return res;
}

Results run_lqg(const Scenario& s) {
  Results res;
  const auto& x = s.experiment;
  if (x.kind == ExperimentKind::kAsymptotics) {
    Table t{"asymptotics", {"N", "c_lower", "c_upper", "c_star", "payment_gap"}, {}};
    for (const auto& r : stochastic_asymptotics_experiment(x.n_list, *s.dynamic_population, s.seed)) {
      t.rows.push_back({Cell{static_cast<long long>(r.n)}, num(r.c_lower), num(r.c_upper), num(r.c_star), num(r.d)});
    }
    res.tables.push_back(t);
    return res;
  }
  const auto& agents = s.lq_agents;
  const StochasticOutcome o = stochastic_outcome(agents);
  const ScalingInterval iv = stochastic_scaling_interval(o);
  const DistortionTerms terms = stochastic_distortion_terms(o);
  const PivotKind pivot = s.mechanism.kind == MechanismKind::kGroves ? PivotKind::kNone : PivotKind::kClarke;
  auto mechanism_c = [&] { return resolve_c(s.mechanism, iv, terms); };

  if (x.kind == ExperimentKind::kIcCheck) {
    std::vector<double> grid = x.bid_grid;
    if (grid.empty()) {
      for (int j = 0; j < x.grid_points; ++j) {
        grid.push_back(x.grid_points == 1 ? 0.0 : x.grid_half_width * (-1.0 + 2.0 * j / (x.grid_points - 1)));
      }
    }
    const auto profiles = sample_opponent_profiles(agents.size(), s.horizon, x.profiles, x.profile_scale, s.seed);
    const double c = s.mechanism.kind == MechanismKind::kGroves ? 1.0 : mechanism_c();
    const LayeredIcReport rep = ic_grid_check_layered(agents, x.agent, grid, profiles, c, s.seed);
    res.tables.push_back(Table{"ic_check", {"agent", "evaluations", "violations", "max_gain"},
                               {{idx(x.agent), idx(rep.evaluations), idx(rep.violations), num(rep.max_gain)}}});
    return res;
  }

  Table alloc{"expectations", {"agent", "utility", "exclusion_welfare", "lagrange_payment"}, {}};
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    alloc.rows.push_back({idx(i), num(o.utilities[k]), num(o.exclusion_welfares[k]), num(o.lagrange[k])});
  }
  Table sum = summary_table();
  put(sum, "total_welfare", o.total_welfare);
  if (x.kind == ExperimentKind::kSolve) {
    res.tables.push_back(alloc);
    res.tables.push_back(sum);
    return res;
  }
  if (x.kind == ExperimentKind::kInterval || x.kind == ExperimentKind::kMinmax) {
    res.tables.push_back(alloc);
    interval_rows(sum, iv);
    if (x.kind == ExperimentKind::kMinmax) {
      const MinMaxResult mm = minmax_over_interval(terms, iv, s.mechanism.normalize);
      put(sum, "normalized", s.mechanism.normalize ? 1.0 : 0.0);
      put(sum, "c_star", mm.c_star);
      put(sum, "z_star", mm.z_star);
    }
    res.tables.push_back(sum);
    return res;
  }
  const double c = s.mechanism.kind == MechanismKind::kGroves ? 0.0 : mechanism_c();
  const Vec h = s.mechanism.kind == MechanismKind::kGroves ? groves_h(s.mechanism, static_cast<Eigen::Index>(agents.size()))
                                                           : Vec::Zero(static_cast<Eigen::Index>(agents.size()));
  put(sum, "c", c);
  if (x.kind == ExperimentKind::kPayments) {
    const AnalyticReport rep =
        analytic_expected_net_utility(agents, std::vector<Strategy>(agents.size(), Strategy::truthful()), c, pivot);
    Table pt{"payments", {"agent", "allocation", "payment", "net_utility"}, {}};
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      pt.rows.push_back({idx(i), num(terms.lagrange[k]), num(rep.payments[k] + h[k]), num(rep.net[k] - h[k])});
    }
    put(sum, "payment_total", rep.payments.sum() + h.sum());
    res.tables.push_back(pt);
    res.tables.push_back(sum);
    return res;
  }

  // simulate
  Table st{"simulation",
           {"profile", "agent", "method", "expected_net_utility", "std_error", "expected_payment", "first_minus_this",
            "first_minus_this_se"},
           {}};
  std::vector<SimulationReport> mc;
  for (std::size_t p = 0; p < x.strategy_profiles.size(); ++p) {
    const auto& prof = x.strategy_profiles[p];
    if (x.analytic) {
      const AnalyticReport rep = analytic_expected_net_utility(agents, prof.strategies, c, pivot);
      for (std::size_t i = 0; i < agents.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        st.rows.push_back({Cell{prof.name}, idx(i), Cell{std::string("analytic")}, num(rep.net[k] - h[k]), num(0.0),
                           num(rep.payments[k] + h[k]), num(std::nan("")), num(std::nan(""))});
      }
    }
    if (x.n_runs > 0) {
      mc.push_back(monte_carlo(agents, prof.strategies, c, x.n_runs, s.seed, true, pivot));
      const auto& rep = mc.back();
      for (std::size_t i = 0; i < agents.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        PairedDifference d{std::nan(""), std::nan("")};
        if (p > 0) d = paired_difference(mc.front(), rep, i);
        st.rows.push_back({Cell{prof.name}, idx(i), Cell{std::string("monte_carlo")}, num(rep.mean_net[k] - h[k]),
                           num(rep.se_net[k]), num(rep.mean_payment[k] + h[k]), num(d.mean), num(d.se)});
      }
    }
  }
  res.tables.push_back(st);
  if (x.trajectories > 0) {
    const auto rows = simulate_trajectories(agents, x.strategy_profiles.front().strategies, c, x.trajectories, s.seed);
    Table tt{"trajectories", {"replication", "stage", "multiplier"}, {}};
    for (const char* field : {"noise", "bid", "allocation", "payment"}) {
      for (std::size_t i = 0; i < agents.size(); ++i) tt.columns.push_back(std::string(field) + "_" + std::to_string(i));
    }
    for (const auto& r : rows) {
      std::vector<Cell> row{idx(r.replication), Cell{static_cast<long long>(r.stage)}, num(r.multiplier)};
      for (const Vec* v : {&r.noise, &r.bid, &r.allocation, &r.payment}) {
        for (Eigen::Index i = 0; i < v->size(); ++i) row.push_back(num((*v)[i]));
      }
      tt.rows.push_back(std::move(row));
    }
    res.tables.push_back(tt);
  }
  res.tables.push_back(sum);
  return res;
}

}  // namespace

Results run_experiment(const Scenario& s) {
  switch (s.mode) {
    case Mode::kStatic: return run_static(s);
    case Mode::kDynamic: return run_dynamic(s);
    case Mode::kLqg: return run_lqg(s);
  }
  throw ValidationError("unknown mode");
}

std::vector<std::string> emit_report(const Results& results, const Scenario& s, const std::string& prefix,
                                     OutputFormat format) {
  std::vector<std::string> paths;
  const std::filesystem::path parent = std::filesystem::path(prefix).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
  }
  auto write = [&](const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << body;
    if (!out) throw IoError("write failed for " + path);
    paths.push_back(path);
  };
  for (const auto& t : results.tables) {
    if (format == OutputFormat::kCsv) {
      write(prefix + "_" + t.name + ".csv", to_csv(t));
    } else {
      write(prefix + "_" + t.name + ".txt", to_pretty(t));
    }
  }
  json manifest;
  manifest["scenario"] = json::parse(s.source.empty() ? "{}" : s.source);
  manifest["seed"] = s.seed;
  manifest["experiment"] = experiment_name(s.experiment.kind);
  manifest["library_version"] = kVersion;
  manifest["schema_version"] = kSchemaVersion;
#ifdef __VERSION__
  manifest["compiler"] = __VERSION__;
#endif
  manifest["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION);
  manifest["outputs"] = paths;
  write(prefix + "_manifest.json", manifest.dump(2) + "\n");
  return paths;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return 4;
  if (dynamic_cast<const ValidationError*>(&e)) return 2;
  if (dynamic_cast<const StageOrderError*>(&e)) return 2;
  return 3;
}

std::string error_record(const std::exception& e, const std::string& scenario) {
  const int code = exit_code_for(e);
  json j;
  j["status"] = "error";
  j["exit_code"] = code;
  j["category"] = code == 2 ? "validation" : code == 4 ? "io" : "numerical";
  j["scenario"] = scenario;
  j["message"] = e.what();
  return j.dump();
}

int run_scenario(const Scenario& s, OutputFormat format, std::ostream& out) {
  try {
    const Results r = run_experiment(s);
    if (s.output.empty()) {
      for (const auto& t : r.tables) out << (format == OutputFormat::kCsv ? to_csv(t) : to_pretty(t)) << "\n";
    } else {
      emit_report(r, s, s.output, format);
      if (format == OutputFormat::kTable) {
        for (const auto& t : r.tables) out << to_pretty(t) << "\n";
      }
    }
    return 0;
  } catch (const std::exception& e) {
    const std::string rec = error_record(e, s.name);
    std::cerr << rec << "\n";
    if (!s.output.empty()) {
      std::ofstream err(s.output + "_error.json");
      if (err) err << rec << "\n";
    }
    return exit_code_for(e);
  }
}

}  // namespace svcg
