#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "svcg/dynamic_lq.hpp"
#include "svcg/static_market.hpp"
#include "svcg/strategy_sim.hpp"

namespace svcg {

class IoError : public Error {
 public:
  using Error::Error;
};

enum class Mode { kStatic, kDynamic, kLqg };
enum class ExperimentKind { kSolve, kPayments, kInterval, kMinmax, kAsymptotics, kIcCheck, kSimulate };
enum class ScalingMode { kFixed, kAutoMinmax, kAutoMidpoint };

struct MechanismSpec {
  MechanismKind kind = MechanismKind::kVcg;
  ScalingMode scaling = ScalingMode::kFixed;
  double c = 1.0;
  bool normalize = false;
  Vec h;  // groves constants; empty means zero
};

struct StrategyProfile {
  std::string name;
  std::vector<Strategy> strategies;
};

struct Experiment {
  ExperimentKind kind = ExperimentKind::kSolve;
  std::vector<int> n_list;
  std::size_t agent = 0;
  int grid_points = 11;
  double grid_half_width = 0.2;
  std::vector<double> bid_grid;
  std::size_t profiles = 20;
  double profile_scale = 1.0;
  std::vector<StrategyProfile> strategy_profiles;
  std::size_t n_runs = 0;
  bool analytic = true;
  std::size_t trajectories = 0;
};

struct Scenario {
  std::string name;
  Mode mode = Mode::kStatic;
  int horizon = 1;
  std::vector<QuadraticAgent> static_agents;
  std::vector<LqAgent> lq_agents;
  std::optional<PopulationBounds> static_population;
  std::optional<DynamicBounds> dynamic_population;
  MechanismSpec mechanism;
  Experiment experiment;
  std::uint64_t seed = 0;
  std::string output;
  std::string source;  // raw JSON of this scenario, recorded in the manifest
};

const char* experiment_name(ExperimentKind kind);
ExperimentKind experiment_from_name(const std::string& name);

// Parses one scenario object or a batch (top-level array or {"scenarios": [...]}).
std::vector<Scenario> parse_scenarios_text(const std::string& text);
std::vector<Scenario> parse_scenario_file(const std::string& path);
Scenario parse_scenario(const std::string& path);

using Cell = std::variant<double, long long, std::string>;

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

struct Results {
  std::vector<Table> tables;
  const Table& table(const std::string& name) const;
};

Results run_experiment(const Scenario& s);

std::string format_number(double x);
std::string to_csv(const Table& t);
std::string to_pretty(const Table& t);
Table parse_csv(const std::string& name, const std::string& text);

enum class OutputFormat { kCsv, kTable };

// Writes <prefix>_<table>.csv (or prints the pretty table) plus <prefix>_manifest.json.
// Returns the written paths.
std::vector<std::string> emit_report(const Results& results, const Scenario& s, const std::string& prefix,
                                     OutputFormat format);

// Exit status: 0 success, 2 validation, 3 numerical, 4 I/O.
int exit_code_for(const std::exception& e);
std::string error_record(const std::exception& e, const std::string& scenario);

int run_scenario(const Scenario& s, OutputFormat format, std::ostream& out);

}  // namespace svcg
