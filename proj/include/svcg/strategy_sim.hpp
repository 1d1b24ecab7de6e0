#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "svcg/lqg_layered.hpp"

namespace svcg {

enum class StrategyKind { kTruthful, kAdditiveOffset, kZeroNoise, kParamMisreport, kNaiveStateBidder };

struct Strategy {
  StrategyKind kind = StrategyKind::kTruthful;
  double offset = 0.0;               // AdditiveOffset: added to every stage bid
  std::optional<double> q, r, a, b;  // ParamMisreport overrides
  bool zero_noise_bids = false;      // ParamMisreport: bid as if w == 0 afterwards
  Vec state_offsets;                 // NaiveStateBidder: per-time offset on the state report

  static Strategy truthful() { return {}; }
  static Strategy additive(double delta) {
    Strategy s;
    s.kind = StrategyKind::kAdditiveOffset;
    s.offset = delta;
    return s;
  }
  static Strategy zero_noise() {
    Strategy s;
    s.kind = StrategyKind::kZeroNoise;
    return s;
  }
  static Strategy naive(Vec offsets) {
    Strategy s;
    s.kind = StrategyKind::kNaiveStateBidder;
    s.state_offsets = std::move(offsets);
    return s;
  }
};

const char* strategy_name(StrategyKind kind);

// Models the ISO plans with after applying parameter misreports.
std::vector<LqAgent> reported_models(const std::vector<LqAgent>& truth,
                                     const std::vector<Strategy>& strategies);

// Stage bids implied by the strategies (layered mechanism only).
std::vector<Mat> strategy_bids(const std::vector<LqAgent>& truth, const std::vector<Strategy>& strategies,
                               const AffineSpace& space);

struct AnalyticReport {
  Vec net;
  Vec utilities;
  Vec payments;
};

AnalyticReport analytic_expected_net_utility(const std::vector<LqAgent>& agents,
                                             const std::vector<Strategy>& strategies, double c,
                                             PivotKind pivot = PivotKind::kClarke);

struct SimulationReport {
  std::size_t runs = 0;
  Vec mean_net, se_net;
  Vec mean_payment, se_payment;
  double bb_rate = 0.0;  // fraction of runs with sum of payments >= 0
  Vec ir_rate;           // per agent, fraction of runs with net >= 0
  Mat samples;           // runs x N net utilities (kept on request)
  Mat payment_samples;   // runs x N total payments (kept on request)
};

// Primitive draws of replication `run`: N x T (init deviation, then w(0..T-2)).
Mat draw_primitives(const std::vector<LqAgent>& agents, std::uint64_t seed, std::size_t run);

SimulationReport monte_carlo(const std::vector<LqAgent>& agents, const std::vector<Strategy>& strategies,
                             double c, std::size_t n_runs, std::uint64_t seed, bool keep_samples = false,
                             PivotKind pivot = PivotKind::kClarke, unsigned threads = 0);

struct PairedDifference {
  double mean = 0.0;
  double se = 0.0;
};

// Mean and standard error of samples_a - samples_b for one agent (common random numbers).
PairedDifference paired_difference(const SimulationReport& a, const SimulationReport& b,
                                   std::size_t agent);

// One row per (replication, stage).
struct TrajectoryRow {
  std::size_t replication = 0;
  int stage = 0;
  double multiplier = 0.0;
  Vec noise, bid, allocation, payment;
};

std::vector<TrajectoryRow> simulate_trajectories(const std::vector<LqAgent>& agents,
                                                 const std::vector<Strategy>& strategies, double c,
                                                 std::size_t n_runs, std::uint64_t seed);

// Fixed opponent behaviour for the dominance check: bids(j, s) replaces
// opponent j's stage-s bid at every stage up to the checked one.
struct OpponentProfile {
  Mat bids;  // N x T
};

std::vector<OpponentProfile> sample_opponent_profiles(std::size_t n_agents, int horizon,
                                                      std::size_t count, double scale,
                                                      std::uint64_t seed);

struct LayeredIcReport {
  std::size_t evaluations = 0;
  std::size_t violations = 0;
  double max_gain = 0.0;
  // min over profiles and nonzero deviations of (truthful - deviation) at the
  // last stage where bids move allocations
  double strict_margin = 0.0;
  // max |truthful - deviation| at stage T-1
  double final_stage_spread = 0.0;
};

// Stage-by-stage dominance: agent `agent_index` is truthful before stage s,
// deviates by each grid offset at s, and is truthful afterwards; opponents
// follow the profile up to s and bid truthfully after. Expectations are
// conditional on a sampled history of the agent's own primitives.
LayeredIcReport ic_grid_check_layered(const std::vector<LqAgent>& agents, std::size_t agent_index,
                                      const std::vector<double>& bid_grid,
                                      const std::vector<OpponentProfile>& opponent_profiles, double c,
                                      std::uint64_t seed, double slack = 1e-8);

// Expectation-based per-period mechanism: agents report states each period;
// p_i(t) = h_i(t) - E[others' welfare from t on | X(t) = reports].
struct NaiveOutcome {
  Vec net;
  Vec utilities;
  Vec payments;
};

NaiveOutcome naive_expected_net(const std::vector<LqAgent>& agents, const std::vector<Strategy>& strategies,
                                PivotKind pivot);

enum class SearchStatus { kViolationFound, kInconclusive };

struct CounterexampleReport {
  SearchStatus status = SearchStatus::kInconclusive;
  double opponent_lie = 0.0;
  std::vector<double> grid;
  Vec best_offsets;                 // deviating agent's per-time offsets
  double naive_truthful = 0.0;
  double naive_best = 0.0;
  double naive_gap = 0.0;           // best - truthful under the naive mechanism
  double layered_gap = 0.0;         // same grid under the layered mechanism
  double truthful_vs_truthful = 0.0;
};

// Agent 0 searches a per-time offset grid against agent 1 lying by
// `opponent_lie` at t = 0 only.
CounterexampleReport naive_mechanism_counterexample(const std::vector<LqAgent>& agents,
                                                    double opponent_lie, const std::vector<double>& grid,
                                                    PivotKind pivot = PivotKind::kNone);

}  // namespace svcg
