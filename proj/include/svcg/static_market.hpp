#pragma once

#include <cstdint>
#include <vector>

#include "svcg/common.hpp"

namespace svcg {

// F(u) = curvature * u^2 + linear_coef * u, curvature < 0.
struct QuadraticAgent {
  double curvature = -1.0;
  double linear_coef = 0.0;

  double utility(double u) const { return curvature * u * u + linear_coef * u; }
};

struct MarketOutcome {
  Vec allocations;
  double multiplier = 0.0;
  double total_welfare = 0.0;
  Vec utilities;
  Vec exclusion_welfares;
  std::vector<Vec> exclusion_allocations;  // entry i has N-1 components (agent i dropped)
};

void validate_agents(const std::vector<QuadraticAgent>& agents);

MarketOutcome solve_balanced_qp(const std::vector<QuadraticAgent>& agents);

// Welfare-maximizing balanced allocation without exclusion solves; allows one agent.
Vec balanced_allocation(const std::vector<QuadraticAgent>& agents, double* multiplier = nullptr);

Vec others_welfare(const MarketOutcome& outcome);

PaymentSchedule groves_payments(const std::vector<QuadraticAgent>& agents,
                                const MarketOutcome& outcome, const Vec& h);
PaymentSchedule vcg_payments(const std::vector<QuadraticAgent>& agents,
                             const MarketOutcome& outcome);
PaymentSchedule svcg_payments(const std::vector<QuadraticAgent>& agents,
                              const MarketOutcome& outcome, double c);

ScalingInterval scaling_interval(const std::vector<QuadraticAgent>& agents,
                                 const MarketOutcome& outcome);

DistortionTerms distortion_terms(const MarketOutcome& outcome);

MinMaxResult minmax_c(const std::vector<QuadraticAgent>& agents, const MarketOutcome& outcome,
                      bool normalize);

struct IcViolation {
  QuadraticAgent report;
  std::size_t profile = 0;
  double gain = 0.0;  // net utility of the misreport minus truthful net utility
};

struct IcReport {
  std::size_t evaluations = 0;
  double max_gain = 0.0;
  std::vector<IcViolation> violations;
};

// Payment rule used by the brute-force check. The h term is recomputed from
// others' reports only, so it never depends on the reporting agent.
struct StaticPaymentRule {
  MechanismKind kind = MechanismKind::kSvcg;
  double c = 1.0;
};

// Net utility F_i(u_i) - p_i under true preferences of `truth` when agent
// `index` reports `report` and the others report `others`.
double static_net_utility(const std::vector<QuadraticAgent>& reports, std::size_t index,
                          const QuadraticAgent& truth, const StaticPaymentRule& rule);

std::vector<QuadraticAgent> misreport_grid(const QuadraticAgent& truth, int points_per_axis,
                                           double rel_half_width);

// `opponent_profiles` are full report vectors; entry `index` is ignored.
// An empty list means the others report truthfully.
IcReport ic_bruteforce_check(const std::vector<QuadraticAgent>& agents, std::size_t agent_index,
                             const std::vector<QuadraticAgent>& grid,
                             const std::vector<std::vector<QuadraticAgent>>& opponent_profiles = {},
                             const StaticPaymentRule& rule = {}, double slack = 1e-9);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Curvatures uniform on `curvature`; linear coefficients uniform on
// linear_bands[i % bands] (one band is the plain uniform box).
struct PopulationBounds {
  Range curvature{-1.2, -0.8};
  std::vector<Range> linear_bands{{1.0, 5.0}};
};

std::vector<QuadraticAgent> sample_population(int n, const PopulationBounds& bounds,
                                              std::uint64_t seed);

struct AsymptoticsRow {
  int n = 0;
  double c_lower = 0.0;
  double c_upper = 0.0;
  double c_star = 0.0;
  double payment_gap = 0.0;
  bool feasible = false;
};

// c_star from the absolute MinMax; payment_gap = max_i |lambda u_i - p_i(c_star)|.
// Infeasible rows carry NaN in c_star and payment_gap.
std::vector<AsymptoticsRow> asymptotics_experiment(const std::vector<int>& n_list,
                                                   const PopulationBounds& bounds,
                                                   std::uint64_t seed);

AsymptoticsRow asymptotics_row(const std::vector<QuadraticAgent>& agents);

}  // namespace svcg
