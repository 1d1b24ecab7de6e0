#pragma once

#include <cstdint>
#include <vector>

#include "svcg/common.hpp"
#include "svcg/static_market.hpp"

namespace svcg {

enum class NoiseLaw { kGaussian, kUniform };

// Scalar agent: x(t+1) = a x(t) + b u(t) + eta h(t) + w(t),
// stage utility q (x - x_target)^2 + r u^2 + v u for t = 0..T-1.
// noise_variance / init_variance are only read by the stochastic modules.
struct LqAgent {
  double a = 1.0;
  double b = 1.0;
  double q = 0.0;
  double r = -1.0;
  double x0 = 0.0;
  int horizon = 1;
  double x_target = 0.0;
  double drive = 0.0;
  double exo_gain = 0.0;
  Vec exo_signal;  // empty or length horizon
  double noise_variance = 0.0;
  double init_variance = 0.0;
  NoiseLaw noise_law = NoiseLaw::kGaussian;

  double exo(int t) const { return exo_signal.size() == 0 ? 0.0 : exo_gain * exo_signal[t]; }
  double stage_utility(double x, double u) const {
    const double e = x - x_target;
    return q * e * e + r * u * u + drive * u;
  }
};

using StochasticLqAgent = LqAgent;

void validate_lq_agents(const std::vector<LqAgent>& agents, bool allow_single = false);
int common_horizon(const std::vector<LqAgent>& agents);

// States x(0..T-1) of one agent driven by its controls, no noise.
Vec simulate_states(const LqAgent& agent, const Vec& controls);
double simulate_welfare(const LqAgent& agent, const Vec& controls);

struct AugmentedProblem {
  int horizon = 0;
  std::vector<Mat> W_blocks;
  std::vector<Vec> V_blocks;
  Vec constants;

  Eigen::Index agents() const { return static_cast<Eigen::Index>(W_blocks.size()); }
  Mat W() const;
  Vec V() const;
  Mat Y() const;
  double constant() const { return constants.sum(); }
  // Omega'W Omega + V'Omega + const, Omega = stacked rows of `controls` (N x T).
  double welfare(const Mat& controls) const;
};

AugmentedProblem build_augmented(const std::vector<LqAgent>& agents);

struct DynamicOutcome {
  Mat controls;      // N x T
  Mat states;        // N x T
  Vec multipliers;   // T
  double total_welfare = 0.0;
  Vec utilities;
  Vec exclusion_welfares;
  std::vector<Mat> exclusion_controls;  // (N-1) x T each
};

// Balanced optimum without exclusion solves; a single agent is forced to zero.
DynamicOutcome solve_dynamic_core(const std::vector<LqAgent>& agents);
DynamicOutcome solve_dynamic(const std::vector<LqAgent>& agents);

// 2 W Omega + V - Y lambda, stacked.
Vec kkt_residual(const AugmentedProblem& problem, const DynamicOutcome& outcome);

PaymentSchedule dynamic_groves_payments(const DynamicOutcome& outcome, const Vec& h);
PaymentSchedule dynamic_vcg_payments(const std::vector<LqAgent>& agents,
                                     const DynamicOutcome& outcome);
PaymentSchedule dynamic_svcg_payments(const std::vector<LqAgent>& agents,
                                      const DynamicOutcome& outcome, double c);

ScalingInterval dynamic_scaling_interval(const std::vector<LqAgent>& agents,
                                         const DynamicOutcome& outcome);
DistortionTerms dynamic_distortion_terms(const DynamicOutcome& outcome);
MinMaxResult dynamic_minmax_c(const std::vector<LqAgent>& agents, const DynamicOutcome& outcome,
                              bool normalize);

// Net utility of agent `index` with true model `truth` when the ISO sees `reports`.
double dynamic_net_utility(const std::vector<LqAgent>& reports, std::size_t index,
                           const LqAgent& truth, double c);

struct DynamicIcReport {
  std::size_t evaluations = 0;
  double max_gain = 0.0;
  std::size_t violations = 0;
};

DynamicIcReport dynamic_ic_check(const std::vector<LqAgent>& agents, std::size_t agent_index,
                                 const std::vector<LqAgent>& grid,
                                 const std::vector<std::vector<LqAgent>>& opponent_profiles,
                                 double c = 1.0, double slack = 1e-9);

struct DynamicBounds {
  int horizon = 3;
  Range a{0.9, 1.1};
  Range b{0.9, 1.1};
  Range q{-0.2, -0.1};
  Range r{-1.2, -0.8};
  std::vector<Range> drive_bands{{1.0, 2.0}, {4.0, 5.0}};
  Range x0{0.0, 0.0};
  double noise_variance = 0.0;
  double init_variance = 0.0;
};

std::vector<LqAgent> sample_lq_population(int n, const DynamicBounds& bounds, std::uint64_t seed);

AsymptoticsRow dynamic_asymptotics_row(const std::vector<LqAgent>& agents);
std::vector<AsymptoticsRow> dynamic_asymptotics_experiment(const std::vector<int>& n_list,
                                                           const DynamicBounds& bounds,
                                                           std::uint64_t seed);

std::vector<LqAgent> drop_agent(const std::vector<LqAgent>& agents, std::size_t i);

}  // namespace svcg
