#include "svcg/static_market.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "svcg/rng.hpp"

namespace svcg {

void validate_agents(const std::vector<QuadraticAgent>& agents) {
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto& a = agents[i];
    if (!std::isfinite(a.curvature) || !std::isfinite(a.linear_coef)) {
      throw ValidationError("agent " + std::to_string(i) + ": non-finite coefficient");
    }
    if (!(a.curvature < 0.0)) {
      throw ValidationError("agent " + std::to_string(i) + ": curvature must be strictly negative");
    }
  }
}

Vec balanced_allocation(const std::vector<QuadraticAgent>& agents, double* multiplier) {
  const auto n = static_cast<Eigen::Index>(agents.size());
  Vec u = Vec::Zero(n);
  if (n == 0) {
    if (multiplier) *multiplier = 0.0;
    return u;
  }
  // gamma = (1'A^{-1}1)^{-1}, lambda = gamma 1'A^{-1}B
  double inv_sum = 0.0, ratio_sum = 0.0;
  for (const auto& a : agents) {
    inv_sum += 1.0 / a.curvature;
    ratio_sum += a.linear_coef / a.curvature;
  }
  const double lambda = ratio_sum / inv_sum;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = agents[static_cast<std::size_t>(i)];
    u[i] = 0.5 * (lambda - a.linear_coef) / a.curvature;
  }
  if (n == 1) u[0] = 0.0;
  if (multiplier) *multiplier = lambda;
  return u;
}

namespace {

double welfare(const std::vector<QuadraticAgent>& agents, const Vec& u) {
  double f = 0.0;
  for (std::size_t i = 0; i < agents.size(); ++i) f += agents[i].utility(u[static_cast<Eigen::Index>(i)]);
  return f;
}

std::vector<QuadraticAgent> without(const std::vector<QuadraticAgent>& agents, std::size_t i) {
  std::vector<QuadraticAgent> rest;
  rest.reserve(agents.size() - 1);
  for (std::size_t j = 0; j < agents.size(); ++j) {
    if (j != i) rest.push_back(agents[j]);
  }
  return rest;
}

void check_outcome(const std::vector<QuadraticAgent>& agents, const MarketOutcome& outcome) {
  if (outcome.allocations.size() != static_cast<Eigen::Index>(agents.size()) ||
      outcome.exclusion_welfares.size() != static_cast<Eigen::Index>(agents.size())) {
    throw ValidationError("payments: outcome does not match agent count");
  }
}

}  // namespace

MarketOutcome solve_balanced_qp(const std::vector<QuadraticAgent>& agents) {
  if (agents.size() < 2) throw DegenerateMarketError("market needs at least 2 agents");
  validate_agents(agents);
  MarketOutcome out;
  out.allocations = balanced_allocation(agents, &out.multiplier);
  const auto n = static_cast<Eigen::Index>(agents.size());
  out.utilities.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.utilities[i] = agents[static_cast<std::size_t>(i)].utility(out.allocations[i]);
  }
  out.total_welfare = out.utilities.sum();
  out.exclusion_welfares.resize(n);
  out.exclusion_allocations.clear();
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto rest = without(agents, i);
    Vec ui = balanced_allocation(rest);
    out.exclusion_welfares[static_cast<Eigen::Index>(i)] = welfare(rest, ui);
    out.exclusion_allocations.push_back(std::move(ui));
  }
  return out;
}

Vec others_welfare(const MarketOutcome& outcome) {
  return Vec::Constant(outcome.utilities.size(), outcome.total_welfare) - outcome.utilities;
}

PaymentSchedule groves_payments(const std::vector<QuadraticAgent>& agents,
                                const MarketOutcome& outcome, const Vec& h) {
  check_outcome(agents, outcome);
  if (h.size() != outcome.utilities.size()) throw ValidationError("groves: h has wrong length");
  PaymentSchedule p;
  p.mechanism = MechanismKind::kGroves;
  p.payments = h - others_welfare(outcome);
  return p;
}

PaymentSchedule vcg_payments(const std::vector<QuadraticAgent>& agents,
                             const MarketOutcome& outcome) {
  PaymentSchedule p = groves_payments(agents, outcome, outcome.exclusion_welfares);
  p.mechanism = MechanismKind::kVcg;
  return p;
}

PaymentSchedule svcg_payments(const std::vector<QuadraticAgent>& agents,
                              const MarketOutcome& outcome, double c) {
  check_outcome(agents, outcome);
  PaymentSchedule p;
  p.mechanism = MechanismKind::kSvcg;
  p.scaling = c;
  p.payments = svcg_from_terms(outcome.exclusion_welfares, others_welfare(outcome), c);
  return p;
}

ScalingInterval scaling_interval(const std::vector<QuadraticAgent>& agents,
                                 const MarketOutcome& outcome) {
  check_outcome(agents, outcome);
  return make_interval(outcome.total_welfare, outcome.exclusion_welfares);
}

DistortionTerms distortion_terms(const MarketOutcome& outcome) {
  return {outcome.multiplier * outcome.allocations, others_welfare(outcome),
          outcome.exclusion_welfares};
}

MinMaxResult minmax_c(const std::vector<QuadraticAgent>& agents, const MarketOutcome& outcome,
                      bool normalize) {
  return minmax_over_interval(distortion_terms(outcome), scaling_interval(agents, outcome),
                              normalize);
}

double static_net_utility(const std::vector<QuadraticAgent>& reports, std::size_t index,
                          const QuadraticAgent& truth, const StaticPaymentRule& rule) {
  double lambda = 0.0;
  const Vec u = balanced_allocation(reports, &lambda);
  double others = 0.0;
  for (std::size_t j = 0; j < reports.size(); ++j) {
    if (j != index) others += reports[j].utility(u[static_cast<Eigen::Index>(j)]);
  }
  double h = 0.0;
  if (rule.kind != MechanismKind::kGroves) {
    const auto rest = without(reports, index);
    h = welfare(rest, balanced_allocation(rest));
    if (rule.kind == MechanismKind::kSvcg) h *= rule.c;
  }
  const double payment = h - others;
  return truth.utility(u[static_cast<Eigen::Index>(index)]) - payment;
}

std::vector<QuadraticAgent> misreport_grid(const QuadraticAgent& truth, int points_per_axis,
                                           double rel_half_width) {
  std::vector<QuadraticAgent> grid;
  const int k = std::max(points_per_axis, 1);
  auto axis = [&](double centre, int j) {
    if (k == 1) return centre;
    const double t = -1.0 + 2.0 * j / (k - 1);
    return centre * (1.0 + rel_half_width * t);
  };
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      QuadraticAgent a{axis(truth.curvature, i), axis(truth.linear_coef, j)};
      if (i == (k - 1) / 2) a.curvature = truth.curvature;
      if (j == (k - 1) / 2) a.linear_coef = truth.linear_coef;
      if (a.curvature < 0.0) grid.push_back(a);
    }
  }
  return grid;
}

IcReport ic_bruteforce_check(const std::vector<QuadraticAgent>& agents, std::size_t agent_index,
                             const std::vector<QuadraticAgent>& grid,
                             const std::vector<std::vector<QuadraticAgent>>& opponent_profiles,
                             const StaticPaymentRule& rule, double slack) {
  if (agent_index >= agents.size()) throw ValidationError("ic check: agent index out of range");
  validate_agents(grid);
  std::vector<std::vector<QuadraticAgent>> profiles = opponent_profiles;
  if (profiles.empty()) profiles.push_back(agents);
  const QuadraticAgent truth = agents[agent_index];
  IcReport report;
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    auto reports = profiles[k];
    if (reports.size() != agents.size()) throw ValidationError("ic check: profile size mismatch");
    reports[agent_index] = truth;
    const double honest = static_net_utility(reports, agent_index, truth, rule);
    const double scale = 1.0 + std::abs(honest);
    for (const auto& g : grid) {
      reports[agent_index] = g;
      const double gain = static_net_utility(reports, agent_index, truth, rule) - honest;
      ++report.evaluations;
      report.max_gain = std::max(report.max_gain, gain);
      if (gain > slack * scale) report.violations.push_back({g, k, gain});
    }
  }
  return report;
}

std::vector<QuadraticAgent> sample_population(int n, const PopulationBounds& bounds,
                                              std::uint64_t seed) {
  if (!(bounds.curvature.lo <= bounds.curvature.hi) || !(bounds.curvature.hi < 0.0)) {
    throw ValidationError("population bounds: curvature range must satisfy lo <= hi < 0");
  }
  if (bounds.linear_bands.empty()) throw ValidationError("population bounds: no linear band");
  for (const auto& b : bounds.linear_bands) {
    if (!(b.lo <= b.hi) || !(b.lo > 0.0)) {
      throw ValidationError("population bounds: linear band must satisfy 0 < lo <= hi");
    }
  }
  if (n < 0) throw ValidationError("population size must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const Range& r) { return r.lo + (r.hi - r.lo) * unit(rng); };
  std::vector<QuadraticAgent> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double a = draw(bounds.curvature);
    const double b = draw(bounds.linear_bands[static_cast<std::size_t>(i) % bounds.linear_bands.size()]);
    out.push_back({a, b});
  }
  return out;
}

AsymptoticsRow asymptotics_row(const std::vector<QuadraticAgent>& agents) {
  const MarketOutcome out = solve_balanced_qp(agents);
  const ScalingInterval iv = scaling_interval(agents, out);
  AsymptoticsRow row;
  row.n = static_cast<int>(agents.size());
  row.c_lower = iv.lower;
  row.c_upper = iv.upper;
  row.feasible = iv.mpb_holds && iv.lower <= iv.upper;
  if (!row.feasible) {
    row.c_star = row.payment_gap = std::nan("");
    return row;
  }
  const MinMaxResult mm = minmax_over_interval(distortion_terms(out), iv, false);
  row.c_star = mm.c_star;
  row.payment_gap = mm.distortions.cwiseAbs().maxCoeff();
  return row;
}

std::vector<AsymptoticsRow> asymptotics_experiment(const std::vector<int>& n_list,
                                                   const PopulationBounds& bounds,
                                                   std::uint64_t seed) {
  std::vector<AsymptoticsRow> rows;
  for (int n : n_list) {
    if (n < 3) throw ValidationError("asymptotics: every N must be at least 3");
    rows.push_back(asymptotics_row(
        sample_population(n, bounds, derive_seed(seed, static_cast<std::uint64_t>(n)))));
  }
  return rows;
}

}  // namespace svcg
