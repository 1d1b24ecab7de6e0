#include "svcg/dynamic_lq.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "svcg/rng.hpp"

namespace svcg {

namespace {

std::string agent_tag(std::size_t i) { return "agent " + std::to_string(i) + ": "; }

bool finite(double x) { return std::isfinite(x); }

}  // namespace

void validate_lq_agents(const std::vector<LqAgent>& agents, bool allow_single) {
  if (agents.size() < (allow_single ? 1u : 2u)) {
    throw DegenerateMarketError("market needs at least 2 agents");
  }
  const int T = agents.front().horizon;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto& g = agents[i];
    if (g.horizon < 1) throw ValidationError(agent_tag(i) + "horizon must be positive");
    if (g.horizon != T) throw ValidationError(agent_tag(i) + "mismatched horizon");
    if (!finite(g.a) || !finite(g.b) || !finite(g.q) || !finite(g.r) || !finite(g.x0) ||
        !finite(g.x_target) || !finite(g.drive) || !finite(g.exo_gain)) {
      throw ValidationError(agent_tag(i) + "non-finite parameter");
    }
    if (!(g.r < 0.0)) throw ValidationError(agent_tag(i) + "r must be strictly negative");
    if (g.q > 0.0) throw ValidationError(agent_tag(i) + "q must be non-positive");
    if (g.b == 0.0) throw ValidationError(agent_tag(i) + "b must be nonzero");
    if (g.exo_signal.size() != 0 && g.exo_signal.size() != T) {
      throw ValidationError(agent_tag(i) + "exogenous signal length must equal the horizon");
    }
    if (!(g.noise_variance >= 0.0) || !(g.init_variance >= 0.0)) {
      throw ValidationError(agent_tag(i) + "variances must be non-negative");
    }
  }
}

int common_horizon(const std::vector<LqAgent>& agents) {
  if (agents.empty()) throw DegenerateMarketError("no agents");
  return agents.front().horizon;
}

Vec simulate_states(const LqAgent& g, const Vec& controls) {
  Vec x(g.horizon);
  double s = g.x0;
  for (int t = 0; t < g.horizon; ++t) {
    x[t] = s;
    s = g.a * s + g.b * controls[t] + g.exo(t);
  }
  return x;
}

double simulate_welfare(const LqAgent& g, const Vec& controls) {
  const Vec x = simulate_states(g, controls);
  double f = 0.0;
  for (int t = 0; t < g.horizon; ++t) f += g.stage_utility(x[t], controls[t]);
  return f;
}

Mat AugmentedProblem::W() const {
  const Eigen::Index n = agents(), T = horizon;
  Mat w = Mat::Zero(n * T, n * T);
  for (Eigen::Index i = 0; i < n; ++i) w.block(i * T, i * T, T, T) = W_blocks[i];
  return w;
}

Vec AugmentedProblem::V() const {
  const Eigen::Index n = agents(), T = horizon;
  Vec v(n * T);
  for (Eigen::Index i = 0; i < n; ++i) v.segment(i * T, T) = V_blocks[i];
  return v;
}

Mat AugmentedProblem::Y() const {
  const Eigen::Index n = agents(), T = horizon;
  Mat y(n * T, T);
  for (Eigen::Index i = 0; i < n; ++i) y.block(i * T, 0, T, T).setIdentity();
  return y;
}

double AugmentedProblem::welfare(const Mat& controls) const {
  double f = constant();
  for (Eigen::Index i = 0; i < agents(); ++i) {
    const Vec u = controls.row(i).transpose();
    f += u.dot(W_blocks[i] * u) + V_blocks[i].dot(u);
  }
  return f;
}

AugmentedProblem build_augmented(const std::vector<LqAgent>& agents) {
  validate_lq_agents(agents, true);
  const int T = common_horizon(agents);
  AugmentedProblem p;
  p.horizon = T;
  p.constants.resize(static_cast<Eigen::Index>(agents.size()));
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto& g = agents[i];
    // x = G u + g0
    Mat G = Mat::Zero(T, T);
    Vec g0(T);
    double free = g.x0;
    for (int t = 0; t < T; ++t) {
      g0[t] = free;
      free = g.a * free + g.exo(t);
      for (int tau = 0; tau < t; ++tau) G(t, tau) = std::pow(g.a, t - 1 - tau) * g.b;
    }
    const Vec e = g0.array() - g.x_target;
    p.W_blocks.push_back(g.q * G.transpose() * G + g.r * Mat::Identity(T, T));
    p.V_blocks.push_back(2.0 * g.q * G.transpose() * e + Vec::Constant(T, g.drive));
    p.constants[static_cast<Eigen::Index>(i)] = g.q * e.squaredNorm();
  }
  return p;
}

DynamicOutcome solve_dynamic_core(const std::vector<LqAgent>& agents) {
  const AugmentedProblem p = build_augmented(agents);
  const Eigen::Index n = p.agents(), T = p.horizon;
  DynamicOutcome out;
  out.controls = Mat::Zero(n, T);
  out.multipliers = Vec::Zero(T);
  if (n >= 2) {
    std::vector<Mat> winv;
    Mat S = Mat::Zero(T, T);
    Vec rhs = Vec::Zero(T);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::LLT<Mat> llt(-p.W_blocks[i]);
      if (llt.info() != Eigen::Success) throw NumericalError("W block not negative definite");
      Mat inv = -llt.solve(Mat::Identity(T, T));
      S += inv;
      rhs += inv * p.V_blocks[i];
      winv.push_back(std::move(inv));
    }
    Eigen::LDLT<Mat> gamma(S);
    if (gamma.info() != Eigen::Success) throw NumericalError("Gamma is singular");
    out.multipliers = gamma.solve(rhs);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.controls.row(i) = (0.5 * winv[i] * (out.multipliers - p.V_blocks[i])).transpose();
    }
  }
  out.states.resize(n, T);
  out.utilities.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& g = agents[static_cast<std::size_t>(i)];
    const Vec u = out.controls.row(i).transpose();
    out.states.row(i) = simulate_states(g, u).transpose();
    out.utilities[i] = simulate_welfare(g, u);
  }
  out.total_welfare = out.utilities.sum();
  return out;
}

std::vector<LqAgent> drop_agent(const std::vector<LqAgent>& agents, std::size_t i) {
  std::vector<LqAgent> rest;
  for (std::size_t j = 0; j < agents.size(); ++j) {
    if (j != i) rest.push_back(agents[j]);
  }
  return rest;
}

DynamicOutcome solve_dynamic(const std::vector<LqAgent>& agents) {
  validate_lq_agents(agents);
  DynamicOutcome out = solve_dynamic_core(agents);
  out.exclusion_welfares.resize(static_cast<Eigen::Index>(agents.size()));
  for (std::size_t i = 0; i < agents.size(); ++i) {
    DynamicOutcome ex = solve_dynamic_core(drop_agent(agents, i));
    out.exclusion_welfares[static_cast<Eigen::Index>(i)] = ex.total_welfare;
    out.exclusion_controls.push_back(std::move(ex.controls));
  }
  return out;
}

Vec kkt_residual(const AugmentedProblem& problem, const DynamicOutcome& outcome) {
  const Eigen::Index n = problem.agents(), T = problem.horizon;
  Vec res(n * T);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec u = outcome.controls.row(i).transpose();
    res.segment(i * T, T) = 2.0 * problem.W_blocks[i] * u + problem.V_blocks[i] - outcome.multipliers;
  }
  return res;
}

namespace {

Vec dyn_others(const DynamicOutcome& o) {
  return Vec::Constant(o.utilities.size(), o.total_welfare) - o.utilities;
}

void check_dyn(const std::vector<LqAgent>& agents, const DynamicOutcome& o) {
  if (o.utilities.size() != static_cast<Eigen::Index>(agents.size()) ||
      o.exclusion_welfares.size() != o.utilities.size()) {
    throw ValidationError("payments: outcome does not match agent count");
  }
}

}  // namespace

PaymentSchedule dynamic_groves_payments(const DynamicOutcome& outcome, const Vec& h) {
  if (h.size() != outcome.utilities.size()) throw ValidationError("groves: h has wrong length");
  PaymentSchedule p;
  p.mechanism = MechanismKind::kGroves;
  p.payments = h - dyn_others(outcome);
  return p;
}

PaymentSchedule dynamic_vcg_payments(const std::vector<LqAgent>& agents,
                                     const DynamicOutcome& outcome) {
  check_dyn(agents, outcome);
  PaymentSchedule p = dynamic_groves_payments(outcome, outcome.exclusion_welfares);
  p.mechanism = MechanismKind::kVcg;
  return p;
}

PaymentSchedule dynamic_svcg_payments(const std::vector<LqAgent>& agents,
                                      const DynamicOutcome& outcome, double c) {
  check_dyn(agents, outcome);
  PaymentSchedule p;
  p.mechanism = MechanismKind::kSvcg;
  p.scaling = c;
  p.payments = svcg_from_terms(outcome.exclusion_welfares, dyn_others(outcome), c);
  return p;
}

ScalingInterval dynamic_scaling_interval(const std::vector<LqAgent>& agents,
                                         const DynamicOutcome& outcome) {
  check_dyn(agents, outcome);
  return make_interval(outcome.total_welfare, outcome.exclusion_welfares);
}

DistortionTerms dynamic_distortion_terms(const DynamicOutcome& outcome) {
  return {outcome.controls * outcome.multipliers, dyn_others(outcome), outcome.exclusion_welfares};
}

MinMaxResult dynamic_minmax_c(const std::vector<LqAgent>& agents, const DynamicOutcome& outcome,
                              bool normalize) {
  return minmax_over_interval(dynamic_distortion_terms(outcome),
                              dynamic_scaling_interval(agents, outcome), normalize);
}

double dynamic_net_utility(const std::vector<LqAgent>& reports, std::size_t index,
                           const LqAgent& truth, double c) {
  const DynamicOutcome o = solve_dynamic_core(reports);
  const double others = o.total_welfare - o.utilities[static_cast<Eigen::Index>(index)];
  const double h = c * solve_dynamic_core(drop_agent(reports, index)).total_welfare;
  const Vec u = o.controls.row(static_cast<Eigen::Index>(index)).transpose();
  return simulate_welfare(truth, u) - (h - others);
}

DynamicIcReport dynamic_ic_check(const std::vector<LqAgent>& agents, std::size_t agent_index,
                                 const std::vector<LqAgent>& grid,
                                 const std::vector<std::vector<LqAgent>>& opponent_profiles,
                                 double c, double slack) {
  validate_lq_agents(agents);
  if (agent_index >= agents.size()) throw ValidationError("ic check: agent index out of range");
  auto profiles = opponent_profiles;
  if (profiles.empty()) profiles.push_back(agents);
  const LqAgent truth = agents[agent_index];
  DynamicIcReport rep;
  for (auto reports : profiles) {
    if (reports.size() != agents.size()) throw ValidationError("ic check: profile size mismatch");
    reports[agent_index] = truth;
    const double honest = dynamic_net_utility(reports, agent_index, truth, c);
    for (const auto& g : grid) {
      reports[agent_index] = g;
      const double gain = dynamic_net_utility(reports, agent_index, truth, c) - honest;
      ++rep.evaluations;
      rep.max_gain = std::max(rep.max_gain, gain);
      if (gain > slack * (1.0 + std::abs(honest))) ++rep.violations;
    }
  }
  return rep;
}

std::vector<LqAgent> sample_lq_population(int n, const DynamicBounds& bounds, std::uint64_t seed) {
  if (n < 0) throw ValidationError("population size must be non-negative");
  if (bounds.horizon < 1) throw ValidationError("population bounds: horizon must be positive");
  if (!(bounds.r.hi < 0.0) || !(bounds.q.hi <= 0.0) || bounds.drive_bands.empty()) {
    throw ValidationError("population bounds: need r < 0, q <= 0 and a drive band");
  }
  if (!(bounds.b.lo > 0.0) || !(bounds.a.lo >= 0.0)) {
    throw ValidationError("population bounds: |a| and |b| ranges must be non-negative, b > 0");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const Range& r) { return r.lo + (r.hi - r.lo) * unit(rng); };
  std::vector<LqAgent> out;
  for (int i = 0; i < n; ++i) {
    LqAgent g;
    g.horizon = bounds.horizon;
    g.a = draw(bounds.a);
    g.b = draw(bounds.b);
    g.q = draw(bounds.q);
    g.r = draw(bounds.r);
    g.drive = draw(bounds.drive_bands[static_cast<std::size_t>(i) % bounds.drive_bands.size()]);
    g.x0 = draw(bounds.x0);
    g.noise_variance = bounds.noise_variance;
    g.init_variance = bounds.init_variance;
    out.push_back(g);
  }
  return out;
}

AsymptoticsRow dynamic_asymptotics_row(const std::vector<LqAgent>& agents) {
  const DynamicOutcome o = solve_dynamic(agents);
  const ScalingInterval iv = dynamic_scaling_interval(agents, o);
  AsymptoticsRow row;
  row.n = static_cast<int>(agents.size());
  row.c_lower = iv.lower;
  row.c_upper = iv.upper;
  row.feasible = iv.mpb_holds && iv.lower <= iv.upper;
  if (!row.feasible) {
    row.c_star = row.payment_gap = std::nan("");
    return row;
  }
  const MinMaxResult mm = minmax_over_interval(dynamic_distortion_terms(o), iv, false);
  row.c_star = mm.c_star;
  row.payment_gap = mm.distortions.cwiseAbs().maxCoeff();
  return row;
}

std::vector<AsymptoticsRow> dynamic_asymptotics_experiment(const std::vector<int>& n_list,
                                                           const DynamicBounds& bounds,
                                                           std::uint64_t seed) {
  std::vector<AsymptoticsRow> rows;
  for (int n : n_list) {
    if (n < 3) throw ValidationError("asymptotics: every N must be at least 3");
    rows.push_back(dynamic_asymptotics_row(
        sample_lq_population(n, bounds, derive_seed(seed, static_cast<std::uint64_t>(n)))));
  }
  return rows;
}

}  // namespace svcg
