#pragma once

#include <optional>
#include <vector>

#include "svcg/common.hpp"
#include "svcg/dynamic_lq.hpp"

namespace svcg {

using RowVec = Eigen::RowVectorXd;

// Closed-loop law u(t) = K(t) x + k(t) of the balance-constrained LQ problem,
// value V_t(x) = x'P_t x + p_t'x + c_t (noise-free), multiplier
// lambda(t) = Phi_t x + phi_t.
struct GainSchedule {
  int horizon = 0;
  Eigen::Index agents = 0;
  int eliminated = 0;
  Vec a, b, q, r, x_target, drive;
  std::vector<Vec> exo;  // per-time drive eta h(t)
  std::vector<Mat> K;
  std::vector<Vec> k;
  std::vector<Mat> P;    // t = 0..T
  std::vector<Vec> p;
  std::vector<double> c0;
  std::vector<RowVec> Phi;
  std::vector<double> phi;
};

// eliminated < 0 selects the highest index.
GainSchedule compute_gains(const std::vector<LqAgent>& agents, int eliminated = -1);

// Independent zero-mean primitives: slot (i, 0) is agent i's initial-state
// deviation, slot (i, k) for k >= 1 is w_i(k-1). Each slot either owns a
// column of an affine form or is pinned to a realized value. Forms are
// matrices with one row per agent and a trailing constant column.
class AffineSpace {
 public:
  // variances: N x T (column 0 = init variance, column k = noise variance).
  explicit AffineSpace(const Mat& variances);
  AffineSpace(const Mat& variances, const Mat& fixed_values, const Eigen::Array<bool, -1, -1>& fixed);
  static AffineSpace realized(const Mat& values);
  static AffineSpace for_agents(const std::vector<LqAgent>& agents);

  Eigen::Index agents() const { return slot_col_.rows(); }
  int horizon() const { return static_cast<int>(slot_col_.cols()); }
  Eigen::Index columns() const { return weights_.size(); }
  Eigen::Index constant() const { return weights_.size() - 1; }
  const Vec& weights() const { return weights_; }

  RowVec slot(Eigen::Index agent, int k) const;
  RowVec constant_form(double value) const;
  Mat zeros(Eigen::Index rows) const { return Mat::Zero(rows, columns()); }

  double mean(const RowVec& f) const { return f[constant()]; }
  double expect(const RowVec& f, const RowVec& g) const;

 private:
  Eigen::MatrixXi slot_col_;  // -1 when pinned
  Mat slot_value_;
  Vec weights_;
};

// Triangular arrays X(s,t), U(s,t) for one market, driven stage by stage.
class LayerLedger {
 public:
  LayerLedger(const std::vector<LqAgent>& model, const GainSchedule& gains, const AffineSpace& space);

  int stage() const { return next_stage_; }
  bool complete() const { return next_stage_ == horizon_; }
  void apply_stage(int s, const Mat& bids);

  const Mat& X(int s, int t) const;
  const Mat& U(int s, int t) const;
  const Mat& bid(int s) const { return bids_.at(static_cast<std::size_t>(s)); }
  // Cumulative plan as of the last applied stage.
  const Mat& plan_state(int t) const { return plan_x_.at(static_cast<std::size_t>(t)); }
  const Mat& plan_control(int t) const { return plan_u_.at(static_cast<std::size_t>(t)); }
  // Welfare increment of every agent for stage s (expectation under the space).
  Vec welfare_increment(int s) const;
  RowVec multiplier(int s, int t) const;  // Phi_t sum_{tau<=s} X(tau,t) + phi_t
  int horizon() const { return horizon_; }

 private:
  std::vector<LqAgent> model_;
  const GainSchedule* gains_;
  const AffineSpace* space_;
  int horizon_;
  int next_stage_ = 0;
  std::vector<Mat> bids_;
  std::vector<std::vector<Mat>> X_, U_;
  std::vector<Mat> plan_x_, plan_u_;
  std::vector<Vec> increments_;
};

enum class PivotKind { kNone, kClarke };

struct LayeredOptions {
  PivotKind pivot = PivotKind::kClarke;
  double c = 1.0;
  int eliminated = -1;
};

// Bids of every agent at every stage (T entries of N x C) plus the true
// models used for realized utilities and the reported models the ISO plans with.
struct LayeredRun {
  Mat payments;           // N x T expected p_i(s)
  Vec utilities;          // expected true utility per agent
  Vec net;                // utilities - payments summed over stages
  std::vector<Mat> controls;      // applied U(t), entry t is N x C
  std::vector<Mat> true_states;
  std::vector<RowVec> multipliers;
  Vec lagrange;           // E sum_t lambda(t) u_i(t)
  double rsw = 0.0;       // E sum_t sum_i F_i(true x, u) under the reported models
  double layered_welfare = 0.0;  // sum_s L_s
};

class LayeredMechanism {
 public:
  LayeredMechanism(std::vector<LqAgent> reported, LayeredOptions options = {});

  const GainSchedule& gains() const { return gains_; }
  const GainSchedule& exclusion_gains(std::size_t i) const { return excl_gains_.at(i); }
  const std::vector<LqAgent>& reported() const { return reported_; }
  const LayeredOptions& options() const { return options_; }

  LayeredRun run(const std::vector<LqAgent>& truth, const AffineSpace& space,
                 const std::vector<Mat>& bids) const;

 private:
  std::vector<LqAgent> reported_;
  LayeredOptions options_;
  GainSchedule gains_;
  std::vector<std::vector<LqAgent>> excl_models_;
  std::vector<GainSchedule> excl_gains_;
};

// Stage bids of truthful agents: x(0) at stage 0, w(s-1) afterwards.
std::vector<Mat> truthful_bids(const std::vector<LqAgent>& truth, const AffineSpace& space);

// True state forms under applied controls (entry t is N x C).
std::vector<Mat> true_state_forms(const std::vector<LqAgent>& truth, const AffineSpace& space,
                                  const std::vector<Mat>& controls);

double rsw_decompose_check(const LayeredRun& run);

// Exact second-moment propagation of the truthful closed loop.
struct StochasticOutcome {
  Vec utilities;
  double total_welfare = 0.0;
  Vec exclusion_welfares;
  Vec lagrange;
};

StochasticOutcome closed_loop_moments(const std::vector<LqAgent>& agents, const GainSchedule& gains);
StochasticOutcome stochastic_outcome(const std::vector<LqAgent>& agents);

ScalingInterval stochastic_scaling_interval(const std::vector<LqAgent>& agents);
ScalingInterval stochastic_scaling_interval(const StochasticOutcome& outcome);
DistortionTerms stochastic_distortion_terms(const StochasticOutcome& outcome);
MinMaxResult stochastic_minmax_c(const std::vector<LqAgent>& agents, bool normalize);

struct StochasticAsymptoticsRow {
  int n = 0;
  double c_lower = 0.0;
  double c_upper = 0.0;
  double c_star = 0.0;  // normalized MinMax
  double d = 0.0;       // max_i |d_i(c_star)|
  bool feasible = false;
};

StochasticAsymptoticsRow stochastic_asymptotics_row(const std::vector<LqAgent>& agents);
std::vector<StochasticAsymptoticsRow> stochastic_asymptotics_experiment(
    const std::vector<int>& n_list, const DynamicBounds& bounds, std::uint64_t seed);

}  // namespace svcg
