#include "svcg/lqg_layered.hpp"

#include <cmath>
#include <string>

#include "svcg/rng.hpp"

namespace svcg {

AffineSpace::AffineSpace(const Mat& variances)
    : AffineSpace(variances, Mat::Zero(variances.rows(), variances.cols()),
                  Eigen::Array<bool, -1, -1>::Constant(variances.rows(), variances.cols(), false)) {}

AffineSpace::AffineSpace(const Mat& variances, const Mat& fixed_values,
                         const Eigen::Array<bool, -1, -1>& fixed)
    : slot_col_(variances.rows(), variances.cols()), slot_value_(fixed_values) {
  if (fixed_values.rows() != variances.rows() || fixed_values.cols() != variances.cols() ||
      fixed.rows() != variances.rows() || fixed.cols() != variances.cols()) {
    throw ValidationError("affine space: shape mismatch");
  }
  std::vector<double> w;
  // column order: time slot major, agent minor
  for (Eigen::Index k = 0; k < variances.cols(); ++k) {
    for (Eigen::Index i = 0; i < variances.rows(); ++i) {
      if (fixed(i, k)) {
        slot_col_(i, k) = -1;
      } else {
        slot_col_(i, k) = static_cast<int>(w.size());
        w.push_back(variances(i, k));
      }
    }
  }
  w.push_back(1.0);
  weights_ = Eigen::Map<Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
}

AffineSpace AffineSpace::realized(const Mat& values) {
  return AffineSpace(Mat::Zero(values.rows(), values.cols()), values,
                     Eigen::Array<bool, -1, -1>::Constant(values.rows(), values.cols(), true));
}

AffineSpace AffineSpace::for_agents(const std::vector<LqAgent>& agents) {
  const int T = common_horizon(agents);
  Mat var(static_cast<Eigen::Index>(agents.size()), T);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    var(r, 0) = agents[i].init_variance;
    for (int k = 1; k < T; ++k) var(r, k) = agents[i].noise_variance;
  }
  return AffineSpace(var);
}

RowVec AffineSpace::slot(Eigen::Index agent, int k) const {
  RowVec f = RowVec::Zero(columns());
  const int col = slot_col_(agent, k);
  if (col < 0) {
    f[constant()] = slot_value_(agent, k);
  } else {
    f[col] = 1.0;
  }
  return f;
}

RowVec AffineSpace::constant_form(double value) const {
  RowVec f = RowVec::Zero(columns());
  f[constant()] = value;
  return f;
}

double AffineSpace::expect(const RowVec& f, const RowVec& g) const {
  return (f.array() * g.array() * weights_.transpose().array()).sum();
}

namespace {

void add_constant(Mat& m, const Vec& v, Eigen::Index col) { m.col(col) += v; }

Mat diag_times(const Vec& d, const Mat& m) { return d.asDiagonal() * m; }

}  // namespace

LayerLedger::LayerLedger(const std::vector<LqAgent>& model, const GainSchedule& gains,
                         const AffineSpace& space)
    : model_(model), gains_(&gains), space_(&space), horizon_(gains.horizon) {
  if (static_cast<Eigen::Index>(model.size()) != gains.agents) {
    throw ValidationError("ledger: model and gains disagree on agent count");
  }
  if (space.horizon() != horizon_) throw ValidationError("ledger: horizon mismatch with primitives");
  const auto T = static_cast<std::size_t>(horizon_);
  X_.assign(T, std::vector<Mat>(T));
  U_.assign(T, std::vector<Mat>(T));
  plan_x_.assign(T, space.zeros(gains.agents));
  plan_u_.assign(T, space.zeros(gains.agents));
}

void LayerLedger::apply_stage(int s, const Mat& bids) {
  if (s != next_stage_) {
    throw StageOrderError("ledger: stage " + std::to_string(s) + " applied out of order (expected " +
                          std::to_string(next_stage_) + ")");
  }
  const GainSchedule& g = *gains_;
  if (bids.rows() != g.agents || bids.cols() != space_->columns()) {
    throw ValidationError("ledger: bid dimension mismatch");
  }
  const Eigen::Index C = space_->constant();
  const auto ss = static_cast<std::size_t>(s);
  Vec inc = Vec::Zero(g.agents);

  // Layer s increment: the bid propagated by the closed loop. For s >= 1 this is
  // the new zero-noise plan from Y(s) minus the previous cumulative plan; the
  // affine feedforward and drives cancel in that difference and live in layer 0.
  Mat x = bids;
  for (int t = s; t < horizon_; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    Mat u = g.K[ts] * x;
    if (s == 0) add_constant(u, g.k[ts], C);
    for (Eigen::Index j = 0; j < g.agents; ++j) {
      const RowVec xr = x.row(j), ur = u.row(j);
      RowVec e_old = plan_x_[ts].row(j);
      e_old[C] -= g.x_target[j];
      const RowVec u_old = plan_u_[ts].row(j);
      // F(old + delta) - F(old)
      inc[j] += g.q[j] * (2.0 * space_->expect(e_old, xr) + space_->expect(xr, xr)) +
                g.r[j] * (2.0 * space_->expect(u_old, ur) + space_->expect(ur, ur)) +
                g.drive[j] * space_->mean(ur);
    }
    if (s == 0) {
      // old plan is empty; the x_target constant enters here
      for (Eigen::Index j = 0; j < g.agents; ++j) inc[j] += g.q[j] * g.x_target[j] * g.x_target[j];
    }
    X_[ss][ts] = x;
    U_[ss][ts] = u;
    plan_x_[ts] += x;
    plan_u_[ts] += u;
    Mat xn = diag_times(g.a, x) + diag_times(g.b, u);
    if (s == 0) add_constant(xn, g.exo[ts], C);
    x = std::move(xn);
  }
  bids_.push_back(bids);
  increments_.push_back(inc);
  ++next_stage_;
}

const Mat& LayerLedger::X(int s, int t) const {
  if (s < 0 || s >= next_stage_ || t < s || t >= horizon_) throw StageOrderError("ledger: X(s,t) not available");
  return X_[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)];
}

const Mat& LayerLedger::U(int s, int t) const {
  if (s < 0 || s >= next_stage_ || t < s || t >= horizon_) throw StageOrderError("ledger: U(s,t) not available");
  return U_[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)];
}

Vec LayerLedger::welfare_increment(int s) const {
  if (s < 0 || s >= next_stage_) throw StageOrderError("ledger: stage not applied yet");
  return increments_[static_cast<std::size_t>(s)];
}

RowVec LayerLedger::multiplier(int s, int t) const {
  if (t < s) throw StageOrderError("ledger: multiplier needs s <= t");
  RowVec lam = space_->constant_form(gains_->phi[static_cast<std::size_t>(t)]);
  for (int tau = 0; tau <= s; ++tau) lam += gains_->Phi[static_cast<std::size_t>(t)] * X(tau, t);
  return lam;
}

std::vector<Mat> truthful_bids(const std::vector<LqAgent>& truth, const AffineSpace& space) {
  const int T = space.horizon();
  const auto n = static_cast<Eigen::Index>(truth.size());
  std::vector<Mat> bids(static_cast<std::size_t>(T), space.zeros(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    bids[0].row(i) = space.slot(i, 0);
    bids[0](i, space.constant()) += truth[static_cast<std::size_t>(i)].x0;
    for (int s = 1; s < T; ++s) bids[static_cast<std::size_t>(s)].row(i) = space.slot(i, s);
  }
  return bids;
}

std::vector<Mat> true_state_forms(const std::vector<LqAgent>& truth, const AffineSpace& space,
                                  const std::vector<Mat>& controls) {
  const int T = space.horizon();
  const auto n = static_cast<Eigen::Index>(truth.size());
  std::vector<Mat> xs;
  Mat x = space.zeros(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = space.slot(i, 0);
    x(i, space.constant()) += truth[static_cast<std::size_t>(i)].x0;
  }
  for (int t = 0; t < T; ++t) {
    xs.push_back(x);
    if (t + 1 == T) break;
    Mat xn = x;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& g = truth[static_cast<std::size_t>(i)];
      xn.row(i) = g.a * x.row(i) + g.b * controls[static_cast<std::size_t>(t)].row(i) + space.slot(i, t + 1);
      xn(i, space.constant()) += g.exo(t);
    }
    x = std::move(xn);
  }
  return xs;
}

LayeredMechanism::LayeredMechanism(std::vector<LqAgent> reported, LayeredOptions options)
    : reported_(std::move(reported)), options_(options) {
  validate_lq_agents(reported_);
  if (!std::isfinite(options_.c)) throw ValidationError("scaling factor c must be finite");
  gains_ = compute_gains(reported_, options_.eliminated);
  if (options_.pivot == PivotKind::kClarke) {
    for (std::size_t i = 0; i < reported_.size(); ++i) {
      excl_models_.push_back(drop_agent(reported_, i));
      excl_gains_.push_back(compute_gains(excl_models_.back()));
    }
  }
}

LayeredRun LayeredMechanism::run(const std::vector<LqAgent>& truth, const AffineSpace& space,
                                 const std::vector<Mat>& bids) const {
  const auto n = static_cast<Eigen::Index>(reported_.size());
  const int T = gains_.horizon;
  if (static_cast<Eigen::Index>(truth.size()) != n) throw ValidationError("run: truth/report size mismatch");
  if (static_cast<int>(bids.size()) != T) throw ValidationError("run: need one bid per stage");

  LayerLedger main(reported_, gains_, space);
  for (int s = 0; s < T; ++s) main.apply_stage(s, bids[static_cast<std::size_t>(s)]);

  LayeredRun out;
  out.payments = Mat::Zero(n, T);
  Mat exclusion = Mat::Zero(n, T);
  if (options_.pivot == PivotKind::kClarke) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto is = static_cast<std::size_t>(i);
      LayerLedger shadow(excl_models_[is], excl_gains_[is], space);
      for (int s = 0; s < T; ++s) {
        const Mat& b = bids[static_cast<std::size_t>(s)];
        Mat rest(n - 1, b.cols());
        rest << b.topRows(i), b.bottomRows(n - 1 - i);
        shadow.apply_stage(s, rest);
        exclusion(i, s) = shadow.welfare_increment(s).sum();
      }
    }
  }
  for (int s = 0; s < T; ++s) {
    const Vec inc = main.welfare_increment(s);
    out.layered_welfare += inc.sum();
    for (Eigen::Index i = 0; i < n; ++i) {
      out.payments(i, s) = options_.c * exclusion(i, s) - (inc.sum() - inc[i]);
    }
  }

  for (int t = 0; t < T; ++t) {
    out.controls.push_back(main.plan_control(t));
    out.multipliers.push_back(main.multiplier(t, t));
  }
  out.true_states = true_state_forms(truth, space, out.controls);
  out.utilities = Vec::Zero(n);
  out.lagrange = Vec::Zero(n);
  for (int t = 0; t < T; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& g = truth[static_cast<std::size_t>(i)];
      RowVec e = out.true_states[ts].row(i);
      e[space.constant()] -= g.x_target;
      const RowVec u = out.controls[ts].row(i);
      out.utilities[i] += g.q * space.expect(e, e) + g.r * space.expect(u, u) + g.drive * space.mean(u);
      out.lagrange[i] += space.expect(out.multipliers[ts], u);
    }
  }
  out.rsw = out.utilities.sum();
  out.net = out.utilities - out.payments.rowwise().sum();
  return out;
}

double rsw_decompose_check(const LayeredRun& run) {
  if (run.controls.empty()) throw StageOrderError("rsw check: incomplete trajectory");
  return std::abs(run.rsw - run.layered_welfare);
}

StochasticOutcome closed_loop_moments(const std::vector<LqAgent>& agents, const GainSchedule& g) {
  const Eigen::Index n = g.agents;
  const int T = g.horizon;
  Vec mu(n), noise(n);
  Mat S = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ag = agents[static_cast<std::size_t>(i)];
    mu[i] = ag.x0;
    S(i, i) = ag.init_variance;
    noise[i] = ag.noise_variance;
  }
  StochasticOutcome out;
  out.utilities = Vec::Zero(n);
  out.lagrange = Vec::Zero(n);
  const Mat A = g.a.asDiagonal(), B = g.b.asDiagonal();
  for (int t = 0; t < T; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const Mat& K = g.K[ts];
    const Vec ubar = K * mu + g.k[ts];
    const Mat KS = K * S;
    const Vec uvar = (KS * K.transpose()).diagonal();
    const double lbar = g.Phi[ts].dot(mu) + g.phi[ts];
    const Vec cross = KS * g.Phi[ts].transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = mu[i] - g.x_target[i];
      out.utilities[i] += g.q[i] * (e * e + S(i, i)) + g.r[i] * (ubar[i] * ubar[i] + uvar[i]) +
                          g.drive[i] * ubar[i];
      out.lagrange[i] += lbar * ubar[i] + cross[i];
    }
    const Mat Acl = A + B * K;
    mu = Acl * mu + B * g.k[ts] + g.exo[ts];
    S = Acl * S * Acl.transpose();
    S.diagonal() += noise;
  }
  out.total_welfare = out.utilities.sum();
  return out;
}

StochasticOutcome stochastic_outcome(const std::vector<LqAgent>& agents) {
  validate_lq_agents(agents);
  StochasticOutcome out = closed_loop_moments(agents, compute_gains(agents));
  out.exclusion_welfares.resize(static_cast<Eigen::Index>(agents.size()));
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto rest = drop_agent(agents, i);
    out.exclusion_welfares[static_cast<Eigen::Index>(i)] =
        closed_loop_moments(rest, compute_gains(rest)).total_welfare;
  }
  return out;
}

ScalingInterval stochastic_scaling_interval(const StochasticOutcome& outcome) {
  return make_interval(outcome.total_welfare, outcome.exclusion_welfares);
}

ScalingInterval stochastic_scaling_interval(const std::vector<LqAgent>& agents) {
  return stochastic_scaling_interval(stochastic_outcome(agents));
}

DistortionTerms stochastic_distortion_terms(const StochasticOutcome& o) {
  return {o.lagrange, Vec::Constant(o.utilities.size(), o.total_welfare) - o.utilities,
          o.exclusion_welfares};
}

MinMaxResult stochastic_minmax_c(const std::vector<LqAgent>& agents, bool normalize) {
  const StochasticOutcome o = stochastic_outcome(agents);
  return minmax_over_interval(stochastic_distortion_terms(o), stochastic_scaling_interval(o), normalize);
}

StochasticAsymptoticsRow stochastic_asymptotics_row(const std::vector<LqAgent>& agents) {
  const StochasticOutcome o = stochastic_outcome(agents);
  const ScalingInterval iv = stochastic_scaling_interval(o);
  StochasticAsymptoticsRow row;
  row.n = static_cast<int>(agents.size());
  row.c_lower = iv.lower;
  row.c_upper = iv.upper;
  row.feasible = iv.mpb_holds && iv.lower <= iv.upper;
  if (!row.feasible) {
    row.c_star = row.d = std::nan("");
    return row;
  }
  const DistortionTerms terms = stochastic_distortion_terms(o);
  row.c_star = minmax_over_interval(terms, iv, true).c_star;
  row.d = distortions_at(terms, row.c_star, false).cwiseAbs().maxCoeff();
  return row;
}

std::vector<StochasticAsymptoticsRow> stochastic_asymptotics_experiment(
    const std::vector<int>& n_list, const DynamicBounds& bounds, std::uint64_t seed) {
  std::vector<StochasticAsymptoticsRow> rows;
  for (int n : n_list) {
    if (n < 3) throw ValidationError("asymptotics: every N must be at least 3");
    rows.push_back(stochastic_asymptotics_row(
        sample_lq_population(n, bounds, derive_seed(seed, static_cast<std::uint64_t>(n)))));
  }
  return rows;
}

}  // namespace svcg
